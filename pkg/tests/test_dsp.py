import numpy as np
import numpy.testing as npt
import pytest

from eegvae import dsp
from eegvae.dsp import (
    CHANNEL_NAMES,
    EpochedDataset,
    RawRecording,
    SynthConfig,
    band_filter_1d,
    bandpower,
    channel_index,
    dataset_read,
    dataset_write,
    extract_epochs,
    fir_filter,
    minmax_normalize,
    resample_rational,
    synth_generate,
)
from eegvae.errors import (
    DataError,
    DegenerateDataError,
    FormatError,
    ParameterError,
    ShapeError,
)


def sine_recording(freqs, fs=250.0, seconds=8.0, amps=None, n_channels=22):
    t = np.arange(int(seconds * fs)) / fs
    amps = amps or [1.0] * len(freqs)
    x = sum(a * np.sin(2 * np.pi * f * t) for f, a in zip(freqs, amps))
    return RawRecording(np.tile(x, (n_channels, 1)), fs,
                        channel_names=CHANNEL_NAMES[:n_channels])


def fitted_amplitude(x, f, fs):
    """Least-squares amplitude of a known-frequency sinusoid."""
    t = np.arange(len(x)) / fs
    basis = np.stack([np.sin(2 * np.pi * f * t), np.cos(2 * np.pi * f * t)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
    return float(np.hypot(*coef))


def peak_frequency(x, fs):
    n = 1 << 18
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x)), n=n))
    return float(np.fft.rfftfreq(n, 1.0 / fs)[spec.argmax()])


class TestMontage:
    def test_pinned_channel_positions(self):
        assert CHANNEL_NAMES[1] == "FC3"
        assert CHANNEL_NAMES[5] == "FC4"
        assert CHANNEL_NAMES[7] == "C3"
        assert CHANNEL_NAMES[9] == "Cz"
        assert CHANNEL_NAMES[11] == "C4"
        assert len(CHANNEL_NAMES) == 22
        assert len(set(CHANNEL_NAMES)) == 22

    def test_channel_index(self):
        assert channel_index("C3") == 7
        with pytest.raises(ParameterError):
            channel_index("XX")


class TestRawRecording:
    def test_event_bounds_validated(self):
        with pytest.raises(DataError):
            RawRecording(np.zeros((22, 100)), 128.0, events=[(100, 0)])
        with pytest.raises(DataError):
            RawRecording(np.zeros((22, 100)), 128.0, events=[(5, 4)])

    def test_shape_and_fs_validated(self):
        with pytest.raises(ShapeError):
            RawRecording(np.zeros(100), 128.0)
        with pytest.raises(ParameterError):
            RawRecording(np.zeros((22, 10)), 0.0)


class TestFirFilter:
    def test_bandpass_passes_and_stops(self):
        rec = sine_recording([10.0, 120.0], fs=250.0, n_channels=2)
        out = fir_filter(rec, bandpass=(0.5, 100.0))
        mid = out.data[0][500:-500]
        assert abs(fitted_amplitude(mid, 10.0, 250.0) - 1.0) < 0.02
        assert fitted_amplitude(mid, 120.0, 250.0) < 0.01

    def test_notch_removes_line_keeps_neighbors(self):
        rec = sine_recording([30.0, 50.0], fs=250.0, n_channels=2)
        out = fir_filter(rec, notch=(50.0, 4.0))
        mid = out.data[0][500:-500]
        assert fitted_amplitude(mid, 50.0, 250.0) < 0.01
        assert abs(fitted_amplitude(mid, 30.0, 250.0) - 1.0) < 0.02

    def test_zero_phase(self):
        # a symmetric pulse stays centered after filtering
        data = np.zeros((1, 2001))
        data[0, 1000] = 1.0
        rec = RawRecording(data, 250.0, channel_names=("Fz",))
        out = fir_filter(rec, bandpass=(0.5, 100.0))
        assert abs(int(np.argmax(out.data[0])) - 1000) <= 1

    def test_linearity(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((3, 2000))
        b = rng.standard_normal((3, 2000))
        names = ("Fz", "Cz", "Pz")
        fa = fir_filter(RawRecording(a, 250.0, channel_names=names), bandpass=(1.0, 40.0)).data
        fb = fir_filter(RawRecording(b, 250.0, channel_names=names), bandpass=(1.0, 40.0)).data
        fab = fir_filter(RawRecording(2.0 * a - 3.0 * b, 250.0, channel_names=names),
                         bandpass=(1.0, 40.0)).data
        npt.assert_allclose(fab, 2.0 * fa - 3.0 * fb, rtol=1e-4, atol=1e-9)

    def test_edge_validation(self):
        rec = sine_recording([10.0], n_channels=2)
        with pytest.raises(ParameterError):
            fir_filter(rec, bandpass=(100.0, 0.5))
        with pytest.raises(ParameterError):
            fir_filter(rec, bandpass=(0.5, 130.0))  # above nyquist at 250
        with pytest.raises(ParameterError):
            fir_filter(rec, notch=(124.0, 4.0))
        with pytest.raises(ParameterError):
            fir_filter(rec)
        with pytest.raises(ParameterError):
            fir_filter(rec, bandpass=(1.0, 40.0), notch=(50.0, 2.0))

    def test_events_preserved(self):
        data = np.random.default_rng(1).standard_normal((22, 2000))
        rec = RawRecording(data, 250.0, events=[(100, 1), (900, 3)])
        out = fir_filter(rec, bandpass=(1.0, 40.0))
        assert out.events == [(100, 1), (900, 3)]
        assert out.fs == 250.0


class TestResample:
    def test_length_is_ceil(self):
        rec = sine_recording([10.0], fs=250.0, seconds=8.0, n_channels=2)
        out = resample_rational(rec, 64, 125)
        assert out.data.shape[-1] == int(np.ceil(2000 * 64 / 125))
        assert out.fs == 128.0

    def test_in_band_tone_survives(self):
        # amplitude within 1% and fitted frequency within 0.1 Hz
        for f in (1.0, 10.0, 25.0, 40.0):
            rec = sine_recording([f], fs=250.0, seconds=16.0, n_channels=1)
            rec = RawRecording(rec.data[:1], 250.0, channel_names=("Cz",))
            out = resample_rational(rec, 64, 125)
            mid = out.data[0][100:-100]
            assert abs(fitted_amplitude(mid, f, 128.0) - 1.0) < 0.01, f
            assert abs(peak_frequency(out.data[0], 128.0) - f) < 0.1, f

    def test_linearity(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((2, 1500))
        b = rng.standard_normal((2, 1500))
        names = ("Fz", "Cz")
        ra = resample_rational(RawRecording(a, 250.0, channel_names=names), 64, 125).data
        rb = resample_rational(RawRecording(b, 250.0, channel_names=names), 64, 125).data
        rab = resample_rational(RawRecording(a + 0.5 * b, 250.0, channel_names=names), 64, 125).data
        npt.assert_allclose(rab, ra + 0.5 * rb, rtol=1e-4, atol=1e-10)

    def test_identity_when_equal(self):
        rec = sine_recording([10.0], n_channels=2)
        out = resample_rational(rec, 1, 1)
        npt.assert_array_equal(out.data, rec.data)

    def test_event_remap(self):
        data = np.zeros((22, 1250))
        rec = RawRecording(data, 250.0, events=[(125, 0), (1000, 2)])
        out = resample_rational(rec, 64, 125)
        assert out.events == [(64, 0), (512, 2)]

    def test_factor_validation(self):
        rec = sine_recording([10.0], n_channels=2)
        with pytest.raises(ParameterError):
            resample_rational(rec, 64, 126)  # gcd 2
        with pytest.raises(ParameterError):
            resample_rational(rec, 0, 5)


class TestExtractEpochs:
    def make_recording(self, n=4096, events=((256, 0), (1024, 1), (2048, 3))):
        rng = np.random.default_rng(3)
        return RawRecording(rng.standard_normal((22, n)), 128.0, events=list(events))

    def test_geometry_and_values(self):
        rec = self.make_recording()
        ds = extract_epochs(rec)
        assert ds.data.shape == (3, 22, 512)
        npt.assert_allclose(ds.data[1], rec.data[:, 1024:1536].astype(np.float32))
        npt.assert_array_equal(ds.labels, [0, 1, 3])

    def test_offset_shifts_window(self):
        rec = self.make_recording()
        ds = extract_epochs(rec, offset_s=0.5)
        npt.assert_allclose(ds.data[0], rec.data[:, 320:832].astype(np.float32))

    def test_out_of_bounds_event_rejected(self):
        rec = self.make_recording(events=((3900, 0),))
        with pytest.raises(DataError):
            extract_epochs(rec)
        rec2 = self.make_recording(events=((10, 0),))
        with pytest.raises(DataError):
            extract_epochs(rec2, offset_s=-1.0)

    def test_wrong_fs_rejected(self):
        rec = RawRecording(np.zeros((22, 4096)), 250.0, events=[(100, 0)])
        with pytest.raises(ParameterError):
            extract_epochs(rec)

    def test_wrong_window_rejected(self):
        rec = self.make_recording()
        with pytest.raises(ParameterError):
            extract_epochs(rec, window_s=2.0)

    def test_no_events_rejected(self):
        rec = self.make_recording(events=())
        with pytest.raises(DataError):
            extract_epochs(rec)


class TestNormalize:
    def test_maps_extremes_exactly(self):
        ds = EpochedDataset(np.linspace(-40, 60, 22 * 512 * 2, dtype=np.float32)
                            .reshape(2, 22, 512), np.array([0, 1]))
        out = minmax_normalize(ds)
        assert out.data.min() == -1.0
        assert out.data.max() == 1.0
        assert out.normalized
        assert out.norm_min == pytest.approx(-40.0)
        assert out.norm_max == pytest.approx(60.0)

    def test_pure_function(self):
        data = np.random.default_rng(4).standard_normal((3, 22, 512)).astype(np.float32)
        ds = EpochedDataset(data.copy(), np.zeros(3, np.uint8))
        minmax_normalize(ds)
        npt.assert_array_equal(ds.data, data)
        assert not ds.normalized

    def test_idempotent_on_full_range_data(self):
        ds = EpochedDataset(np.random.default_rng(5).uniform(-30, 30, (2, 22, 512))
                            .astype(np.float32), np.array([1, 2]))
        once = minmax_normalize(ds)
        twice = minmax_normalize(once)
        npt.assert_allclose(twice.data, once.data, atol=1e-7)

    def test_degenerate_range_rejected(self):
        ds = EpochedDataset(np.full((2, 22, 512), 3.0, np.float32), np.array([0, 0]))
        with pytest.raises(DegenerateDataError):
            minmax_normalize(ds)


class TestSynth:
    def test_deterministic_and_balanced(self):
        cfg = SynthConfig(trials_per_class=4, seed=11)
        a = synth_generate(cfg)
        b = synth_generate(cfg)
        npt.assert_array_equal(a.data, b.data)
        npt.assert_array_equal(a.labels, b.labels)
        assert a.data.shape == (16, 22, 512)
        assert [int((a.labels == c).sum()) for c in range(4)] == [4, 4, 4, 4]

    def test_seed_changes_data(self):
        a = synth_generate(SynthConfig(trials_per_class=2, seed=1))
        b = synth_generate(SynthConfig(trials_per_class=2, seed=2))
        assert not np.array_equal(a.data, b.data)

    def test_slow_wave_polarity(self):
        # noiseless: positive peak near 0.2 s, negative near 0.8 s on the target
        cfg = SynthConfig(trials_per_class=1, noise_scale=0.0, seed=0)
        ds = synth_generate(cfg)
        trial = ds.data[0, channel_index("C4")]
        low = band_filter_1d(trial, 0.5, 4.0)
        t_pos = np.argmax(low[:256]) / 128.0
        t_neg = np.argmin(low) / 128.0
        assert 0.05 < t_pos < 0.45
        assert 0.5 < t_neg < 1.2

    def test_oscillation_in_class_band(self):
        cfg = SynthConfig(trials_per_class=2, noise_scale=0.0, seed=7)
        ds = synth_generate(cfg)
        for i in range(ds.n_trials):
            c = int(ds.labels[i])
            lo, hi = cfg.oscillation_bands[c]
            tgt = cfg.target_channels[c]
            rows = [channel_index("FC3"), channel_index("FC4")] if tgt == "FCavg" \
                else [channel_index(tgt)]
            x = ds.data[i, rows[0]]
            assert abs(peak_frequency(x - x.mean(), 128.0)) >= lo - 0.5
            assert bandpower(x, lo, hi) > 10 * bandpower(x, hi + 3.0, hi + 3.0 + (hi - lo))

    def test_nontarget_channels_are_noise_only(self):
        cfg = SynthConfig(trials_per_class=1, noise_scale=0.0, seed=3)
        ds = synth_generate(cfg)
        assert np.abs(ds.data[0, channel_index("Pz")]).max() == 0.0

    def test_bandpower_threshold_separates_each_class(self):
        cfg = SynthConfig(trials_per_class=8, seed=5)
        ds = synth_generate(cfg)
        for c in range(4):
            lo, hi = cfg.oscillation_bands[c]
            tgt = cfg.target_channels[c]
            rows = [channel_index("FC3"), channel_index("FC4")] if tgt == "FCavg" \
                else [channel_index(tgt)]
            scores = np.array([bandpower(ds.data[i, rows].mean(axis=0), lo, hi)
                               for i in range(ds.n_trials)])
            is_c = ds.labels == c
            # best single threshold between the two score populations
            order = np.argsort(scores)
            best = 0.0
            for k in range(1, ds.n_trials):
                thr = (scores[order[k - 1]] + scores[order[k]]) / 2.0
                acc = ((scores > thr) == is_c).mean()
                best = max(best, acc)
            assert best >= 0.9, f"class {c}: best separation {best}"

    def test_shared_noise_correlates_channels(self):
        cfg = SynthConfig(trials_per_class=4, mrcp_amplitude=0.0, seed=9)
        ds = synth_generate(cfg)
        rs = []
        for i in range(ds.n_trials):
            a = ds.data[i, channel_index("Fz")].astype(np.float64)
            b = ds.data[i, channel_index("POz")].astype(np.float64)
            rs.append(np.corrcoef(a, b)[0, 1])
        # shared-fraction 0.5 puts expected cross-correlation near 0.25
        assert 0.05 < np.mean(rs) < 0.5

    def test_config_validation(self):
        with pytest.raises(ParameterError):
            SynthConfig(trials_per_class=0)
        with pytest.raises(ParameterError):
            SynthConfig(noise_scale=-1.0)
        with pytest.raises(ParameterError):
            SynthConfig(oscillation_bands=((1, 2), (3, 4), (5, 6)))
        with pytest.raises(ParameterError):
            SynthConfig(oscillation_bands=((8, 6), (9, 11), (13, 15), (17, 19)))
        with pytest.raises(ParameterError):
            SynthConfig(target_channels=("C3", "C4", "Cz", "Fz"))


class TestContainer:
    def make_dataset(self, n=6, normalized=False):
        rng = np.random.default_rng(6)
        data = rng.uniform(-20, 20, (n, 22, 512)).astype(np.float32)
        ds = EpochedDataset(data, (np.arange(n) % 4).astype(np.uint8))
        return minmax_normalize(ds) if normalized else ds

    def test_roundtrip_bitwise(self, tmp_path):
        for normalized in (False, True):
            ds = self.make_dataset(normalized=normalized)
            path = str(tmp_path / f"ds_{normalized}.veeg")
            dataset_write(ds, path)
            back = dataset_read(path)
            npt.assert_array_equal(back.data, ds.data)
            npt.assert_array_equal(back.labels, ds.labels)
            assert back.normalized == ds.normalized
            assert back.fs == ds.fs
            assert np.float32(back.norm_min) == np.float32(ds.norm_min)
            assert np.float32(back.norm_max) == np.float32(ds.norm_max)

    def test_write_is_deterministic(self, tmp_path):
        ds = self.make_dataset()
        p1, p2 = str(tmp_path / "a.veeg"), str(tmp_path / "b.veeg")
        dataset_write(ds, p1)
        dataset_write(ds, p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_bad_magic_rejected(self, tmp_path):
        path = str(tmp_path / "bad.veeg")
        ds = self.make_dataset()
        dataset_write(ds, path)
        blob = bytearray(open(path, "rb").read())
        blob[:4] = b"NOPE"
        open(path, "wb").write(bytes(blob))
        with pytest.raises(FormatError, match="magic"):
            dataset_read(path)

    def test_bad_version_rejected(self, tmp_path):
        path = str(tmp_path / "bad.veeg")
        dataset_write(self.make_dataset(), path)
        blob = bytearray(open(path, "rb").read())
        blob[4:6] = (2).to_bytes(2, "little")
        open(path, "wb").write(bytes(blob))
        with pytest.raises(FormatError, match="version"):
            dataset_read(path)

    def test_truncation_rejected(self, tmp_path):
        path = str(tmp_path / "bad.veeg")
        dataset_write(self.make_dataset(), path)
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:-17])
        with pytest.raises(FormatError, match="truncated"):
            dataset_read(path)

    def test_wrong_geometry_rejected(self, tmp_path):
        path = str(tmp_path / "bad.veeg")
        dataset_write(self.make_dataset(), path)
        blob = bytearray(open(path, "rb").read())
        blob[12:16] = (21).to_bytes(4, "little")  # n_channels field
        open(path, "wb").write(bytes(blob))
        with pytest.raises(FormatError, match="n_channels"):
            dataset_read(path)

    def test_bad_label_rejected(self, tmp_path):
        path = str(tmp_path / "bad.veeg")
        ds = self.make_dataset(n=2)
        dataset_write(ds, path)
        blob = bytearray(open(path, "rb").read())
        blob[32] = 7  # first label byte, right after the 32-byte header
        open(path, "wb").write(bytes(blob))
        with pytest.raises(FormatError, match="label"):
            dataset_read(path)

    def test_in_memory_geometry_enforced_on_write(self, tmp_path):
        ds = EpochedDataset(np.zeros((2, 4, 64), np.float32), np.zeros(2, np.uint8))
        with pytest.raises(FormatError):
            dataset_write(ds, str(tmp_path / "x.veeg"))
