"""Classification metrics, MSE tables, band fidelity, CSV export."""

import numpy as np
import pytest

from eegvae import dsp
from eegvae import model as M
from eegvae.errors import DataError, DegenerateDataError, ParameterError, ShapeError
from eegvae.metrics import (MetricsReport, band_fidelity, channel_signal,
                            classification_metrics, export_reconstruction,
                            reconstruction_mse_table)


class TestClassificationMetrics:
    def test_perfect_agreement(self):
        acc, kappa = classification_metrics([0, 1, 2, 3, 1], [0, 1, 2, 3, 1])
        assert acc == 1.0 and kappa == 1.0

    def test_constant_predictor_uniform_labels(self):
        acc, kappa = classification_metrics([2] * 8, [0, 1, 2, 3] * 2)
        assert acc == 0.25
        assert kappa == 0.0

    def test_reference_vector(self):
        acc, kappa = classification_metrics([0, 0, 1, 1, 1], [0, 0, 1, 1, 0])
        assert acc == pytest.approx(0.8)
        assert abs(kappa - 8 / 13) < 1e-9

    def test_kappa_zero_when_po_equals_pe(self):
        # marginals 50/50 both sides, agreement exactly 0.5
        acc, kappa = classification_metrics([0, 1, 0, 1], [0, 0, 1, 1])
        assert acc == 0.5 and kappa == 0.0

    def test_accuracy_is_exact_ratio(self):
        preds = [0, 1, 2, 3, 0, 1, 2]
        labels = [0, 1, 2, 3, 1, 2, 3]
        acc, _ = classification_metrics(preds, labels)
        assert acc == 4 / 7

    def test_empty_input(self):
        with pytest.raises(DataError):
            classification_metrics([], [])

    def test_degenerate_same_point_mass(self):
        with pytest.raises(DegenerateDataError):
            classification_metrics([2, 2, 2], [2, 2, 2])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            classification_metrics([0, 1], [0, 1, 2])

    def test_class_out_of_range(self):
        with pytest.raises(DataError):
            classification_metrics([0, 4], [0, 1])
        with pytest.raises(DataError):
            classification_metrics([0, 1], [-1, 1])

    def test_pure_function(self):
        a = classification_metrics([0, 0, 1, 1, 1], [0, 0, 1, 1, 0])
        b = classification_metrics([0, 0, 1, 1, 1], [0, 0, 1, 1, 0])
        assert a == b


class TestReconstructionMseTable:
    def test_single_subject_constant(self):
        rows = reconstruction_mse_table({"S1": [1.0, 1.0, 1.0]})
        assert rows[0] == ("S1", 1.0, 0.0)

    def test_grand_avg_of_averages(self):
        rows = reconstruction_mse_table({"A": [2.0, 2.0], "B": [4.0]})
        by_label = {r[0]: r for r in rows}
        assert by_label["AVG"][1] == 3.0
        assert by_label["STD"][1] == 1.0   # population std of {2, 4}

    def test_nine_subject_layout(self):
        table = reconstruction_mse_table({f"S{i}": [float(i)] for i in range(1, 10)})
        assert len(table) == 11
        assert [r[0] for r in table[:9]] == [f"S{i}" for i in range(1, 10)]
        assert table[9][0] == "AVG" and table[10][0] == "STD"
        assert table[9][1] == 5.0

    def test_population_std_convention(self):
        rows = reconstruction_mse_table({"S": [1.0, 3.0]})
        assert rows[0][2] == 1.0   # ddof=0, not 2**0.5

    def test_empty_inputs(self):
        with pytest.raises(DataError):
            reconstruction_mse_table({})
        with pytest.raises(DataError):
            reconstruction_mse_table({"S": []})


def tone(freq, n=512, fs=128.0, amp=1.0, phase=0.0):
    t = np.arange(n) / fs
    return amp * np.sin(2 * np.pi * freq * t + phase)


class TestBandFidelity:
    def test_identity(self):
        x = tone(3.0) + tone(11.0)
        out = band_fidelity(x, x.copy(), (0.5, 4.0))
        assert out["pearson_r"] == pytest.approx(1.0, abs=1e-12)
        assert out["energy_ratio"] == 1.0

    def test_sign_flip(self):
        x = tone(3.0)
        out = band_fidelity(x, -x, (0.5, 4.0))
        assert out["pearson_r"] == pytest.approx(-1.0, abs=1e-12)
        assert out["energy_ratio"] == pytest.approx(1.0, rel=1e-12)

    def test_tone_pair_reference(self):
        x = tone(2.0) + tone(10.0)
        xh = tone(2.0)
        low = band_fidelity(x, xh, (0.5, 4.0))
        mid = band_fidelity(x, xh, (5.0, 20.0))
        assert low["pearson_r"] > 0.99
        assert mid["energy_ratio"] < 0.05

    def test_scale_awareness(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=512)
        xh = rng.normal(size=512) + 0.5 * x
        base = band_fidelity(x, xh, (5.0, 20.0))
        half = band_fidelity(x, 0.5 * xh, (5.0, 20.0))
        assert half["pearson_r"] == pytest.approx(base["pearson_r"], rel=1e-12)
        assert half["energy_ratio"] == pytest.approx(0.25 * base["energy_ratio"], rel=1e-9)

    def test_zero_variance_degenerate(self):
        with pytest.raises(DegenerateDataError):
            band_fidelity(np.zeros(512), tone(3.0), (0.5, 4.0))
        with pytest.raises(DegenerateDataError):
            band_fidelity(tone(3.0), np.zeros(512), (0.5, 4.0))

    def test_band_validation(self):
        x = tone(3.0)
        for band in ((4.0, 2.0), (0.0, 4.0), (5.0, 64.0), (-1.0, 4.0)):
            with pytest.raises(ParameterError):
                band_fidelity(x, x, band)

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            band_fidelity(np.zeros((2, 512)), np.zeros((2, 512)), (0.5, 4.0))
        with pytest.raises(ShapeError):
            band_fidelity(np.zeros(512), np.zeros(256), (0.5, 4.0))

    def test_deterministic(self):
        x = tone(2.0) + tone(9.0, amp=0.3)
        xh = tone(2.0, phase=0.2)
        a = band_fidelity(x, xh, (0.5, 4.0))
        b = band_fidelity(x, xh, (0.5, 4.0))
        assert a == b


class TestChannelSignal:
    def test_named_channel_row(self):
        trial = np.arange(22 * 8, dtype=float).reshape(22, 8)
        assert np.array_equal(channel_signal(trial, "Fz"), trial[0])
        assert np.array_equal(channel_signal(trial, "C3"), trial[7])

    def test_fcavg_is_mean_of_fc3_fc4(self):
        trial = np.random.default_rng(1).normal(size=(22, 16))
        got = channel_signal(trial, "FCavg")
        want = 0.5 * (trial[dsp.channel_index("FC3")] + trial[dsp.channel_index("FC4")])
        assert np.array_equal(got, want)

    def test_unknown_channel(self):
        with pytest.raises(ParameterError):
            channel_signal(np.zeros((22, 8)), "XX9")

    def test_bad_shape(self):
        with pytest.raises(ShapeError):
            channel_signal(np.zeros(22), "C3")


class TestMetricsReport:
    def test_json_key_order_and_trailing_newline(self):
        rep = MetricsReport(n_trials=2, accuracy=0.5, kappa=0.0, mse_avg=1.0,
                            mse_std=0.1, per_trial_mse=[0.9, 1.1],
                            band_fidelity={"0.5-4": {"pearson_r": 0.7,
                                                     "energy_ratio": 0.4}})
        text = rep.to_json()
        assert text.endswith("}\n")
        order = [text.index(f'"{k}"') for k in
                 ("n_trials", "accuracy", "kappa", "mse_avg", "mse_std",
                  "per_trial_mse", "band_fidelity")]
        assert order == sorted(order)

    def test_json_roundtrip(self):
        import json
        rep = MetricsReport(n_trials=1, accuracy=1.0, kappa=1.0,
                            mse_avg=0.5, mse_std=0.0, per_trial_mse=[0.5])
        doc = json.loads(rep.to_json())
        assert doc["accuracy"] == 1.0 and doc["per_trial_mse"] == [0.5]


@pytest.fixture(scope="module")
def export_setup():
    ds = dsp.synth_generate(dsp.SynthConfig(trials_per_class=1, seed=17))
    model = M.model_init("v1", M.default_configs("v1"), seed=2)
    return model, ds


def read_csv(path):
    lines = path.read_text().split("\n")
    assert lines[-1] == ""
    header, rows = lines[0], [ln.split(",") for ln in lines[1:-1]]
    return header, rows


class TestExportReconstruction:
    def test_single_channel_geometry(self, export_setup, tmp_path):
        model, ds = export_setup
        out = tmp_path / "one.csv"
        export_reconstruction(model, ds, 0, "C3", out)
        header, rows = read_csv(out)
        assert header == "time_s,channel,original,reconstructed"
        assert len(rows) == 512
        assert rows[0][0] == "0" and rows[0][1] == "C3"
        assert float(rows[-1][0]) == pytest.approx(511 / 128, rel=1e-5)

    def test_fcavg_is_mean_of_fc_rows(self, export_setup, tmp_path):
        model, ds = export_setup
        out = tmp_path / "three.csv"
        export_reconstruction(model, ds, 1, ["FC3", "FC4", "FCavg"], out)
        _, rows = read_csv(out)
        by: dict = {}
        for time_s, name, orig, rec in rows:
            by.setdefault(name, []).append((float(orig), float(rec)))
        for col in (0, 1):
            fc3 = np.array([v[col] for v in by["FC3"]])
            fc4 = np.array([v[col] for v in by["FC4"]])
            avg = np.array([v[col] for v in by["FCavg"]])
            assert np.allclose(avg, 0.5 * (fc3 + fc4), rtol=1e-4, atol=1e-4)

    def test_denormalization_roundtrip(self, tmp_path):
        raw = dsp.synth_generate(dsp.SynthConfig(trials_per_class=1, seed=23))
        norm = dsp.minmax_normalize(raw)
        model = M.model_init("v1", M.default_configs("v1"), seed=3)
        out = tmp_path / "denorm.csv"
        export_reconstruction(model, norm, 2, "Cz", out)
        _, rows = read_csv(out)
        exported = np.array([float(r[2]) for r in rows])
        original = raw.data[2][dsp.channel_index("Cz")].astype(np.float64)
        assert np.allclose(exported, original, rtol=1e-5, atol=1e-4)

    def test_deterministic_bytes(self, export_setup, tmp_path):
        model, ds = export_setup
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        export_reconstruction(model, ds, 0, ["C3", "FCavg"], a, eval_seed=4)
        export_reconstruction(model, ds, 0, ["C3", "FCavg"], b, eval_seed=4)
        assert a.read_bytes() == b.read_bytes()

    def test_validation(self, export_setup, tmp_path):
        model, ds = export_setup
        out = tmp_path / "bad.csv"
        with pytest.raises(ParameterError):
            export_reconstruction(model, ds, 99, "C3", out)
        with pytest.raises(ParameterError):
            export_reconstruction(model, ds, 0, "nope", out)
        with pytest.raises(ParameterError):
            export_reconstruction(model, ds, 0, [], out)
