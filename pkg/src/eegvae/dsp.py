"""Signal plumbing: recordings, filtering, resampling, epoching, synthesis.

The processing chain mirrors a standard motor-imagery pipeline: a continuous
multichannel recording in microvolts is band-filtered (zero-phase FIR),
resampled to 128 Hz by a rational factor, cut into 4 s epochs around cue
events, and optionally min-max normalized into [-1, 1].

A synthetic generator produces class-separable 22 x 512 epochs from scratch:
a slow positive-then-negative wave plus a class-band oscillation on a
class-specific sensor, buried in spatially correlated pink noise.  Every trial
is a pure function of (seed, trial index), so datasets are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as sps

from .errors import DataError, DegenerateDataError, FormatError, ParameterError, ShapeError
from .rng import CounterRNG, derive

FS_TARGET = 128.0
N_CHANNELS = 22
N_SAMPLES = 512

# 22-sensor motor-cortex montage; FC3/FC4, C3/Cz/C4 carry the class targets.
CHANNEL_NAMES = (
    "Fz", "FC3", "FC1", "FCz", "FC2", "FC4",
    "C5", "C3", "C1", "Cz", "C2", "C4", "C6",
    "CP3", "CP1", "CPz", "CP2", "CP4",
    "P1", "Pz", "P2", "POz",
)


def channel_index(name: str) -> int:
    try:
        return CHANNEL_NAMES.index(name)
    except ValueError:
        raise ParameterError(f"unknown channel name {name!r}") from None


@dataclass
class RawRecording:
    """Continuous recording: data (channels, samples) in microvolts."""

    data: np.ndarray
    fs: float
    events: list = field(default_factory=list)   # (sample_index, class_label)
    channel_names: tuple = CHANNEL_NAMES

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ShapeError(f"recording data must be (channels, samples), got {self.data.shape}")
        if len(self.channel_names) != self.data.shape[0]:
            raise ShapeError(
                f"{len(self.channel_names)} channel names for {self.data.shape[0]} rows")
        if not self.fs > 0:
            raise ParameterError(f"sampling rate must be > 0, got {self.fs}")
        n = self.data.shape[1]
        for k, (samp, label) in enumerate(self.events):
            if not 0 <= samp < n:
                raise DataError(f"event {k} at sample {samp} outside recording of {n} samples")
            if not 0 <= label <= 3:
                raise DataError(f"event {k} has label {label}, expected 0..3")


@dataclass
class EpochedDataset:
    """Fixed-geometry trials: data (trials, channels, samples) float32."""

    data: np.ndarray
    labels: np.ndarray
    fs: float = FS_TARGET
    normalized: bool = False
    norm_min: float = 0.0
    norm_max: float = 0.0
    subject_id: int | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.data.ndim != 3:
            raise ShapeError(f"epoched data must be (trials, channels, samples), got {self.data.shape}")
        if self.labels.shape != (self.data.shape[0],):
            raise ShapeError(
                f"{self.labels.shape[0] if self.labels.ndim == 1 else self.labels.shape} labels "
                f"for {self.data.shape[0]} trials")
        if self.labels.size and self.labels.max() > 3:
            raise DataError(f"labels must be 0..3, found {int(self.labels.max())}")
        if not self.fs > 0:
            raise ParameterError(f"sampling rate must be > 0, got {self.fs}")
        if self.normalized:
            if not self.norm_max > self.norm_min:
                raise DataError("normalized dataset needs norm_max > norm_min")
            if self.data.size and (self.data.min() < -1.0 or self.data.max() > 1.0):
                raise DataError("normalized dataset has values outside [-1, 1]")

    @property
    def n_trials(self) -> int:
        return self.data.shape[0]


# ------------------------------------------------------------- filtering

def _fir_taps(fs: float, edges, pass_zero) -> np.ndarray:
    # Hamming windowed-sinc sized for a ~1 Hz transition band.
    numtaps = int(np.ceil(3.3 * fs / 1.0))
    if numtaps % 2 == 0:
        numtaps += 1
    return sps.firwin(numtaps, edges, pass_zero=pass_zero, window="hamming", fs=fs)


def _zero_phase(data: np.ndarray, taps: np.ndarray) -> np.ndarray:
    padlen = min(data.shape[-1] - 1, 3 * len(taps))
    return sps.filtfilt(taps, [1.0], data, axis=-1, padtype="even", padlen=padlen)


def fir_filter(rec: RawRecording, bandpass=None, notch=None) -> RawRecording:
    """Zero-phase FIR filter; pass exactly one of bandpass=(lo, hi) or notch=(f0, bw)."""
    if (bandpass is None) == (notch is None):
        raise ParameterError("pass exactly one of bandpass=(lo, hi) or notch=(f0, bw)")
    nyq = rec.fs / 2.0
    if bandpass is not None:
        lo, hi = bandpass
        if not 0 < lo < hi < nyq:
            raise ParameterError(f"bandpass edges must satisfy 0 < lo < hi < {nyq}, got {bandpass}")
        taps = _fir_taps(rec.fs, [lo, hi], "bandpass")
    else:
        f0, bw = notch
        lo, hi = f0 - bw / 2.0, f0 + bw / 2.0
        if not 0 < lo < hi < nyq:
            raise ParameterError(f"notch ({f0}, bw {bw}) leaves {nyq} Hz band, edges ({lo}, {hi})")
        taps = _fir_taps(rec.fs, [lo, hi], "bandstop")
    return replace(rec, data=_zero_phase(rec.data, taps), events=list(rec.events))


def band_filter_1d(x: np.ndarray, lo: float, hi: float, fs: float = FS_TARGET) -> np.ndarray:
    """Zero-phase bandpass of a single trace; used for band-fidelity metrics."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"band_filter_1d expects a 1-d trace, got {x.shape}")
    if not 0 < lo < hi < fs / 2.0:
        raise ParameterError(f"band edges must satisfy 0 < lo < hi < {fs / 2}, got ({lo}, {hi})")
    return _zero_phase(x, _fir_taps(fs, [lo, hi], "bandpass"))


def bandpower(x: np.ndarray, lo: float, hi: float, fs: float = FS_TARGET) -> float:
    """Hann-window periodogram power summed over [lo, hi]."""
    f, psd = sps.periodogram(np.asarray(x, dtype=np.float64), fs=fs, window="hann")
    sel = (f >= lo) & (f <= hi)
    return float(psd[sel].sum())


# ------------------------------------------------------------ resampling

def resample_rational(rec: RawRecording, p: int, q: int) -> RawRecording:
    """Polyphase resampling by p/q with an explicit Hamming anti-alias filter.

    Event sample indices are remapped by rounding s * p / q.
    """
    if p < 1 or q < 1:
        raise ParameterError(f"resample factors must be >= 1, got {p}/{q}")
    if np.gcd(p, q) != 1:
        raise ParameterError(f"resample factors must be coprime, got {p}/{q}")
    if p == q:
        return replace(rec, data=rec.data.copy(), events=list(rec.events))
    m = max(p, q)
    taps = sps.firwin(2 * 10 * m + 1, 1.0 / m, window="hamming")
    out = sps.resample_poly(rec.data, p, q, axis=-1, window=taps)
    n_out = out.shape[-1]
    events = [(min(int(round(s * p / q)), n_out - 1), lab) for s, lab in rec.events]
    return RawRecording(out, rec.fs * p / q, events, rec.channel_names)


# -------------------------------------------------------------- epoching

def extract_epochs(rec: RawRecording, window_s: float = 4.0, offset_s: float = 0.0) -> EpochedDataset:
    """Cut (22, 512) windows starting offset_s after each event."""
    if abs(rec.fs - FS_TARGET) > 1e-6:
        raise ParameterError(f"epoch extraction expects fs={FS_TARGET}, got {rec.fs}; resample first")
    if rec.data.shape[0] != N_CHANNELS:
        raise DataError(f"epoch extraction expects {N_CHANNELS} channels, got {rec.data.shape[0]}")
    n = int(round(window_s * rec.fs))
    if n != N_SAMPLES:
        raise ParameterError(f"window of {window_s}s at {rec.fs} Hz gives {n} samples, need {N_SAMPLES}")
    if not rec.events:
        raise DataError("recording has no events to epoch around")
    off = int(round(offset_s * rec.fs))
    total = rec.data.shape[1]
    trials = np.empty((len(rec.events), N_CHANNELS, N_SAMPLES), dtype=np.float32)
    labels = np.empty(len(rec.events), dtype=np.uint8)
    for k, (samp, label) in enumerate(rec.events):
        start = samp + off
        if start < 0 or start + n > total:
            raise DataError(
                f"event {k} at sample {samp} (offset {off}) needs [{start}, {start + n}) "
                f"but recording has {total} samples")
        trials[k] = rec.data[:, start:start + n]
        labels[k] = label
    return EpochedDataset(trials, labels, fs=FS_TARGET)


def minmax_normalize(ds: EpochedDataset) -> EpochedDataset:
    """Map the dataset range onto [-1, 1]; stores the pre-normalization extrema."""
    if ds.data.size == 0:
        raise DataError("cannot normalize an empty dataset")
    lo = float(ds.data.min())
    hi = float(ds.data.max())
    if not hi > lo:
        raise DegenerateDataError(f"degenerate range: min == max == {lo}")
    data = 2.0 * (ds.data - np.float32(lo)) / np.float32(hi - lo) - 1.0
    return EpochedDataset(data.astype(np.float32), ds.labels.copy(), fs=ds.fs,
                          normalized=True, norm_min=lo, norm_max=hi,
                          subject_id=ds.subject_id)


# -------------------------------------------------------------- synthesis

VALID_TARGETS = ("C3", "C4", "Cz", "FCavg")


@dataclass
class SynthConfig:
    """Knobs for the synthetic motor-imagery generator.

    Class c places a slow wave (positive peak at 0.2 s, negative at 0.8 s,
    amplitude mrcp_amplitude) plus a sinusoid drawn from oscillation_bands[c]
    (amplitude fixed at half the slow-wave amplitude, random phase) on
    target_channels[c]; the 'FCavg' target writes to both FC3 and FC4.
    """

    trials_per_class: int = 64
    noise_scale: float = 2.0
    mrcp_amplitude: float = 8.0
    oscillation_bands: tuple = ((6.0, 8.0), (9.0, 11.0), (13.0, 15.0), (17.0, 19.0))
    target_channels: tuple = ("C4", "C3", "Cz", "FCavg")
    seed: int = 0

    def __post_init__(self):
        if self.trials_per_class < 1:
            raise ParameterError(f"trials_per_class must be >= 1, got {self.trials_per_class}")
        if self.noise_scale < 0:
            raise ParameterError(f"noise_scale must be >= 0, got {self.noise_scale}")
        if self.mrcp_amplitude < 0:
            raise ParameterError(f"mrcp_amplitude must be >= 0, got {self.mrcp_amplitude}")
        if len(self.oscillation_bands) != 4:
            raise ParameterError("oscillation_bands needs one (lo, hi) pair per class")
        for c, (lo, hi) in enumerate(self.oscillation_bands):
            if not 0 < lo < hi < FS_TARGET / 2:
                raise ParameterError(f"class {c} band ({lo}, {hi}) must satisfy 0 < lo < hi < 64")
        if len(self.target_channels) != 4:
            raise ParameterError("target_channels needs one sensor per class")
        for c, name in enumerate(self.target_channels):
            if name not in VALID_TARGETS:
                raise ParameterError(f"class {c} target {name!r} not in {VALID_TARGETS}")


_SHARED_MIX = 0.5  # fraction of pink noise common to all channels


def _pink_from_gaussians(g: np.ndarray, n: int = N_SAMPLES) -> np.ndarray:
    """Real pink (1/f amplitude) noise from 2*(n/2) gaussians per trace."""
    half = n // 2
    lead = g.shape[:-1]
    re = g[..., :half]
    im = g[..., half:]
    freqs = np.fft.rfftfreq(n, d=1.0 / FS_TARGET)
    spec = np.zeros(lead + (half + 1,), dtype=np.complex128)
    spec[..., 1:] = (re + 1j * im) / np.sqrt(freqs[1:])
    return np.fft.irfft(spec, n=n, axis=-1)


def synth_generate(cfg: SynthConfig) -> EpochedDataset:
    """4 * trials_per_class epochs, class of trial i = i % 4."""
    n_trials = 4 * cfg.trials_per_class
    t = np.arange(N_SAMPLES) / FS_TARGET
    mrcp_shape = (np.exp(-0.5 * ((t - 0.2) / 0.15) ** 2)
                  - np.exp(-0.5 * ((t - 0.8) / 0.30) ** 2))
    data = np.zeros((n_trials, N_CHANNELS, N_SAMPLES), dtype=np.float64)
    labels = (np.arange(n_trials) % 4).astype(np.uint8)
    half = N_SAMPLES // 2
    for i in range(n_trials):
        c = int(labels[i])
        rng = CounterRNG(derive(cfg.seed, i))
        lo, hi = cfg.oscillation_bands[c]
        freq = rng.uniform(1, lo, hi)[0]
        phase = rng.uniform(1, 0.0, 2.0 * np.pi)[0]
        shared = _pink_from_gaussians(rng.gaussian(2 * half))
        own = _pink_from_gaussians(rng.gaussian(N_CHANNELS * 2 * half).reshape(N_CHANNELS, 2 * half))
        noise = _SHARED_MIX * shared + np.sqrt(1.0 - _SHARED_MIX ** 2) * own
        if cfg.noise_scale > 0:
            rms = np.sqrt((noise ** 2).mean(axis=-1, keepdims=True))
            noise *= cfg.noise_scale / rms
            data[i] = noise
        template = cfg.mrcp_amplitude * (mrcp_shape + 0.5 * np.sin(2 * np.pi * freq * t + phase))
        target = cfg.target_channels[c]
        rows = (channel_index("FC3"), channel_index("FC4")) if target == "FCavg" \
            else (channel_index(target),)
        for r in rows:
            data[i, r] += template
    return EpochedDataset(data.astype(np.float32), labels, fs=FS_TARGET)


# ------------------------------------------------------------- container

_MAGIC = b"VEEG"
_HEADER = "<4sHHIIIfff"  # magic, version, flags, trials, channels, samples, fs, min, max
_FLAG_NORMALIZED = 0x0001


def dataset_write(ds: EpochedDataset, path: str):
    """Little-endian container: header, labels u8, data f32 trial-major."""
    import struct

    if ds.data.shape[1:] != (N_CHANNELS, N_SAMPLES):
        raise FormatError(
            f"container is fixed-geometry {N_CHANNELS} x {N_SAMPLES}, got {ds.data.shape[1:]}")
    flags = _FLAG_NORMALIZED if ds.normalized else 0
    header = struct.pack(_HEADER, _MAGIC, 1, flags, ds.n_trials, N_CHANNELS, N_SAMPLES,
                         float(ds.fs), float(ds.norm_min), float(ds.norm_max))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(ds.labels.astype("<u1").tobytes())
        fh.write(ds.data.astype("<f4").tobytes())


def dataset_read(path: str) -> EpochedDataset:
    import struct

    with open(path, "rb") as fh:
        blob = fh.read()
    hsize = struct.calcsize(_HEADER)
    if len(blob) < hsize:
        raise FormatError(f"file too short for header: {len(blob)} bytes")
    magic, version, flags, n_trials, n_ch, n_samp, fs, nmin, nmax = struct.unpack_from(_HEADER, blob)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    if version != 1:
        raise FormatError(f"unsupported version {version}")
    if flags & ~_FLAG_NORMALIZED:
        raise FormatError(f"unknown flag bits 0x{flags:04x}")
    if n_ch != N_CHANNELS:
        raise FormatError(f"n_channels={n_ch}, container is fixed at {N_CHANNELS}")
    if n_samp != N_SAMPLES:
        raise FormatError(f"n_samples={n_samp}, container is fixed at {N_SAMPLES}")
    need = hsize + n_trials + n_trials * n_ch * n_samp * 4
    if len(blob) != need:
        raise FormatError(f"truncated data: {len(blob)} bytes, expected {need}")
    labels = np.frombuffer(blob, dtype="<u1", count=n_trials, offset=hsize)
    if labels.size and labels.max() > 3:
        raise FormatError(f"labels must be 0..3, found {int(labels.max())}")
    data = np.frombuffer(blob, dtype="<f4", count=n_trials * n_ch * n_samp,
                         offset=hsize + n_trials).reshape(n_trials, n_ch, n_samp)
    return EpochedDataset(data.copy(), labels.copy(), fs=fs,
                          normalized=bool(flags & _FLAG_NORMALIZED),
                          norm_min=nmin, norm_max=nmax)
