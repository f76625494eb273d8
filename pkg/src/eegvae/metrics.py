"""Evaluation metrics: accuracy, Cohen's kappa, MSE tables, band fidelity.

All functions here are pure; given the same inputs they produce the same
bytes.  Standard deviations use the population convention (divide by n).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dsp import FS_TARGET, band_filter_1d, bandpower, channel_index
from .errors import DataError, DegenerateDataError, ParameterError, ShapeError
from .rng import CounterRNG, derive

N_CLASSES = 4


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate evaluation result for one dataset split."""

    n_trials: int
    accuracy: float
    kappa: float
    mse_avg: float
    mse_std: float
    per_trial_mse: list = field(default_factory=list)
    band_fidelity: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        # fixed key order: the serialized form is part of the interface
        return {
            "n_trials": self.n_trials,
            "accuracy": self.accuracy,
            "kappa": self.kappa,
            "mse_avg": self.mse_avg,
            "mse_std": self.mse_std,
            "per_trial_mse": list(self.per_trial_mse),
            "band_fidelity": {band: dict(vals) for band, vals in self.band_fidelity.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def classification_metrics(preds, labels) -> tuple[float, float]:
    """(accuracy, Cohen's kappa) for 4-class predictions.

    kappa = (p_o - p_e) / (1 - p_e) with p_e from the marginal products.
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.ndim != 1 or labels.ndim != 1 or preds.shape != labels.shape:
        raise ShapeError(f"preds {preds.shape} and labels {labels.shape} must be "
                         "1-D and equal length")
    n = preds.shape[0]
    if n == 0:
        raise DataError("empty prediction list")
    for name, arr in (("preds", preds), ("labels", labels)):
        if arr.min() < 0 or arr.max() >= N_CLASSES:
            raise DataError(f"{name} must lie in [0, {N_CLASSES}), got range "
                            f"[{arr.min()}, {arr.max()}]")
    accuracy = int(np.sum(preds == labels)) / n
    cp = np.bincount(preds, minlength=N_CLASSES)
    cl = np.bincount(labels, minlength=N_CLASSES)
    p_e = float(np.dot(cp, cl)) / (n * n)
    if p_e == 1.0:
        raise DegenerateDataError("kappa undefined: both marginals are the same "
                                  "point mass (p_e == 1)")
    kappa = (accuracy - p_e) / (1.0 - p_e)
    return accuracy, kappa


def reconstruction_mse_table(per_subject) -> list:
    """Rows (subject, AVG, STD) plus grand rows aggregating subject averages.

    per_subject maps a subject label to its per-trial MSE list.  Each row
    carries the within-subject mean and population std; the final "AVG"
    and "STD" rows are the mean and population std over the per-subject
    columns (average-of-averages, not a pooled recomputation).
    """
    if not per_subject:
        raise DataError("no subjects supplied")
    rows = []
    for subject, mses in per_subject.items():
        arr = np.asarray(mses, dtype=np.float64)
        if arr.size == 0:
            raise DataError(f"subject {subject!r} has no trials")
        rows.append((str(subject), float(arr.mean()), float(arr.std())))
    avgs = np.array([r[1] for r in rows])
    stds = np.array([r[2] for r in rows])
    rows.append(("AVG", float(avgs.mean()), float(stds.mean())))
    rows.append(("STD", float(avgs.std()), float(stds.std())))
    return rows


def band_fidelity(x, x_hat, band, fs: float = FS_TARGET) -> dict:
    """Correlation and energy ratio of two signals restricted to a band.

    Both signals pass through the same zero-phase FIR band-pass;
    pearson_r compares the band-limited pair, energy_ratio is
    bandpower(x_hat) / bandpower(x) over the band.
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.ndim != 1 or x.shape != x_hat.shape:
        raise ShapeError(f"signals must be 1-D and equal length, got {x.shape} "
                         f"vs {x_hat.shape}")
    lo, hi = band
    if not (0 < lo < hi < fs / 2):
        raise ParameterError(f"band must satisfy 0 < lo < hi < fs/2, got {band}")
    xf = band_filter_1d(x, lo, hi, fs)
    yf = band_filter_1d(x_hat, lo, hi, fs)
    sx = xf.std()
    sy = yf.std()
    if sx == 0 or sy == 0:
        raise DegenerateDataError("band-limited signal has zero variance")
    r = float(np.mean((xf - xf.mean()) * (yf - yf.mean())) / (sx * sy))
    px = bandpower(xf, lo, hi, fs)
    if px == 0:
        raise DegenerateDataError("band-limited reference has zero band power")
    return {"pearson_r": r, "energy_ratio": bandpower(yf, lo, hi, fs) / px}


def channel_signal(trial: np.ndarray, name: str) -> np.ndarray:
    """One channel of a (channels, samples) trial; "FCavg" = mean(FC3, FC4)."""
    trial = np.asarray(trial)
    if trial.ndim != 2:
        raise ShapeError(f"trial must be (channels, samples), got {trial.shape}")
    if name == "FCavg":
        return 0.5 * (trial[channel_index("FC3")] + trial[channel_index("FC4")])
    return trial[channel_index(name)]


def _denorm(values: np.ndarray, ds) -> np.ndarray:
    if not ds.normalized:
        return values
    half_span = 0.5 * (ds.norm_max - ds.norm_min)
    return (values + 1.0) * half_span + ds.norm_min


def export_reconstruction(model, dataset, trial: int, channels, path,
                          eval_seed: int = 0) -> None:
    """CSV of original vs reconstructed traces for one trial.

    Columns: time_s, channel, original, reconstructed; one row per sample
    per channel, 6 significant digits, "\\n" line endings.  Normalized
    datasets are mapped back to the raw scale with the stored (min, max).
    The reconstruction uses the same per-trial noise stream as evaluate,
    so exported traces match the evaluated ones.
    """
    from . import tensor as T
    from .model import model_forward

    n = dataset.data.shape[0]
    if not 0 <= trial < n:
        raise ParameterError(f"trial {trial} out of range [0, {n})")
    if isinstance(channels, str):
        channels = [channels]
    if not channels:
        raise ParameterError("no channels requested")

    eps = CounterRNG(derive(eval_seed, trial)).gaussian(model.config.latent_dim)
    eps = eps.astype(np.float32)[None, :]
    x = dataset.data[trial][None, None, :, :]
    with T.no_grad():
        x_hat, _, _ = model_forward(model, T.tensor(x), training=False, eps=eps)
    orig = _denorm(dataset.data[trial].astype(np.float64), dataset)
    recon = _denorm(x_hat.data[0, 0].astype(np.float64), dataset)

    n_samples = orig.shape[1]
    lines = ["time_s,channel,original,reconstructed"]
    for name in channels:
        o = channel_signal(orig, name)
        r = channel_signal(recon, name)
        for t in range(n_samples):
            lines.append(f"{t / dataset.fs:.6g},{name},{o[t]:.6g},{r[t]:.6g}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
