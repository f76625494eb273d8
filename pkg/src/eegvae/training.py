"""Joint VAE + classifier training: losses, AdamW, and the epoch loops.

The total objective is the unweighted sum of three parts: per-element
reconstruction MSE, the closed-form Gaussian KL against the unit prior,
and the NLL of the true class under the classifier's log-probabilities.
Everything is deterministic given (seed, single BLAS thread): shuffling,
dropout masks, and reparameterization noise all come from counter-mode
streams derived from the config seed.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, OptimizerError, ParameterError, ShapeError
from .metrics import MetricsReport, band_fidelity, channel_signal, classification_metrics
from .model import EEGVAE, model_forward
from .rng import CounterRNG, derive


@dataclass(frozen=True)
class LossBreakdown:
    """One loss measurement split into its three parts.

    l_total is always recomputed as l_r + l_kl + l_clf from the stored
    parts (float64), so the decomposition holds bitwise.
    """

    l_r: float
    l_kl: float
    l_clf: float
    l_total: float

    @classmethod
    def from_parts(cls, l_r: float, l_kl: float, l_clf: float) -> "LossBreakdown":
        l_r = float(l_r)
        l_kl = float(l_kl)
        l_clf = float(l_clf)
        return cls(l_r=l_r, l_kl=l_kl, l_clf=l_clf, l_total=l_r + l_kl + l_clf)

    def to_dict(self) -> dict:
        return {"l_r": self.l_r, "l_kl": self.l_kl,
                "l_clf": self.l_clf, "l_total": self.l_total}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    lr: float = 0.001
    weight_decay: float = 0.00001
    batch_size: int = 32
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        # lr == 0 is allowed: a zero step size is a useful sanity probe
        if self.lr < 0:
            raise ParameterError(f"lr must be >= 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ParameterError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        b1, b2 = self.betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ParameterError(f"betas must lie in [0, 1), got {self.betas}")
        if not self.eps > 0:
            raise ParameterError(f"eps must be > 0, got {self.eps}")


def kl_divergence(mu: T.Tensor, log_var: T.Tensor) -> T.Tensor:
    """KL(N(mu, sigma^2 I) || N(0, I)), summed over latent dims, batch mean.

    0.5 * sum_i (exp(log_var_i) + mu_i^2 - 1 - log_var_i).  Built from
    recorded ops so gradients flow to both arguments.
    """
    if mu.data.shape != log_var.data.shape:
        raise ShapeError(f"mu {mu.data.shape} and log_var {log_var.data.shape} differ")
    term = T.sub(T.add(T.exp(log_var), T.mul(mu, mu)), T.add(log_var, 1.0))
    return T.mul(T.tmean(T.tsum(term, axis=1)), 0.5)


def compute_losses(x: T.Tensor, x_hat: T.Tensor, log_probs: T.Tensor,
                   labels: np.ndarray, code) -> tuple[T.Tensor, LossBreakdown]:
    """Total loss tensor (for backward) plus the float breakdown.

    l_r is the mean over all batch elements of (x - x_hat)^2; l_clf the
    mean NLL of the true labels; l_kl per kl_divergence.  The reported
    l_kl is clamped at zero against float rounding (the math is >= 0);
    the graph tensor is left untouched.
    """
    if x.data.shape != x_hat.data.shape:
        raise ShapeError(f"x {x.data.shape} vs x_hat {x_hat.data.shape}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != x.data.shape[0]:
        raise ShapeError(f"labels shape {labels.shape} does not match batch {x.data.shape[0]}")
    n_classes = log_probs.data.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"labels must lie in [0, {n_classes}), got range "
                        f"[{labels.min()}, {labels.max()}]")
    diff = T.sub(x_hat, x)
    l_r = T.tmean(T.mul(diff, diff))
    l_kl = kl_divergence(code.mu, code.log_var)
    l_clf = T.neg(T.tmean(T.take_per_row(log_probs, labels.astype(np.int64))))
    total = T.add(T.add(l_r, l_kl), l_clf)
    parts = LossBreakdown.from_parts(float(l_r.data), max(float(l_kl.data), 0.0),
                                     float(l_clf.data))
    return total, parts


@dataclass
class AdamWState:
    """First/second moment accumulators, keyed like the param dict."""

    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: AdamWState, cfg: TrainConfig) -> None:
    """One decoupled-weight-decay Adam update, in place on the param arrays.

    Decay applies only to names ending in ".w" (conv and linear weights);
    biases and batch-norm gamma/beta are excluded.
    """
    b1, b2 = cfg.betas
    state.t += 1
    t = state.t
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if cfg.weight_decay and name.endswith(".w"):
            step = step + cfg.lr * cfg.weight_decay * theta
        theta -= step.astype(theta.dtype, copy=False)


def _check_geometry(model: EEGVAE, data: np.ndarray) -> None:
    want = (model.config.channels, model.config.samples)
    if data.ndim != 3 or data.shape[1:] != want:
        raise ConfigError(f"dataset geometry {data.shape[1:]} does not match "
                          f"model ({want[0]}, {want[1]})")


def train(model: EEGVAE, dataset, cfg: TrainConfig,
          log_path=None) -> tuple[EEGVAE, list[LossBreakdown]]:
    """Joint training loop; returns the model and per-epoch mean losses.

    Per-epoch means are batch-size weighted so partial tail batches count
    by their true size.  When log_path is given, one JSON object per
    epoch is appended: {"epoch", "l_r", "l_kl", "l_clf", "l_total"}.

    Note: model_init and train both derive streams from their seed, so
    give them distinct seeds (e.g. derive(seed, 0) / derive(seed, 1)) if
    initialization and shuffling must be independent.
    """
    _check_geometry(model, dataset.data)
    n = dataset.data.shape[0]
    if n < 1:
        raise DataError("training set is empty")
    if model.variant == "v2" and not dataset.normalized:
        warnings.warn("v2 expects min-max normalized input; dataset is raw", stacklevel=2)

    pdata = {name: t.data for name, t in model.params.items()}
    state = AdamWState()
    history: list[LossBreakdown] = []
    log = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(cfg.epochs):
            if cfg.shuffle:
                order = CounterRNG(derive(cfg.seed, epoch)).permutation(n)
            else:
                order = np.arange(n)
            sums = np.zeros(3)
            for step, start in enumerate(range(0, n, cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                xt = T.tensor(dataset.data[idx][:, None, :, :])
                x_hat, log_probs, code = model_forward(
                    model, xt, training=True, seed=derive(cfg.seed, epoch, step))
                total, parts = compute_losses(xt, x_hat, log_probs,
                                              dataset.labels[idx], code)
                total.backward()
                grads = {name: t.grad for name, t in model.params.items()}
                adamw_step(pdata, grads, state, cfg)
                model.zero_grad()
                sums += len(idx) * np.array([parts.l_r, parts.l_kl, parts.l_clf])
            epoch_parts = LossBreakdown.from_parts(*(sums / n))
            history.append(epoch_parts)
            if log is not None:
                log.write(json.dumps({"epoch": epoch, **epoch_parts.to_dict()}) + "\n")
    finally:
        if log is not None:
            log.close()
    return model, history


_DEFAULT_BANDS = ((0.5, 4.0), (5.0, 20.0))


def _fidelity_channel_for(fidelity_channel, label: int):
    if fidelity_channel is None or isinstance(fidelity_channel, str):
        return fidelity_channel
    return fidelity_channel[int(label)]


def evaluate(model: EEGVAE, dataset, *, batch_size: int = 32, eval_seed: int = 0,
             bands: tuple = _DEFAULT_BANDS, fidelity_channel=None) -> MetricsReport:
    """Inference-mode pass over a dataset, aggregated into a MetricsReport.

    The reparameterization noise for trial i is drawn from a stream keyed
    by derive(eval_seed, i), independent of how trials are batched; for a
    fixed batch_size the report is bitwise repeatable.  (Across different
    batch_size values BLAS kernel selection may round differently, at the
    1e-11 level.)  fidelity_channel may be a single channel name, a
    per-class sequence indexed by the trial label, or None to skip band
    fidelity.
    """
    _check_geometry(model, dataset.data)
    n = dataset.data.shape[0]
    if n < 1:
        raise DataError("evaluation set is empty")
    d = model.config.latent_dim

    per_trial_mse = np.empty(n)
    preds = np.empty(n, dtype=np.int64)
    recons = np.empty_like(dataset.data) if fidelity_channel is not None else None
    with T.no_grad():
        for start in range(0, n, batch_size):
            idx = np.arange(start, min(start + batch_size, n))
            eps = np.stack([CounterRNG(derive(eval_seed, int(i))).gaussian(d)
                            for i in idx]).astype(np.float32)
            xb = dataset.data[idx][:, None, :, :]
            x_hat, log_probs, _ = model_forward(model, T.tensor(xb),
                                                training=False, eps=eps)
            err = (x_hat.data.astype(np.float64) - xb.astype(np.float64)) ** 2
            per_trial_mse[idx] = err.mean(axis=(1, 2, 3))
            preds[idx] = np.argmax(log_probs.data, axis=1)
            if recons is not None:
                recons[idx] = x_hat.data[:, 0, :, :]

    labels = dataset.labels.astype(np.int64)
    accuracy, kappa = classification_metrics(preds, labels)

    fidelity: dict[str, dict[str, float]] = {}
    if fidelity_channel is not None and not isinstance(fidelity_channel, str) \
            and len(fidelity_channel) != 4:
        raise ParameterError("per-class fidelity_channel must name 4 channels, "
                             f"got {len(fidelity_channel)}")
    if fidelity_channel is not None:
        for lo, hi in bands:
            rs = np.empty(n)
            ratios = np.empty(n)
            for i in range(n):
                name = _fidelity_channel_for(fidelity_channel, labels[i])
                x1 = channel_signal(dataset.data[i], name)
                x2 = channel_signal(recons[i], name)
                fid = band_fidelity(x1, x2, (lo, hi), fs=dataset.fs)
                rs[i] = fid["pearson_r"]
                ratios[i] = fid["energy_ratio"]
            fidelity[f"{lo:g}-{hi:g}"] = {"pearson_r": float(rs.mean()),
                                          "energy_ratio": float(ratios.mean())}

    return MetricsReport(
        n_trials=n,
        accuracy=accuracy,
        kappa=kappa,
        mse_avg=float(per_trial_mse.mean()),
        mse_std=float(per_trial_mse.std()),
        per_trial_mse=[float(v) for v in per_trial_mse],
        band_fidelity=fidelity,
    )
