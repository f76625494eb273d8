"""Variational autoencoder with an EEGNet-style convolutional body.

The encoder stacks a temporal conv (kernel 1 x k, 'same'), a depthwise
spatial conv collapsing the electrode axis, and a separable conv, with batch
norm, ELU, average pooling and dropout between, then projects the flattened
features to [mu, log_var].  The v2 variant runs three such branches with
temporal kernels at different scales and concatenates their features before
the projection.

Sampling uses the usual reparameterization z1 = mu + sigma * eps; the
classifier never sees z1 but the deterministic vector z2 = [mu, sigma^2].
The decoder mirrors the encoder back to a (1, channels, samples) epoch with
nearest-neighbor upsampling and transposed convs (temporal kernel of the
first branch); there is no output squashing, reconstructions live in the
input's units.

No conv layer carries a bias: every conv is followed by batch norm (which
absorbs it) or is a plain linear map whose offset the loss does not need.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as T
from .errors import ConfigError, FormatError, ParameterError, ShapeError
from .rng import CounterRNG, derive

SEP_KERNEL = 16           # width of the separable depthwise kernel
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
N_CLASSES = 4
V2_KERNELS = (64, 16, 4)  # temporal scales of the three v2 branches


@dataclass(frozen=True)
class EncoderConfig:
    f1: int = 8               # temporal filters
    depth_mult: int = 2       # spatial filters per temporal filter
    f2: int = 16              # separable (pointwise) filters
    temporal_kernel: int = 64
    pool1: int = 4
    pool2: int = 8
    dropout_p: float = 0.25
    channels: int = 22
    samples: int = 512
    latent_dim: int = 64

    def __post_init__(self):
        for name in ("f1", "depth_mult", "f2", "temporal_kernel", "pool1", "pool2",
                     "channels", "samples", "latent_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.samples % (self.pool1 * self.pool2):
            raise ConfigError(
                f"samples={self.samples} must be divisible by pool1*pool2="
                f"{self.pool1 * self.pool2}")
        if self.temporal_kernel > self.samples:
            raise ConfigError(
                f"temporal_kernel={self.temporal_kernel} exceeds samples={self.samples}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def flatten_width(self) -> int:
        return self.f2 * (self.samples // (self.pool1 * self.pool2))


@dataclass
class LatentCode:
    """Encoder output: mu/log_var (B, d), z2 = [mu, sigma^2] (B, 2d), z1 optional."""

    mu: T.Tensor
    log_var: T.Tensor
    z2: T.Tensor
    z1: T.Tensor | None = None


class EEGVAE:
    """Parameter/buffer store plus enough config to rebuild every shape."""

    def __init__(self, variant: str, configs, params: OrderedDict, buffers: OrderedDict):
        self.variant = variant
        self.configs = tuple(configs)
        self.params = params
        self.buffers = buffers

    @property
    def config(self) -> EncoderConfig:
        return self.configs[0]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def default_configs(variant: str, base: EncoderConfig | None = None):
    base = base or EncoderConfig()
    if variant == "v1":
        return (base,)
    if variant == "v2":
        return tuple(replace(base, temporal_kernel=k) for k in V2_KERNELS)
    raise ConfigError(f"unknown variant {variant!r}, expected 'v1' or 'v2'")


def _validate_configs(variant: str, configs):
    configs = tuple(configs)
    if variant == "v1":
        if len(configs) != 1:
            raise ConfigError(f"v1 takes exactly one encoder config, got {len(configs)}")
    elif variant == "v2":
        if len(configs) != 3:
            raise ConfigError(f"v2 takes exactly three encoder configs, got {len(configs)}")
        ref = asdict(configs[0])
        for k, cfg in enumerate(configs[1:], start=1):
            d = asdict(cfg)
            diff = [f for f in d if f != "temporal_kernel" and d[f] != ref[f]]
            if diff:
                raise ConfigError(f"v2 branches may differ only in temporal_kernel; "
                                  f"branch {k} also differs in {diff}")
    else:
        raise ConfigError(f"unknown variant {variant!r}, expected 'v1' or 'v2'")
    return configs


def _param_shapes(variant: str, configs) -> OrderedDict:
    """Canonical (topological) parameter order; shapes derived from config."""
    shapes = OrderedDict()
    cfg = configs[0]
    fd = cfg.f1 * cfg.depth_mult
    for b, bc in enumerate(configs):
        shapes[f"enc{b}.conv_t.w"] = (bc.f1, 1, 1, bc.temporal_kernel)
        shapes[f"enc{b}.bn_t.gamma"] = (bc.f1,)
        shapes[f"enc{b}.bn_t.beta"] = (bc.f1,)
        shapes[f"enc{b}.conv_s.w"] = (fd, 1, bc.channels, 1)
        shapes[f"enc{b}.bn_s.gamma"] = (fd,)
        shapes[f"enc{b}.bn_s.beta"] = (fd,)
        shapes[f"enc{b}.sep_d.w"] = (fd, 1, 1, SEP_KERNEL)
        shapes[f"enc{b}.sep_p.w"] = (bc.f2, fd, 1, 1)
        shapes[f"enc{b}.bn_sep.gamma"] = (bc.f2,)
        shapes[f"enc{b}.bn_sep.beta"] = (bc.f2,)
    shapes["enc.fc.w"] = (len(configs) * cfg.flatten_width, 2 * cfg.latent_dim)
    shapes["enc.fc.b"] = (2 * cfg.latent_dim,)
    shapes["dec.fc.w"] = (cfg.latent_dim, cfg.flatten_width)
    shapes["dec.fc.b"] = (cfg.flatten_width,)
    shapes["dec.sep_p.w"] = (cfg.f2, fd, 1, 1)
    shapes["dec.sep_d.w"] = (fd, 1, 1, SEP_KERNEL)
    shapes["dec.bn_sep.gamma"] = (fd,)
    shapes["dec.bn_sep.beta"] = (fd,)
    shapes["dec.conv_s.w"] = (fd, 1, cfg.channels, 1)
    shapes["dec.bn_s.gamma"] = (cfg.f1,)
    shapes["dec.bn_s.beta"] = (cfg.f1,)
    shapes["dec.conv_t.w"] = (cfg.f1, 1, 1, cfg.temporal_kernel)
    if variant == "v1":
        shapes["clf.fc1.w"] = (2 * cfg.latent_dim, cfg.latent_dim)
        shapes["clf.fc1.b"] = (cfg.latent_dim,)
        shapes["clf.fc2.w"] = (cfg.latent_dim, N_CLASSES)
        shapes["clf.fc2.b"] = (N_CLASSES,)
    else:
        shapes["clf.fc.w"] = (2 * cfg.latent_dim, N_CLASSES)
        shapes["clf.fc.b"] = (N_CLASSES,)
    return shapes


def _buffer_shapes(configs) -> OrderedDict:
    shapes = OrderedDict()
    cfg = configs[0]
    fd = cfg.f1 * cfg.depth_mult
    for b, bc in enumerate(configs):
        shapes[f"enc{b}.bn_t.mean"] = (bc.f1,)
        shapes[f"enc{b}.bn_t.var"] = (bc.f1,)
        shapes[f"enc{b}.bn_s.mean"] = (fd,)
        shapes[f"enc{b}.bn_s.var"] = (fd,)
        shapes[f"enc{b}.bn_sep.mean"] = (bc.f2,)
        shapes[f"enc{b}.bn_sep.var"] = (bc.f2,)
    shapes["dec.bn_sep.mean"] = (fd,)
    shapes["dec.bn_sep.var"] = (fd,)
    shapes["dec.bn_s.mean"] = (cfg.f1,)
    shapes["dec.bn_s.var"] = (cfg.f1,)
    return shapes


def _fan_in(name: str, shape, configs) -> int:
    if name.endswith(".w") and len(shape) == 4:
        groups = _conv_groups(name, configs[0])
        if name.startswith("dec.") and "fc" not in name:
            # transposed conv: contributions come from the input-channel side
            return (shape[0] // groups) * shape[2] * shape[3]
        return shape[1] * shape[2] * shape[3]
    if name.endswith(".w"):
        return shape[0]
    return shape[0]  # unused for biases/norm params


def _conv_groups(name: str, cfg: EncoderConfig) -> int:
    tail = name.split(".", 1)[1]
    if tail.startswith("conv_s"):
        return cfg.f1
    if tail.startswith("sep_d"):
        return cfg.f1 * cfg.depth_mult
    return 1


def model_init(variant: str, configs, seed: int = 0) -> EEGVAE:
    """Build a model with uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights.

    Biases start at zero, batch-norm scale/shift at (1, 0), running stats at
    (0, 1).  Each tensor draws from its own derived seed, so the full
    parameter vector is a pure function of (variant, config, seed).
    """
    if isinstance(configs, EncoderConfig):
        configs = (configs,)
    configs = _validate_configs(variant, configs)
    params = OrderedDict()
    for k, (name, shape) in enumerate(_param_shapes(variant, configs).items()):
        if name.endswith(".gamma"):
            data = np.ones(shape, dtype=np.float32)
        elif name.endswith((".beta", ".b")):
            data = np.zeros(shape, dtype=np.float32)
        else:
            bound = float(np.sqrt(1.0 / _fan_in(name, shape, configs)))
            n = int(np.prod(shape))
            data = CounterRNG(derive(seed, k)).uniform(n, -bound, bound) \
                .astype(np.float32).reshape(shape)
        params[name] = T.Tensor(data, requires_grad=True)
    buffers = OrderedDict()
    for name, shape in _buffer_shapes(configs).items():
        fill = 1.0 if name.endswith(".var") else 0.0
        buffers[name] = np.full(shape, fill, dtype=np.float32)
    return EEGVAE(variant, configs, params, buffers)


def count_parameters(model: EEGVAE) -> dict:
    counts = {"encoder": 0, "decoder": 0, "classifier": 0}
    for name, p in model.params.items():
        if name.startswith("enc"):
            counts["encoder"] += p.size
        elif name.startswith("dec."):
            counts["decoder"] += p.size
        else:
            counts["classifier"] += p.size
    counts["total"] = sum(counts.values())
    return counts


# ---------------------------------------------------------------- forward

def _bn(model, h, key, training):
    return T.batch_norm2d(h, model.params[f"{key}.gamma"], model.params[f"{key}.beta"],
                          model.buffers[f"{key}.mean"], model.buffers[f"{key}.var"],
                          training, momentum=BN_MOMENTUM, eps=BN_EPS)


def _encoder_branch(model, x, b, training, seed):
    cfg = model.configs[b]
    p = model.params
    fd = cfg.f1 * cfg.depth_mult
    h = T.conv2d_same(x, p[f"enc{b}.conv_t.w"])
    h = _bn(model, h, f"enc{b}.bn_t", training)
    h = T.conv2d(h, p[f"enc{b}.conv_s.w"], groups=cfg.f1)
    h = _bn(model, h, f"enc{b}.bn_s", training)
    h = T.elu(h)
    h = T.avg_pool2d(h, (1, cfg.pool1))
    h = T.dropout(h, cfg.dropout_p, training, derive(seed, b, 0))
    h = T.conv2d_same(h, p[f"enc{b}.sep_d.w"], groups=fd)
    h = T.conv2d(h, p[f"enc{b}.sep_p.w"])
    h = _bn(model, h, f"enc{b}.bn_sep", training)
    h = T.elu(h)
    h = T.avg_pool2d(h, (1, cfg.pool2))
    h = T.dropout(h, cfg.dropout_p, training, derive(seed, b, 1))
    return T.flatten(h)


def encoder_forward(model: EEGVAE, x: T.Tensor, training: bool, seed: int = 0) -> LatentCode:
    cfg = model.config
    if x.data.ndim != 4 or x.data.shape[1:] != (1, cfg.channels, cfg.samples):
        raise ShapeError(
            f"encoder expects (B, 1, {cfg.channels}, {cfg.samples}), got {x.data.shape}")
    flats = [_encoder_branch(model, x, b, training, seed) for b in range(len(model.configs))]
    h = flats[0] if len(flats) == 1 else T.concat(flats, axis=1)
    fc = T.linear(h, model.params["enc.fc.w"], model.params["enc.fc.b"])
    d = cfg.latent_dim
    mu = T.narrow(fc, 1, 0, d)
    log_var = T.narrow(fc, 1, d, d)
    z2 = T.concat([mu, T.exp(log_var)], axis=1)
    return LatentCode(mu=mu, log_var=log_var, z2=z2)


def reparameterize(code: LatentCode, seed: int = 0, eps: np.ndarray | None = None) -> LatentCode:
    """z1 = mu + exp(log_var / 2) * eps; gradients reach mu/log_var, not eps."""
    bsz, d = code.mu.data.shape
    if eps is None:
        eps = CounterRNG(seed).gaussian(bsz * d).astype(code.mu.data.dtype).reshape(bsz, d)
    else:
        eps = np.asarray(eps, dtype=code.mu.data.dtype)
        if eps.shape != (bsz, d):
            raise ShapeError(f"eps shape {eps.shape} != {(bsz, d)}")
    sigma = T.exp(T.mul(code.log_var, 0.5))
    z1 = T.add(code.mu, T.mul(sigma, T.Tensor(eps)))
    return LatentCode(mu=code.mu, log_var=code.log_var, z2=code.z2, z1=z1)


def decoder_forward(model: EEGVAE, z1: T.Tensor, training: bool, seed: int = 0) -> T.Tensor:
    cfg = model.config
    if z1.data.ndim != 2 or z1.data.shape[1] != cfg.latent_dim:
        raise ShapeError(f"decoder expects (B, {cfg.latent_dim}), got {z1.data.shape}")
    p = model.params
    fd = cfg.f1 * cfg.depth_mult
    bsz = z1.data.shape[0]
    h = T.linear(z1, p["dec.fc.w"], p["dec.fc.b"])
    h = T.reshape(h, (bsz, cfg.f2, 1, cfg.samples // (cfg.pool1 * cfg.pool2)))
    h = T.upsample_nearest(h, (1, cfg.pool2))
    h = T.conv_transpose2d(h, p["dec.sep_p.w"])
    h = T.conv_transpose2d_same(h, p["dec.sep_d.w"], groups=fd)
    h = _bn(model, h, "dec.bn_sep", training)
    h = T.elu(h)
    h = T.dropout(h, cfg.dropout_p, training, derive(seed, 10))
    h = T.upsample_nearest(h, (1, cfg.pool1))
    h = T.conv_transpose2d(h, p["dec.conv_s.w"], groups=cfg.f1)
    h = _bn(model, h, "dec.bn_s", training)
    h = T.elu(h)
    return T.conv_transpose2d_same(h, p["dec.conv_t.w"])


def classifier_forward(model: EEGVAE, z2: T.Tensor) -> T.Tensor:
    cfg = model.config
    if z2.data.ndim != 2 or z2.data.shape[1] != 2 * cfg.latent_dim:
        raise ShapeError(f"classifier expects (B, {2 * cfg.latent_dim}), got {z2.data.shape}")
    p = model.params
    if model.variant == "v1":
        h = T.linear(z2, p["clf.fc1.w"], p["clf.fc1.b"])
        h = T.elu(h)
        h = T.linear(h, p["clf.fc2.w"], p["clf.fc2.b"])
    else:
        h = T.linear(z2, p["clf.fc.w"], p["clf.fc.b"])
    return T.log_softmax(h, axis=1)


def model_forward(model: EEGVAE, x: T.Tensor, training: bool, seed: int = 0,
                  eps: np.ndarray | None = None):
    """Full pass: returns (x_hat, log_probs, code with z1)."""
    code = encoder_forward(model, x, training, seed=derive(seed, 0))
    code = reparameterize(code, seed=derive(seed, 1), eps=eps)
    x_hat = decoder_forward(model, code.z1, training, seed=derive(seed, 2))
    log_probs = classifier_forward(model, code.z2)
    return x_hat, log_probs, code


# ------------------------------------------------------------- container

_MAGIC = b"VEGM"
_VARIANT_BYTE = {"v1": 1, "v2": 2}
_BYTE_VARIANT = {1: "v1", 2: "v2"}


def _config_json(model_or_configs) -> bytes:
    configs = model_or_configs.configs if isinstance(model_or_configs, EEGVAE) else model_or_configs
    doc = {"encoders": [asdict(c) for c in configs]}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("ascii")


def model_write(model: EEGVAE, path: str):
    """magic | version u16 | variant u8 | config JSON | params f32 | buffers f32."""
    cfg_blob = _config_json(model)
    n_params = sum(p.size for p in model.params.values())
    n_buffers = sum(b.size for b in model.buffers.values())
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHBI", _MAGIC, 1, _VARIANT_BYTE[model.variant], len(cfg_blob)))
        fh.write(cfg_blob)
        fh.write(struct.pack("<Q", n_params))
        for p in model.params.values():
            fh.write(p.data.astype("<f4").tobytes())
        fh.write(struct.pack("<Q", n_buffers))
        for b in model.buffers.values():
            fh.write(b.astype("<f4").tobytes())


def model_read(path: str) -> EEGVAE:
    with open(path, "rb") as fh:
        blob = fh.read()
    head = struct.calcsize("<4sHBI")
    if len(blob) < head:
        raise FormatError(f"file too short for header: {len(blob)} bytes")
    magic, version, vbyte, cfg_len = struct.unpack_from("<4sHBI", blob)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    if version != 1:
        raise FormatError(f"unsupported version {version}")
    if vbyte not in _BYTE_VARIANT:
        raise FormatError(f"unknown variant byte {vbyte}")
    variant = _BYTE_VARIANT[vbyte]
    off = head
    if len(blob) < off + cfg_len:
        raise FormatError("truncated config block")
    try:
        doc = json.loads(blob[off:off + cfg_len].decode("ascii"))
        configs = tuple(EncoderConfig(**enc) for enc in doc["encoders"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad config block: {exc}") from exc
    if len(configs) != (1 if variant == "v1" else 3):
        raise FormatError(
            f"variant byte says {variant} but config block has {len(configs)} encoders")
    off += cfg_len

    model = model_init(variant, configs, seed=0)
    if len(blob) < off + 8:
        raise FormatError("truncated parameter count")
    (n_params,) = struct.unpack_from("<Q", blob, off)
    off += 8
    expect = sum(p.size for p in model.params.values())
    if n_params != expect:
        raise FormatError(f"n_params={n_params}, config implies {expect}")
    if len(blob) < off + 4 * n_params:
        raise FormatError("truncated parameter block")
    flat = np.frombuffer(blob, dtype="<f4", count=n_params, offset=off)
    off += 4 * n_params
    pos = 0
    for p in model.params.values():
        p.data = flat[pos:pos + p.size].reshape(p.data.shape).astype(np.float32)
        pos += p.size
    if len(blob) < off + 8:
        raise FormatError("truncated buffer count")
    (n_buffers,) = struct.unpack_from("<Q", blob, off)
    off += 8
    expect_b = sum(b.size for b in model.buffers.values())
    if n_buffers != expect_b:
        raise FormatError(f"n_buffers={n_buffers}, config implies {expect_b}")
    if len(blob) < off + 4 * n_buffers:
        raise FormatError("truncated buffer block")
    flat_b = np.frombuffer(blob, dtype="<f4", count=n_buffers, offset=off)
    off += 4 * n_buffers
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes after buffers")
    pos = 0
    for name in model.buffers:
        size = model.buffers[name].size
        model.buffers[name] = flat_b[pos:pos + size].reshape(model.buffers[name].shape) \
            .astype(np.float32)
        pos += size
    return model
