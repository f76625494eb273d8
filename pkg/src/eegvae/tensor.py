"""Reverse-mode autodiff on numpy arrays.

Every differentiable op computes its output eagerly, then (when grads are
enabled and some input requires them) records a tape node holding the input
tensors and a closure that maps the output gradient to input gradients.
Recording order is execution order, so a node's sequence number is already a
topological position and backward() can just walk nodes in descending order.

A recording is consumed by the first backward() that touches it; a second
backward over the same nodes raises UsageError instead of silently
double-counting. Gradients accumulate by addition, so a tensor used twice
receives the sum of both contributions.

Ops preserve the dtype of their inputs (float32 models, float64 numeric
checks run through identical code paths).
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np
import scipy.fft as _fft

from .errors import ParameterError, ShapeError, UsageError
from .rng import CounterRNG

_SEQ = itertools.count()
_GRAD_ENABLED = [True]


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference-only forwards)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


class TapeNode:
    __slots__ = ("op", "inputs", "out", "backward_fn", "seq", "consumed")

    def __init__(self, op, inputs, out, backward_fn):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn
        self.seq = next(_SEQ)
        self.consumed = False


class Tensor:
    """n-d array plus optional gradient and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "tape_node")

    def __init__(self, data: np.ndarray, requires_grad: bool = False):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.tape_node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _record(op: str, out_data: np.ndarray, inputs, backward_fn) -> Tensor:
    needs = _GRAD_ENABLED[-1] and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        out.tape_node = TapeNode(op, tuple(inputs), out, backward_fn)
    return out


def backward(loss: Tensor):
    """Reverse pass from a recorded scalar loss.

    Populates .grad (by accumulation) on every requires_grad tensor on the
    path from loss, then retires the recording; a second call over the same
    nodes is an error.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    root = loss.tape_node
    if root is None:
        raise UsageError("loss was not produced by a recorded op")

    # Reachable sub-tape; sequence numbers are a topological order because
    # inputs are always recorded before the ops that consume them.
    stack, seen, nodes = [root], {id(root)}, []
    while stack:
        nd = stack.pop()
        if nd.consumed:
            raise UsageError(f"stale tape: node '{nd.op}' already consumed by a previous backward")
        nodes.append(nd)
        for t in nd.inputs:
            tn = t.tape_node
            if tn is not None and id(tn) not in seen:
                seen.add(id(tn))
                stack.append(tn)
    nodes.sort(key=lambda nd: nd.seq, reverse=True)

    grads = {id(root): np.ones_like(loss.data)}
    for nd in nodes:
        nd.consumed = True
        g = grads.pop(id(nd), None)
        if g is None:
            continue
        out_t = nd.out
        out_t.grad = g if out_t.grad is None else out_t.grad + g
        input_grads = nd.backward_fn(g)
        for t, ig in zip(nd.inputs, input_grads):
            if ig is None or not t.requires_grad:
                continue
            tn = t.tape_node
            if tn is not None:
                key = id(tn)
                grads[key] = ig if key not in grads else grads[key] + ig
            else:
                t.grad = ig if t.grad is None else t.grad + ig
        # Sever the graph cycle; the consumed flag stays for stale-tape checks.
        nd.inputs = ()
        nd.out = None
        nd.backward_fn = None


# ---------------------------------------------------------------- factories

def _check_shape(shape):
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"tensor extents must be >= 1, got {shape}")
    return shape


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(_check_shape(shape), dtype=dtype), requires_grad)


def full(shape, value: float, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.full(_check_shape(shape), value, dtype=dtype), requires_grad)


def uniform(shape, low: float, high: float, seed: int,
            requires_grad: bool = False, dtype=np.float32) -> Tensor:
    shape = _check_shape(shape)
    if not low < high:
        raise ParameterError(f"uniform needs low < high, got [{low}, {high})")
    n = int(np.prod(shape))
    data = CounterRNG(seed).uniform(n, low, high).astype(dtype).reshape(shape)
    return Tensor(data, requires_grad)


def gaussian(shape, mean: float, sigma: float, seed: int,
             requires_grad: bool = False, dtype=np.float32) -> Tensor:
    shape = _check_shape(shape)
    if sigma < 0:
        raise ParameterError(f"gaussian sigma must be >= 0, got {sigma}")
    n = int(np.prod(shape))
    data = CounterRNG(seed).gaussian(n, mean, sigma).astype(dtype).reshape(shape)
    return Tensor(data, requires_grad)


# ------------------------------------------------------------- elementwise

def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record("add", out, (a, b), bw)


def sub(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return _record("sub", out, (a, b), bw)


def mul(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record("mul", out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


# ------------------------------------------------------------------ linear

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def bw(g):
        return g @ bd.T, ad.T @ g

    return _record("matmul", out, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b  with x (B, n), w (n, m), b (m,)."""
    out = matmul(x, w)
    if b is not None:
        if b.data.shape != (w.data.shape[1],):
            raise ShapeError(f"linear bias shape {b.data.shape} != ({w.data.shape[1]},)")
        out = add(out, b)
    return out


# ------------------------------------------------------------- shape moves

def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    out = a.data.reshape(shape)
    return _record("reshape", out, (a,), lambda g: (g.reshape(old),))


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.data.shape[0], -1))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record("concat", out, tuple(tensors), bw)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    n = a.data.shape[axis]
    if not (0 <= start and start + length <= n and length >= 1):
        raise ShapeError(f"narrow [{start}:{start + length}) out of range for extent {n}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = a.data[idx].copy()
    shape = a.data.shape

    def bw(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[idx] = g
        return (gx,)

    return _record("narrow", out, (a,), bw)


def take_per_row(a: Tensor, idx) -> Tensor:
    """out[b] = a[b, idx[b]] for a (B, n); used to gather per-trial log-probs."""
    if a.data.ndim != 2:
        raise ShapeError(f"take_per_row expects 2-d input, got {a.data.shape}")
    idx = np.asarray(idx)
    bsz, n = a.data.shape
    if idx.shape != (bsz,):
        raise ShapeError(f"index shape {idx.shape} != ({bsz},)")
    if idx.min() < 0 or idx.max() >= n:
        raise ShapeError(f"take_per_row indices out of range [0, {n})")
    rows = np.arange(bsz)
    out = a.data[rows, idx].copy()

    def bw(g):
        gx = np.zeros((bsz, n), dtype=g.dtype)
        gx[rows, idx] = g
        return (gx,)

    return _record("take_per_row", out, (a,), bw)


# -------------------------------------------------------------- reductions

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, a.data.ndim)
    out = a.data.sum(axis=axes)
    shape = a.data.shape

    def bw(g):
        ge = g
        for ax in sorted(axes):
            ge = np.expand_dims(ge, ax)
        return (np.broadcast_to(ge, shape).copy(),)

    return _record("sum", out, (a,), bw)


def tmean(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, a.data.ndim)
    count = int(np.prod([a.data.shape[ax] for ax in axes]))
    out = a.data.mean(axis=axes)
    shape = a.data.shape

    def bw(g):
        ge = g * (1.0 / count)
        for ax in sorted(axes):
            ge = np.expand_dims(ge, ax)
        return (np.broadcast_to(ge, shape).copy(),)

    return _record("mean", out, (a,), bw)


# ------------------------------------------------------------ pad and crop

def _check_4d(a, op):
    if a.data.ndim != 4:
        raise ShapeError(f"{op} expects (B, C, H, W), got {a.data.shape}")


def pad2d(a: Tensor, pads) -> Tensor:
    """Zero-pad the last two axes by (top, bottom, left, right)."""
    _check_4d(a, "pad2d")
    t, b, l, r = (int(p) for p in pads)
    if min(t, b, l, r) < 0:
        raise ShapeError(f"pad2d amounts must be >= 0, got {pads}")
    out = np.pad(a.data, ((0, 0), (0, 0), (t, b), (l, r)))
    H, W = a.data.shape[2:]

    def bw(g):
        return (g[:, :, t:t + H, l:l + W],)

    return _record("pad2d", out, (a,), bw)


def crop2d(a: Tensor, crops) -> Tensor:
    """Remove (top, bottom, left, right) rows/cols from the last two axes."""
    _check_4d(a, "crop2d")
    t, b, l, r = (int(c) for c in crops)
    if min(t, b, l, r) < 0:
        raise ShapeError(f"crop2d amounts must be >= 0, got {crops}")
    H, W = a.data.shape[2:]
    if t + b >= H or l + r >= W:
        raise ShapeError(f"crop2d {crops} leaves no extent from (H={H}, W={W})")
    out = a.data[:, :, t:H - b, l:W - r].copy()

    def bw(g):
        return (np.pad(g, ((0, 0), (0, 0), (t, b), (l, r))),)

    return _record("crop2d", out, (a,), bw)


# ------------------------------------------------------------ convolutions

def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _conv_geometry(xshape, wshape, stride, padding, groups):
    B, Cin, H, W = xshape
    Cout, Cig, kh, kw = wshape
    sh, sw = stride
    ph, pw = padding
    if groups < 1 or Cin % groups or Cout % groups:
        raise ShapeError(f"groups={groups} must divide Cin={Cin} and Cout={Cout}")
    if Cig * groups != Cin:
        raise ShapeError(f"weight Cin/groups={Cig} inconsistent with Cin={Cin}, groups={groups}")
    if sh < 1 or sw < 1:
        raise ShapeError(f"stride must be >= 1, got {(sh, sw)}")
    if ph < 0 or pw < 0 or ph > kh - 1 or pw > kw - 1:
        raise ShapeError(f"padding {(ph, pw)} must satisfy 0 <= p <= k-1 for kernel {(kh, kw)}")
    if H + 2 * ph < kh or W + 2 * pw < kw:
        raise ShapeError(f"padded extents {(H + 2 * ph, W + 2 * pw)} smaller than kernel {(kh, kw)}")
    if (H + 2 * ph - kh) % sh or (W + 2 * pw - kw) % sw:
        raise ShapeError(
            f"conv geometry not integral: (H+2p-k) % s != 0 for H={H}, W={W}, "
            f"k={(kh, kw)}, p={(ph, pw)}, s={(sh, sw)}")
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    return Ho, Wo


def _next_fast_len(n: int) -> int:
    """Smallest 5-smooth integer >= n (fast FFT length)."""
    while True:
        m = n
        for p in (2, 3, 5):
            while m % p == 0:
                m //= p
        if m == 1:
            return n
        n += 1


def _im2col(x, kh, kw, stride, groups):
    """(B, g, Ho*Wo, Cin/g * kh * kw) patch matrix of the already-padded input."""
    sh, sw = stride
    B, Cin, Hp, Wp = x.shape
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw]
    _, _, Ho, Wo, _, _ = win.shape
    cig = Cin // groups
    win = win.reshape(B, groups, cig, Ho, Wo, kh, kw)
    col = win.transpose(0, 1, 3, 4, 2, 5, 6).reshape(B, groups, Ho * Wo, cig * kh * kw)
    return col, Ho, Wo


def _pointwise(x, w, groups):
    """1x1 kernel: a channel-mixing matmul per group."""
    B, Cin, H, W = x.shape
    Cout = w.shape[0]
    cig = Cin // groups
    xr = x.reshape(B, groups, cig, H * W)
    wr = w.reshape(groups, Cout // groups, cig)
    out = np.matmul(wr, xr)
    return out.reshape(B, Cout, H, W)


def _corr1d(x, w2, sw, groups):
    """Correlation along the last axis via FFT; w2 is (Cout, cig, kw).

    The batch/height axes ride along, so no im2col patch matrix is built;
    this is what makes the wide temporal kernels affordable.
    """
    B, Cin, H, Wp = x.shape
    Cout, cig, kw = w2.shape
    og = Cout // groups
    n = _next_fast_len(Wp)
    X = _fft.rfft(x, n=n, axis=-1)
    Wf = _fft.rfft(w2.astype(x.dtype, copy=False), n=n, axis=-1).conj()
    prod = np.einsum("bgchf,gocf->bgohf",
                     X.reshape(B, groups, cig, H, -1),
                     Wf.reshape(groups, og, cig, -1), optimize=True)
    full = _fft.irfft(prod.reshape(B, Cout, H, -1), n=n, axis=-1)[..., :Wp - kw + 1]
    out = full[..., ::sw] if sw > 1 else full
    return out.astype(x.dtype, copy=False)


def _corr1d_wgrad(x, gy, sw, groups, kw):
    """Weight gradient of _corr1d: lags 0..kw-1 of sum_j x[j+v] * gy[j]."""
    B, Cin, H, Wp = x.shape
    _, Cout, _, Wo = gy.shape
    cig = Cin // groups
    og = Cout // groups
    if sw > 1:
        gyd = np.zeros((B, Cout, H, (Wo - 1) * sw + 1), dtype=gy.dtype)
        gyd[..., ::sw] = gy
    else:
        gyd = gy
    n = _next_fast_len(Wp)
    X = _fft.rfft(x, n=n, axis=-1)
    GY = _fft.rfft(gyd, n=n, axis=-1).conj()
    prod = np.einsum("bgchf,bgohf->gocf",
                     X.reshape(B, groups, cig, H, -1),
                     GY.reshape(B, groups, og, H, -1), optimize=True)
    return _fft.irfft(prod, n=n, axis=-1)[..., :kw].reshape(Cout, cig, kw) \
        .astype(x.dtype, copy=False)


def _conv2d_raw(x, w, stride, padding, groups):
    Cout, cig, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    if kh == 1 and kw == 1:
        if sh > 1 or sw > 1:
            x = x[:, :, ::sh, ::sw]
        return _pointwise(x, w, groups)
    if kh == 1:
        if sh > 1:
            x = x[:, :, ::sh, :]
        return _corr1d(x, w[:, :, 0, :], sw, groups)
    if kw == 1:
        if sw > 1:
            x = x[:, :, :, ::sw]
        out = _corr1d(x.transpose(0, 1, 3, 2), w[:, :, :, 0], sh, groups)
        return out.transpose(0, 1, 3, 2)
    B = x.shape[0]
    col, Ho, Wo = _im2col(x, kh, kw, (sh, sw), groups)
    wmat = w.reshape(groups, Cout // groups, cig * kh * kw)
    out = np.matmul(col, wmat.transpose(0, 2, 1))          # (B, g, Ho*Wo, Cout/g)
    return out.transpose(0, 1, 3, 2).reshape(B, Cout, Ho, Wo)


def _conv2d_wgrad(x, gy, stride, padding, groups, wshape):
    Cout, cig, kh, kw = wshape
    sh, sw = stride
    ph, pw = padding
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    if kh == 1 and kw == 1:
        if sh > 1 or sw > 1:
            x = x[:, :, ::sh, ::sw]
        B, Cin, H, W = x.shape
        xr = x.reshape(B, groups, cig, H * W)
        gr = gy.reshape(B, groups, Cout // groups, H * W)
        gw = np.matmul(gr, xr.transpose(0, 1, 3, 2)).sum(axis=0)
        return gw.reshape(Cout, cig, 1, 1)
    if kh == 1:
        if sh > 1:
            x = x[:, :, ::sh, :]
        return _corr1d_wgrad(x, gy, sw, groups, kw).reshape(Cout, cig, 1, kw)
    if kw == 1:
        if sw > 1:
            x = x[:, :, :, ::sw]
        gw = _corr1d_wgrad(x.transpose(0, 1, 3, 2), gy.transpose(0, 1, 3, 2), sh, groups, kh)
        return gw.reshape(Cout, cig, kh, 1)
    B = x.shape[0]
    col, Ho, Wo = _im2col(x, kh, kw, (sh, sw), groups)
    gmat = gy.reshape(B, groups, Cout // groups, Ho * Wo)
    gw = np.matmul(gmat, col)                               # (B, g, Cout/g, K)
    return gw.sum(axis=0).reshape(Cout, cig, kh, kw)


def _conv2d_xgrad(gy, w, stride, padding, groups, xhw):
    """Gradient to the conv input; doubles as the transposed-conv forward."""
    B, Cout, Ho, Wo = gy.shape
    _, cig, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    H, W = xhw
    if sh > 1 or sw > 1:
        gyd = np.zeros((B, Cout, (Ho - 1) * sh + 1, (Wo - 1) * sw + 1), dtype=gy.dtype)
        gyd[:, :, ::sh, ::sw] = gy
    else:
        gyd = gy
    eh = (H + 2 * ph - kh) - (gyd.shape[2] - 1)             # stride remainder, in [0, sh)
    ew = (W + 2 * pw - kw) - (gyd.shape[3] - 1)
    gyp = np.pad(gyd, ((0, 0), (0, 0),
                       (kh - 1 - ph, kh - 1 - ph + eh),
                       (kw - 1 - pw, kw - 1 - pw + ew)))
    og = Cout // groups
    wf = w.reshape(groups, og, cig, kh, kw).transpose(0, 2, 1, 3, 4)[..., ::-1, ::-1]
    wf = np.ascontiguousarray(wf).reshape(groups * cig, og, kh, kw)
    return _conv2d_raw(gyp, wf, (1, 1), (0, 0), groups)


def conv2d(x: Tensor, w: Tensor, stride=1, padding=0, groups: int = 1) -> Tensor:
    """Cross-correlation of x (B, Cin, H, W) with w (Cout, Cin/g, kh, kw).

    Output extents follow (H + 2p - kh) / s + 1, which must be integral.
    """
    _check_4d(x, "conv2d")
    if w.data.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-d, got {w.data.shape}")
    stride, padding = _pair(stride), _pair(padding)
    _conv_geometry(x.data.shape, w.data.shape, stride, padding, groups)
    xd, wd = x.data, w.data
    out = _conv2d_raw(xd, wd, stride, padding, groups)

    def bw(g):
        gx = _conv2d_xgrad(g, wd, stride, padding, groups, xd.shape[2:])
        gw = _conv2d_wgrad(xd, g, stride, padding, groups, wd.shape)
        return gx, gw

    return _record("conv2d", out, (x, w), bw)


def conv_transpose2d(x: Tensor, w: Tensor, stride=1, padding=0, groups: int = 1) -> Tensor:
    """Adjoint of conv2d under the same weight layout (Cout, Cin/g, kh, kw).

    Here x plays the conv *output* role (channels = w.shape[0]) and the result
    plays the conv input role: (H - 1) * s - 2p + kh extents.
    """
    _check_4d(x, "conv_transpose2d")
    if w.data.ndim != 4:
        raise ShapeError(f"conv_transpose2d weight must be 4-d, got {w.data.shape}")
    stride, padding = _pair(stride), _pair(padding)
    B, Cin, H, W = x.data.shape
    Cout, cig, kh, kw = w.data.shape
    if Cin != Cout:
        raise ShapeError(f"conv_transpose2d input channels {Cin} != weight rows {Cout}")
    sh, sw = stride
    ph, pw = padding
    Hz = (H - 1) * sh - 2 * ph + kh
    Wz = (W - 1) * sw - 2 * pw + kw
    if Hz < 1 or Wz < 1:
        raise ShapeError(f"conv_transpose2d output extents {(Hz, Wz)} must be >= 1")
    # geometry of the adjoint conv: z plays the input, x the output
    _conv_geometry((B, groups * cig, Hz, Wz), w.data.shape, stride, padding, groups)
    xd, wd = x.data, w.data
    out = _conv2d_xgrad(xd, wd, stride, padding, groups, (Hz, Wz))

    def bw(g):
        gx = _conv2d_raw(g, wd, stride, padding, groups)
        gw = _conv2d_wgrad(g, xd, stride, padding, groups, wd.shape)
        return gx, gw

    return _record("conv_transpose2d", out, (x, w), bw)


def same_pads(k: int):
    """Asymmetric 'same' split of k-1: (k-1)//2 before, k//2 after."""
    return (k - 1) // 2, k // 2


def conv2d_same(x: Tensor, w: Tensor, groups: int = 1) -> Tensor:
    """Stride-1 conv with 'same' output extents via explicit asymmetric pad."""
    kh, kw = w.data.shape[2:]
    t, b = same_pads(kh)
    l, r = same_pads(kw)
    return conv2d(pad2d(x, (t, b, l, r)), w, stride=1, padding=0, groups=groups)


def conv_transpose2d_same(x: Tensor, w: Tensor, groups: int = 1) -> Tensor:
    """Stride-1 transposed conv cropped back to the input extents."""
    kh, kw = w.data.shape[2:]
    t, b = same_pads(kh)
    l, r = same_pads(kw)
    return crop2d(conv_transpose2d(x, w, stride=1, padding=0, groups=groups), (t, b, l, r))


# ------------------------------------------------------------ pool, resize

def avg_pool2d(x: Tensor, kernel) -> Tensor:
    _check_4d(x, "avg_pool2d")
    kh, kw = _pair(kernel)
    B, C, H, W = x.data.shape
    if kh < 1 or kw < 1 or H % kh or W % kw:
        raise ShapeError(f"avg_pool2d kernel {(kh, kw)} must divide extents {(H, W)}")
    out = x.data.reshape(B, C, H // kh, kh, W // kw, kw).mean(axis=(3, 5))
    inv = 1.0 / (kh * kw)

    def bw(g):
        return (np.repeat(np.repeat(g, kh, axis=2), kw, axis=3) * inv,)

    return _record("avg_pool2d", out, (x,), bw)


def upsample_nearest(x: Tensor, factor) -> Tensor:
    _check_4d(x, "upsample_nearest")
    fh, fw = _pair(factor)
    if fh < 1 or fw < 1:
        raise ShapeError(f"upsample factors must be >= 1, got {(fh, fw)}")
    B, C, H, W = x.data.shape
    out = np.repeat(np.repeat(x.data, fh, axis=2), fw, axis=3)

    def bw(g):
        return (g.reshape(B, C, H, fh, W, fw).sum(axis=(3, 5)),)

    return _record("upsample_nearest", out, (x,), bw)


# ---------------------------------------------------------- neural-net ops

def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch norm over (B, H, W).

    Training mode normalizes by biased batch statistics and updates the
    running buffers in place: running <- (1 - momentum) * running + momentum * batch.
    Inference mode normalizes by the running buffers.
    """
    _check_4d(x, "batch_norm2d")
    C = x.data.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.data.shape != (C,):
            raise ShapeError(f"batch_norm2d {name} shape {t.data.shape} != ({C},)")
    if running_mean.shape != (C,) or running_var.shape != (C,):
        raise ShapeError(f"batch_norm2d running buffers must have shape ({C},)")
    xd = x.data
    rs = (1, C, 1, 1)
    if training:
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))        # biased, both for normalization and running update
        running_mean[...] = (1.0 - momentum) * running_mean + momentum * mean.astype(running_mean.dtype)
        running_var[...] = (1.0 - momentum) * running_var + momentum * var.astype(running_var.dtype)
    else:
        mean = running_mean.astype(xd.dtype)
        var = running_var.astype(xd.dtype)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean.reshape(rs)) * ivar.reshape(rs)
    out = gamma.data.reshape(rs) * xhat + beta.data.reshape(rs)
    gd = gamma.data
    n = xd.shape[0] * xd.shape[2] * xd.shape[3]

    def bw(g):
        gbeta = g.sum(axis=(0, 2, 3))
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        if training:
            gx = (gd * ivar).reshape(rs) * (
                g - (gbeta / n).reshape(rs) - xhat * (ggamma / n).reshape(rs))
        else:
            gx = g * (gd * ivar).reshape(rs)
        return gx, ggamma, gbeta

    return _record("batch_norm2d", out, (x, gamma, beta), bw)


def dropout(x: Tensor, p: float, training: bool, seed: int = 0) -> Tensor:
    """Inverted dropout; the keep mask is a pure function of the seed."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    u = CounterRNG(seed).uniform(x.data.size)
    mask = (u >= p).astype(x.data.dtype).reshape(x.data.shape) * (1.0 / (1.0 - p))
    out = x.data * mask

    def bw(g):
        return (g * mask,)

    return _record("dropout", out, (x,), bw)


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    xd = x.data
    pos = xd > 0
    out = np.where(pos, xd, alpha * np.expm1(xd))
    deriv = np.where(pos, np.asarray(1.0, dtype=xd.dtype), out + alpha)

    def bw(g):
        return (g * deriv,)

    return _record("elu", out, (x,), bw)


def log_softmax(x: Tensor, axis: int = 1) -> Tensor:
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    s = xd - m
    out = s - np.log(np.exp(s).sum(axis=axis, keepdims=True))
    sm = np.exp(out)

    def bw(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _record("log_softmax", out, (x,), bw)
