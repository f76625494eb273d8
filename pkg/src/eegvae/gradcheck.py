"""Finite-difference verification of the recorded gradients.

grad_check runs a closure twice: once in float32 through the tape to collect
analytic gradients, then element by element in float64 with central
differences (f(x+h) - f(x-h)) / 2h.  Relative error uses
|a - n| / max(|a|, |n|, 1e-6) so zero gradients do not blow up the ratio.

The standard battery covers every differentiable op at a few random shapes;
the CLI's gradcheck subcommand and the test suite both run it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import UsageError
from .rng import CounterRNG, derive


@dataclass
class GradCheckReport:
    passed: bool
    worst_rel: float
    worst_input: int          # index of the closure argument with the worst element
    worst_index: tuple        # element index inside that argument
    n_checked: int
    per_input_worst: list = field(default_factory=list)


def grad_check(op_closure, inputs, h: float = 1e-3, tol_rel: float = 1e-3) -> GradCheckReport:
    """Compare tape gradients of a scalar-valued closure against central differences.

    inputs: list of float32 Tensors with requires_grad=True; the closure is
    re-invoked on float64 copies for the numeric side, so it must not capture
    the originals.
    """
    for t in inputs:
        t.zero_grad()
    out = op_closure(*inputs)
    if not isinstance(out, T.Tensor) or out.data.size != 1:
        raise UsageError("grad_check closure must return a scalar Tensor")
    T.backward(out)
    analytic = [np.zeros_like(t.data, dtype=np.float64) if t.grad is None
                else t.grad.astype(np.float64) for t in inputs]

    base = [t.data.astype(np.float64) for t in inputs]

    def eval64(arrays):
        args = [T.Tensor(a) for a in arrays]
        with T.no_grad():
            return float(op_closure(*args).data.reshape(()))

    worst_rel = 0.0
    worst_input, worst_index = -1, ()
    n_checked = 0
    per_input_worst = []
    for i, a in enumerate(base):
        worst_i = 0.0
        flat = a.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = eval64(base)
            flat[j] = orig - h
            fm = eval64(base)
            flat[j] = orig
            numeric = (fp - fm) / (2.0 * h)
            ana = analytic[i].reshape(-1)[j]
            rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-6)
            n_checked += 1
            if rel > worst_i:
                worst_i = rel
            if rel > worst_rel:
                worst_rel = rel
                worst_input = i
                worst_index = np.unravel_index(j, a.shape)
        per_input_worst.append(worst_i)
    return GradCheckReport(
        passed=worst_rel <= tol_rel,
        worst_rel=worst_rel,
        worst_input=worst_input,
        worst_index=tuple(int(v) for v in worst_index),
        n_checked=n_checked,
        per_input_worst=per_input_worst,
    )


def _rand(shape, seed, low=-1.0, high=1.0):
    n = int(np.prod(shape))
    data = CounterRNG(seed).uniform(n, low, high).astype(np.float32).reshape(shape)
    return T.Tensor(data, requires_grad=True)


def _away_from_zero(shape, seed):
    """Values in [0.25, 1.0] with random signs; keeps elu/max kinks at bay."""
    n = int(np.prod(shape))
    rng = CounterRNG(seed)
    mag = rng.uniform(n, 0.25, 1.0)
    sign = np.where(rng.uniform(n) < 0.5, -1.0, 1.0)
    return T.Tensor((mag * sign).astype(np.float32).reshape(shape), requires_grad=True)


def standard_battery(seed: int = 0, tol_rel: float = 1e-3):
    """Run grad_check over every op at several random small shapes.

    Returns a list of (name, GradCheckReport).
    """
    results = []

    def run(name, closure, inputs):
        results.append((name, grad_check(closure, inputs, tol_rel=tol_rel)))

    def s(*ix):
        return derive(seed, len(results), *ix)

    # elementwise and broadcast
    run("add.broadcast", lambda a, b: T.tsum(T.add(a, b)),
        [_rand((3, 4), s(0)), _rand((4,), s(1))])
    run("sub", lambda a, b: T.tsum(T.mul(T.sub(a, b), T.sub(a, b))),
        [_rand((2, 3), s(0)), _rand((2, 3), s(1))])
    run("mul.broadcast", lambda a, b: T.tsum(T.mul(a, b)),
        [_rand((2, 3, 2), s(0)), _rand((3, 1), s(1))])
    run("exp", lambda a: T.tsum(T.exp(a)), [_rand((5, 3), s(0))])
    run("neg", lambda a: T.tsum(T.neg(T.mul(a, a))), [_rand((7,), s(0))])

    # linear algebra
    run("matmul", lambda a, b: T.tsum(T.matmul(a, b)),
        [_rand((4, 3), s(0)), _rand((3, 5), s(1))])
    run("linear", lambda x, w, b: T.tsum(T.mul(T.linear(x, w, b), T.linear(x, w, b))),
        [_rand((3, 4), s(0)), _rand((4, 2), s(1)), _rand((2,), s(2))])

    # shape moves
    run("reshape", lambda a: T.tsum(T.mul(T.reshape(a, (6, 2)), T.reshape(a, (6, 2)))),
        [_rand((3, 4), s(0))])
    run("concat", lambda a, b: T.tsum(T.mul(T.concat([a, b], axis=1), T.concat([a, b], axis=1))),
        [_rand((2, 3), s(0)), _rand((2, 2), s(1))])
    run("narrow", lambda a: T.tsum(T.mul(T.narrow(a, 1, 1, 2), T.narrow(a, 1, 1, 2))),
        [_rand((3, 5), s(0))])
    run("take_per_row", lambda a: T.tsum(T.take_per_row(a, np.array([2, 0, 1]))),
        [_rand((3, 4), s(0))])
    run("sum.axis", lambda a: T.tsum(T.mul(T.tsum(a, axis=1), T.tsum(a, axis=1))),
        [_rand((3, 4), s(0))])
    run("mean.axis", lambda a: T.tsum(T.mul(T.tmean(a, axis=(0, 2)), T.tmean(a, axis=(0, 2)))),
        [_rand((2, 3, 4), s(0))])
    run("pad2d", lambda a: T.tsum(T.mul(T.pad2d(a, (1, 2, 0, 1)), T.pad2d(a, (1, 2, 0, 1)))),
        [_rand((2, 2, 3, 4), s(0))])
    run("crop2d", lambda a: T.tsum(T.mul(T.crop2d(a, (1, 0, 1, 1)), T.crop2d(a, (1, 0, 1, 1)))),
        [_rand((2, 2, 4, 5), s(0))])

    # convolutions, several geometries
    run("conv2d.basic", lambda x, w: T.tsum(T.mul(T.conv2d(x, w), T.conv2d(x, w))),
        [_rand((2, 2, 5, 6), s(0)), _rand((3, 2, 3, 3), s(1))])
    run("conv2d.stride_pad", lambda x, w: T.tsum(T.mul(T.conv2d(x, w, stride=(2, 3), padding=(1, 2)),
                                                       T.conv2d(x, w, stride=(2, 3), padding=(1, 2)))),
        [_rand((2, 2, 7, 8), s(0)), _rand((4, 2, 3, 3), s(1))])
    run("conv2d.groups", lambda x, w: T.tsum(T.mul(T.conv2d(x, w, groups=2), T.conv2d(x, w, groups=2))),
        [_rand((2, 4, 4, 5), s(0)), _rand((6, 2, 2, 3), s(1))])
    run("conv2d.depthwise_1d", lambda x, w: T.tsum(T.mul(T.conv2d_same(x, w, groups=4),
                                                         T.conv2d_same(x, w, groups=4))),
        [_rand((2, 4, 1, 9), s(0)), _rand((4, 1, 1, 4), s(1))])
    run("conv_transpose2d.basic",
        lambda x, w: T.tsum(T.mul(T.conv_transpose2d(x, w), T.conv_transpose2d(x, w))),
        [_rand((2, 3, 4, 4), s(0)), _rand((3, 2, 3, 3), s(1))])
    run("conv_transpose2d.stride",
        lambda x, w: T.tsum(T.mul(T.conv_transpose2d(x, w, stride=(2, 2), padding=(1, 0)),
                                  T.conv_transpose2d(x, w, stride=(2, 2), padding=(1, 0)))),
        [_rand((2, 4, 3, 4), s(0)), _rand((4, 3, 3, 3), s(1))])
    run("conv_transpose2d.groups_same",
        lambda x, w: T.tsum(T.mul(T.conv_transpose2d_same(x, w, groups=3),
                                  T.conv_transpose2d_same(x, w, groups=3))),
        [_rand((2, 6, 1, 7), s(0)), _rand((6, 2, 1, 4), s(1))])

    # pooling and resize
    run("avg_pool2d", lambda x: T.tsum(T.mul(T.avg_pool2d(x, (1, 4)), T.avg_pool2d(x, (1, 4)))),
        [_rand((2, 3, 2, 8), s(0))])
    run("upsample_nearest", lambda x: T.tsum(T.mul(T.upsample_nearest(x, (1, 3)),
                                                   T.upsample_nearest(x, (1, 3)))),
        [_rand((2, 2, 3, 4), s(0))])

    # nn ops
    # sum(y*y) of a batch-norm output is nearly invariant to x (the batch
    # statistics absorb the perturbation), so weight with a fixed random
    # tensor to keep dL/dx at O(1).
    bn_w = CounterRNG(s(9)).uniform(4 * 3 * 2 * 5, -1.0, 1.0)

    def bn_train(x, gamma, beta):
        rm = np.zeros(3, dtype=np.float32)
        rv = np.ones(3, dtype=np.float32)
        y = T.batch_norm2d(x, gamma, beta, rm, rv, training=True)
        w = T.Tensor(bn_w.astype(y.data.dtype).reshape(y.data.shape))
        return T.tsum(T.add(T.mul(y, w), T.mul(T.mul(y, y), w)))

    run("batch_norm2d.train", bn_train,
        [_rand((4, 3, 2, 5), s(0)), _rand((3,), s(1), 0.5, 1.5), _rand((3,), s(2))])

    def bn_eval(x, gamma, beta):
        rm = CounterRNG(s(7)).uniform(3, -0.5, 0.5).astype(np.float32)
        rv = CounterRNG(s(8)).uniform(3, 0.5, 1.5).astype(np.float32)
        y = T.batch_norm2d(x, gamma, beta, rm, rv, training=False)
        return T.tsum(T.mul(y, y))

    run("batch_norm2d.eval", bn_eval,
        [_rand((2, 3, 2, 4), s(0)), _rand((3,), s(1), 0.5, 1.5), _rand((3,), s(2))])

    run("dropout.frozen_mask",
        lambda x: T.tsum(T.mul(T.dropout(x, 0.4, training=True, seed=s(3)),
                               T.dropout(x, 0.4, training=True, seed=s(3)))),
        [_rand((3, 4), s(0))])
    run("elu", lambda x: T.tsum(T.mul(T.elu(x), T.elu(x))), [_away_from_zero((4, 5), s(0))])
    run("log_softmax", lambda x: T.tsum(T.mul(T.log_softmax(x, axis=1), T.log_softmax(x, axis=1))),
        [_rand((3, 5), s(0))])
    return results
