"""
Recording gradients with the tensor engine
==========================================

Build a tiny expression, run the backward pass, and compare the result
against the derivative worked out by hand.
"""

import numpy as np

import eegvae.tensor as T

# y = sum((a * b + a)^2); only tensors created with requires_grad=True
# participate in the tape.
a = T.tensor([1.0, 2.0, -3.0], requires_grad=True)
b = T.tensor([0.5, -1.0, 2.0], requires_grad=True)

prod = T.add(T.mul(a, b), a)
y = T.tsum(T.mul(prod, prod))
y.backward()

# d y / d a = 2 * (a*b + a) * (b + 1), d y / d b = 2 * (a*b + a) * a
av, bv = a.data, b.data
print("a.grad       ", a.grad)
print("hand formula ", 2 * (av * bv + av) * (bv + 1))
print("b.grad       ", b.grad)
print("hand formula ", 2 * (av * bv + av) * av)

# no_grad() turns recording off: useful for evaluation loops
with T.no_grad():
    silent = T.mul(a, a)
print("recorded under no_grad:", silent.requires_grad)

# a convolution and its gradient, same mechanics
x = T.tensor(np.random.default_rng(0).normal(size=(1, 1, 4, 16)), requires_grad=True)
w = T.tensor(np.random.default_rng(1).normal(size=(2, 1, 1, 5)), requires_grad=True)
out = T.conv2d(x, w, stride=(1, 1), padding=(0, 2))
T.tsum(T.mul(out, out)).backward()
print("conv output shape", out.data.shape)
print("x.grad / w.grad shapes", x.grad.shape, w.grad.shape)
