"""A tour of the tensor core: values, graphs, gradients.

The library trains real models with the same handful of primitives shown
here. Everything is a numpy array underneath; wrapping one in a Tensor with
requires_grad=True makes downstream operations record a graph that
``backward`` sweeps in reverse.
"""

import numpy as np

import rcldt.tensor as tt

# two small parameters and a forward pass
rng = np.random.default_rng(0)
w = tt.parameter(rng.standard_normal((3, 2)), dtype=np.float64)
x = tt.constant(rng.standard_normal((4, 3)), dtype=np.float64)

hidden = tt.gelu(tt.matmul(x, w))
probs = tt.softmax(hidden)
loss = tt.tmean(probs * probs)
print(f"loss = {loss.item():.6f}")

tt.backward(loss)
print(f"grad shape {w.grad.shape}, |grad| max = {np.abs(w.grad).max():.2e}")

# verify one entry against a central finite difference
i, j, h = 1, 0, 1e-6
orig = w.data[i, j]


def value():
    hid = 0.5 * (x.data @ w.data) * (1 + np.tanh(
        np.sqrt(2 / np.pi) * ((x.data @ w.data) + 0.044715 * (x.data @ w.data) ** 3)))
    e = np.exp(hid - hid.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    return float(np.mean(p * p))


w.data[i, j] = orig + h
up = value()
w.data[i, j] = orig - h
down = value()
w.data[i, j] = orig
fd = (up - down) / (2 * h)
print(f"analytic {w.grad[i, j]:+.8f}  finite-difference {fd:+.8f}")

# gradients accumulate across uses of the same tensor
w.zero_grad()
y = tt.tsum(w * 2.0) + tt.tsum(w * w)
tt.backward(y)
print("accumulated gradient of w*2 + w^2 at w[0,0]:",
      w.grad[0, 0], "= 2 + 2*w =", 2 + 2 * w.data[0, 0])
