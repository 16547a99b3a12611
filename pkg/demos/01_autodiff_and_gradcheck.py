"""Tour of the tensor engine: tapes, gradients, and the FD oracle.

Builds a few small graphs, differentiates them, and verifies every
gradient against central differences.
"""

import numpy as np

from moesumm.gradcheck import finite_diff_check
from moesumm.tensor import (Tape, Tensor, add, backward, gelu, layernorm,
                            matmul, mean, pow_int, softmax, sum_)

print("=== a scalar chain: mean((x - 2)^2) at x = 0 ===")
x = Tensor([0.0], requires_grad=True)
with Tape() as tape:
    loss = mean(pow_int(add(x, -2.0), 2))
    backward(loss, tape)
print(f"loss = {loss.item():.4f}, grad = {x.grad}  (hand derivative: 2(x-2) = -4)")

print("\n=== softmax rows always sum to 1, so its sum has zero gradient ===")
z = Tensor(np.random.default_rng(0).normal(size=6), requires_grad=True)
z.zero_grad()
with Tape() as tape:
    backward(sum_(softmax(z)), tape)
print(f"max |grad| = {np.abs(z.grad).max():.2e}")

print("\n=== a small MLP block, checked against central differences ===")
rng = np.random.default_rng(1)
w1 = Tensor(rng.normal(0, 0.2, size=(6, 8)), requires_grad=True)
w2 = Tensor(rng.normal(0, 0.2, size=(8, 4)), requires_grad=True)
gain = Tensor(np.ones(4), requires_grad=True)
offset = Tensor(np.zeros(4), requires_grad=True)
inp = Tensor(rng.normal(size=(3, 6)))


def f():
    h = gelu(matmul(inp, w1))
    return sum_(layernorm(matmul(h, w2), gain, offset))


report = finite_diff_check(f, [("w1", w1), ("w2", w2), ("gain", gain),
                               ("offset", offset)])
print(f"checked {len(report.coords)} coordinates, "
      f"max relative error {report.max_rel_err:.2e} -> "
      f"{'PASS' if report.passed else 'FAIL'}")
