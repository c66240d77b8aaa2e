"""
Autograd basics
===============

The package ships its own reverse-mode autodiff engine on top of numpy.
This demo builds a tiny computation, runs a backward pass, shows that
gradients accumulate across parameter reuse (the property that makes
recursive weight sharing work), and validates an analytic gradient
against central finite differences.
"""

import numpy as np

import drt
from drt.tensor import grad_check, tensor_sum

# a small expression: loss = sum((x @ w) * probe)
rng = np.random.default_rng(0)
x = drt.Tensor(rng.uniform(-1, 1, size=(4, 3)), dtype=np.float64)
w = drt.Tensor(rng.uniform(-1, 1, size=(3, 2)), requires_grad=True, dtype=np.float64)
probe = drt.Tensor(rng.uniform(-1, 1, size=(4, 2)), dtype=np.float64)

loss = tensor_sum(drt.matmul(x, w) * probe)
loss.backward()
print("loss:", loss.item())
print("dloss/dw:\n", w.grad)

# the same parameter used twice sums both contributions
w.grad = None
loss2 = tensor_sum(drt.matmul(x, w) * probe) + tensor_sum(drt.matmul(x, w) * probe)
loss2.backward()
print("\nreused parameter gets the summed gradient (2x):")
print(w.grad / 2.0)

# finite-difference validation (float64 only)
w.grad = None
report = grad_check(lambda v: tensor_sum(drt.matmul(x, v) * probe), w, step=1e-5, tolerance=1e-6)
print("\n" + str(report))

# softmax is shift-invariant and rows sum to one
s = drt.softmax(drt.Tensor([1.0, 2.0, 3.0]))
print("\nsoftmax([1,2,3]) =", s.data, "sum =", s.data.sum())
