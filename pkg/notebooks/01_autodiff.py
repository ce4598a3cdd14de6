"""
Reverse-mode autodiff on numpy arrays
=====================================

Every op records its parents and a backward closure. ``backward`` sorts the
graph once and walks it in reverse.
"""

# %%
import numpy as np

from ssformer import ops
from ssformer.gradcheck import check_function
from ssformer.tensor import Tensor, backward, count_macs

x = Tensor(np.array([[1.0, -2.0, 0.5]]), requires_grad=True)
w = Tensor(np.array([[0.3], [0.1], [-0.7]]), requires_grad=True)
y = ops.sum(ops.gelu(ops.matmul(x, w)))
backward(y)
print("dy/dx", x.grad)
print("dy/dw", w.grad.ravel())

# %%
# The gradient agrees with central differences in float64.
err = check_function(lambda a, b: ops.softmax(ops.matmul(a, b)), [np.random.randn(3, 4), np.random.randn(4, 5)])
print(f"softmax(matmul) max relative error {err:.1e}")

# %%
# Counting multiply-accumulates while running a forward pass.
with count_macs() as macs:
    ops.matmul(Tensor(np.ones((8, 16))), Tensor(np.ones((16, 4))))
print("MACs", macs.total, macs.by_op)
