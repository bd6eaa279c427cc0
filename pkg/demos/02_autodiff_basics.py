"""Tour of the autodiff core: build a graph, differentiate, verify by hand.

The library trains everything on a small reverse-mode tape over float64
numpy arrays. This script differentiates a toy expression, checks it against
central finite differences, and shows the Chamfer loss producing gradients
through nearest-neighbor assignments.
"""

import numpy as np

from cloudmae import Tensor, backward, chamfer_l2, gradient_check
from cloudmae import autodiff as ad

# y = sum(softmax(W x) * c) -- gradients for both W and x
rng = np.random.default_rng(0)
W = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
x = Tensor(rng.normal(size=(4, 1)), requires_grad=True)
c = Tensor(rng.normal(size=(4, 1)))

y = ad.reduce_sum(ad.softmax(ad.transpose(ad.matmul(W, x))) * ad.transpose(c))
backward(y)
print("dy/dW row 0:", np.round(W.grad[0], 4))
print("dy/dx     :", np.round(x.grad.ravel(), 4))

err = gradient_check(
    lambda W_, x_: ad.reduce_sum(ad.softmax(ad.transpose(ad.matmul(W_, x_)))
                                 * ad.transpose(c)),
    [W, x])
print(f"max relative error vs central differences: {err:.2e}")

# Chamfer distance is differentiable w.r.t. the predicted set
pred = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
target = Tensor(rng.normal(size=(8, 3)))
loss = chamfer_l2(pred, target)
backward(loss)
print(f"\nchamfer loss {float(loss.data):.4f}; "
      f"gradient norm per predicted point:")
print(np.round(np.linalg.norm(pred.grad, axis=1), 4))

# a second backward through the same graph is refused
try:
    backward(loss)
except Exception as exc:
    print(f"\nre-running backward raises: {exc}")
