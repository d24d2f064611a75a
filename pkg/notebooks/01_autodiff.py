# %% [markdown]
# # Reverse-mode autodiff
# A tiny tape over numpy arrays. Every op records a backward rule, and
# `backward` walks the graph in reverse topological order.

# %%
import numpy as np

from discrete_grad import autodiff as ad
from discrete_grad.autodiff import Tensor
from discrete_grad.selftest import finite_difference

x = Tensor(3.0, requires_grad=True)
ad.backward(x * x)
print("d/dx x*x at 3:", x.grad)

# %% [markdown]
# Gradients agree with central differences. Here: softmax followed by a
# random projection.

# %%
rng = np.random.default_rng(0)
l = rng.normal(size=5)
c = rng.normal(size=5)
leaf = Tensor(l, requires_grad=True)
ad.backward(ad.sum(ad.softmax(leaf) * c))
numeric = finite_difference(lambda: float((ad.softmax(Tensor(l)).data * c).sum()), l)
print("analytic:", leaf.grad)
print("numeric: ", numeric)

# %% [markdown]
# `straight_through` returns a constant forward value but sends the incoming
# gradient to a surrogate. This is the building block of every
# straight-through estimator.

# %%
leaf = Tensor(l, requires_grad=True)
soft = ad.softmax(leaf)
hard = np.eye(5)[np.argmax(l)]
z = ad.straight_through(hard, soft)
ad.backward(ad.sum(z * c))
print("forward:", z.data)
print("grad equals the softmax Jacobian^T c:",
      np.allclose(leaf.grad, (np.diag(soft.data) - np.outer(soft.data, soft.data)) @ c))
