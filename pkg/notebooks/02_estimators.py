# %% [markdown]
# # Straight-through Gumbel-softmax with two temperatures
# The forward temperature decides how sharp the relaxation is when picking
# the hard sample. The backward temperature shapes the surrogate whose
# Jacobian carries the gradient. Both use the same Gumbel noise.

# %%
import numpy as np

from discrete_grad import autodiff as ad
from discrete_grad.autodiff import Tensor
from discrete_grad.estimators import EstimatorConfig, Schedule, relax, sample_gumbel, sample_latent

rng = np.random.default_rng(1)
logits = rng.normal(size=(1, 1, 4))
g = sample_gumbel(logits.shape, rng)
for tau in (0.1, 1.0, 10.0):
    print(f"tau={tau:>4}: relaxed = {np.round(relax(logits, g, tau).data.ravel(), 3)}")

# %% [markdown]
# The hard sample does not depend on the backward temperature; the gradient does.

# %%
c = rng.normal(size=logits.shape)
for tb in (0.3, 1.0, 3.0):
    leaf = Tensor(logits, requires_grad=True)
    block = sample_latent(leaf, EstimatorConfig("decoupled_st_gs", 0.5, tb), gumbel=g)
    ad.backward(ad.sum(block.output * c))
    print(f"tau_b={tb}: z={block.hard.ravel()}, |grad|={np.linalg.norm(leaf.grad):.4f}")

# %% [markdown]
# With tau_f = 1 the hard samples follow softmax(logits) exactly (Gumbel-max).

# %%
l = rng.normal(size=5)
batch = np.tile(l, (100_000, 1, 1))
z = sample_latent(Tensor(batch), EstimatorConfig("decoupled_st_gs", 1.0, 2.0), rng).hard
print("empirical:", np.round(z.mean(axis=0).ravel(), 4))
print("softmax:  ", np.round(np.exp(l) / np.exp(l).sum(), 4))

# %% [markdown]
# Temperatures can be annealed per step, linearly or geometrically.

# %%
s = Schedule(0.3, 0.03, 10, "geometric")
print([round(s.value(t), 4) for t in range(0, 11, 2)])
