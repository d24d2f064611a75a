# %% [markdown]
# # Exact gradients and estimator fidelity
# For small latent spaces the expected loss can be enumerated, so the true
# gradient with respect to the logits is available. Sampled estimator
# gradients are then scored by relative bias and relative spread.

# %%
import numpy as np

from discrete_grad.data import synthetic
from discrete_grad.estimators import EstimatorConfig
from discrete_grad.models import categorical_vae_spec, init_model
from discrete_grad.oracle import bias_variance, exact_expected_loss, monte_carlo_expected_loss

spec = categorical_vae_spec(4, 3, hidden=(32,))
params = init_model(spec, 0)
x = synthetic(8, seed=2).images
exact = exact_expected_loss(params, x, spec).item()
mc, se = monte_carlo_expected_loss(params, x, spec, 20_000, np.random.default_rng(0))
print(f"enumerated {exact:.3f}, Monte Carlo {mc:.3f} +- {se:.3f}")

# %%
for tf, tb in ((1.0, 0.5), (1.0, 1.0), (1.0, 2.0), (0.5, 1.0), (2.0, 1.0)):
    s = bias_variance(params, x, spec, EstimatorConfig("decoupled_st_gs", tf, tb), n_draws=256)
    print(f"tau_f={tf} tau_b={tb}: relative bias {s.relative_bias:.3f}, relative std {s.relative_std:.3f}")
