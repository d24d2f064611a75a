# %% [markdown]
# # Gradient gap
# The gap compares the gradient of the fully relaxed pass with the
# straight-through gradient at the same noise. Here it is measured on models
# trained at each backward temperature.

# %%
from discrete_grad.data import synthetic
from discrete_grad.experiments import aggregate, gap_sweep
from discrete_grad.models import binary_ae_spec
from discrete_grad.training import default_run

data = synthetic(400, seed=0)
base = default_run("binary_ae", dataset="synthetic", epochs=2, learning_rate=1e-3)
base = base.replace(model=binary_ae_spec(bits=16, hidden=(64,)))
results = gap_sweep(base, data, tau_forward=0.3, tau_backward=(0.3, 1.0, 3.0, 6.0), seeds=(0, 1))
for (tf, tb), stats in aggregate(results).items():
    print(f"tau_b={tb}: mean gap {stats['gradient_gap'][0]:.3e}")
