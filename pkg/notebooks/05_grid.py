# %% [markdown]
# # Temperature grids
# Every (tau_f, tau_b, seed) cell is an independent training run. Results
# go to a long-format CSV and can be pivoted into a heatmap.

# %%
from discrete_grad.data import synthetic
from discrete_grad.experiments import ExperimentGrid, best_cell, emit_csv, pivot, run_grid
from discrete_grad.models import binary_ae_spec
from discrete_grad.training import default_run

data = synthetic(400, seed=0)
base = default_run("binary_ae", dataset="synthetic", epochs=2, learning_rate=1e-3)
base = base.replace(model=binary_ae_spec(bits=16, hidden=(64,)))
grid = ExperimentGrid((0.3, 1.0, 3.0), (0.3, 1.0, 3.0), (0, 1), base)
results = run_grid(grid, data)
emit_csv(results, "/tmp/grid_demo.csv")

tbs, tfs, mat = pivot(results)
print("rows tau_b", tbs, "cols tau_f", tfs)
print(mat.round(4))
print("best cell:", best_cell(results), " best diagonal:", best_cell(results, diagonal_only=True))
