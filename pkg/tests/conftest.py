import numpy as np
import pytest

from discrete_grad.data import synthetic
from discrete_grad.models import CategoricalLatentSpec, MlpSpec, ModelSpec, init_model


def small_spec(kind="vae", dims=2, k=3, input_dim=6, hidden=5, beta=0.0):
    code = dims * k
    dec_in = dims if kind == "binary_ae" else code
    return ModelSpec(
        kind,
        CategoricalLatentSpec(dims, k),
        MlpSpec((input_dim, hidden, code), ("relu", "none")),
        MlpSpec((dec_in, hidden, input_dim), ("relu", "sigmoid")),
        beta=beta,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_vae():
    spec = small_spec()
    return spec, init_model(spec, 0)


@pytest.fixture(scope="session")
def synth_data():
    return synthetic(240, seed=3, val_fraction=1 / 6)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    report = getattr(mod, "REPORT", None)
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(report):
        terminalreporter.write_line(report[n])
