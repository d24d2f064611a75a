import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from discrete_grad import autodiff as ad
from discrete_grad.autodiff import Tensor
from discrete_grad.errors import ConfigError
from discrete_grad.estimators import (
    EstimatorConfig,
    Schedule,
    estimate,
    gumbel_from_uniform,
    hard_sample,
    relax,
    sample_gumbel,
    sample_latent,
    schedule_value,
)


def test_gumbel_inverse_points():
    assert gumbel_from_uniform(1 / np.e) == pytest.approx(0.0, abs=1e-15)
    assert gumbel_from_uniform(np.exp(-1 / np.e)) == pytest.approx(1.0, rel=1e-14)


def test_gumbel_mean_is_euler_gamma():
    g = sample_gumbel(10**6, np.random.default_rng(0))
    assert abs(g.mean() - np.euler_gamma) < 0.01
    assert np.all(np.isfinite(g))


def test_relax_examples():
    assert np.allclose(relax([0.0, 0.0], [0.0, 0.0], 0.37).data, [0.5, 0.5])
    e = np.e
    assert np.allclose(relax([1.0, 0.0], [0.0, 0.0], 1.0).data, [e / (e + 1), 1 / (e + 1)])
    big = relax([3.0, -1.0], [0.2, -0.1], 1e6).data
    assert np.allclose(big, [0.5744, 0.4256], atol=5e-5)


def test_relax_rejects_bad_tau():
    for tau in (0.0, -1.0):
        with pytest.raises(ConfigError):
            relax([0.0, 1.0], [0.0, 0.0], tau)


def test_hard_sample_examples():
    assert np.array_equal(hard_sample(np.array([0.1, 0.7, 0.2])), [0, 1, 0])
    assert np.array_equal(hard_sample(np.array([0.5, 0.5])), [1, 0])


def test_gumbel_max_marginals():
    from discrete_grad.selftest import check_gumbel_max

    assert check_gumbel_max(seed=7).passed


def test_collapse_to_single_temperature(rng):
    from discrete_grad.selftest import check_collapse

    assert check_collapse(n_triples=20, seed=3).passed


def test_decoupled_gradient_is_backward_jacobian(rng):
    l = rng.normal(size=(1, 1, 5))
    g = sample_gumbel(l.shape, rng)
    c = rng.normal(size=l.shape)
    tf, tb = 0.4, 2.5
    leaf = Tensor(l, requires_grad=True)
    z = estimate(leaf, EstimatorConfig("decoupled_st_gs", tf, tb), gumbel=g)
    ad.backward(ad.sum(z * c))
    zb = np.exp(l / tb + g)
    zb /= zb.sum()
    s = zb.ravel()
    expected = ((np.diag(s) - np.outer(s, s)) / tb) @ c.ravel()
    assert np.allclose(leaf.grad.ravel(), expected, rtol=1e-12, atol=1e-15)
    # the forward value only depends on tau_f
    assert np.array_equal(z.data, hard_sample(l / tf + g))


def test_forward_invariant_to_tau_backward(rng):
    l = rng.normal(size=(4, 3, 6))
    outs = [estimate(Tensor(l), EstimatorConfig("decoupled_st_gs", 0.8, tb), np.random.default_rng(9)).data
            for tb in (0.3, 3.0, 30.0)]
    assert np.array_equal(outs[0], outs[1]) and np.array_equal(outs[1], outs[2])


def test_ste_forward_is_argmax_of_probs_and_gradient_is_softmax_jacobian(rng):
    l = rng.normal(size=(2, 1, 4))
    c = rng.normal(size=l.shape)
    leaf = Tensor(l, requires_grad=True)
    z = estimate(leaf, EstimatorConfig("ste"))
    assert np.array_equal(z.data, hard_sample(l))
    ad.backward(ad.sum(z * c))
    check = Tensor(l, requires_grad=True)
    ad.backward(ad.sum(ad.softmax(check) * c))
    assert np.allclose(leaf.grad, check.grad, rtol=1e-14)


def test_gumbel_softmax_outputs_relaxation(rng):
    l = rng.normal(size=(3, 2, 4))
    g = sample_gumbel(l.shape, rng)
    z = estimate(Tensor(l), EstimatorConfig("gumbel_softmax", 0.5), gumbel=g)
    assert np.allclose(z.data, relax(l, g, 0.5).data)


def test_eval_mode_is_noiseless(rng):
    l = rng.normal(size=(5, 3, 4))
    z = estimate(Tensor(l), EstimatorConfig(), training=False)
    assert np.array_equal(z.data, hard_sample(l))


def test_config_validation():
    with pytest.raises(ConfigError):
        EstimatorConfig("unknown")
    with pytest.raises(ConfigError):
        EstimatorConfig("st_gs", 1.0, 2.0)
    with pytest.raises(ConfigError):
        EstimatorConfig("decoupled_st_gs", 0.0, 1.0)
    assert EstimatorConfig("st_gs", 0.5).tau_backward == 0.5


def test_schedule_examples():
    assert schedule_value(Schedule(1.0, 0.3, 100), 100) == 0.3
    assert schedule_value(Schedule(1.0, 0.3, 100), 0) == 1.0
    geo = Schedule(0.3, 0.03, 10, "geometric")
    assert abs(geo.value(5) - 0.3 * np.sqrt(0.1)) < 1e-12
    assert abs(geo.value(5) - 0.09487) < 1e-5
    lin = Schedule(1.0, 2.0, 10)
    assert abs(lin.value(5) - 1.5) < 1e-12
    assert lin.value(50) == 2.0 and lin.value(-3) == 1.0


def test_schedule_validation():
    for bad in ((0.0, 1.0), (1.0, -1.0)):
        with pytest.raises(ConfigError):
            Schedule(*bad, 10)
    with pytest.raises(ConfigError):
        Schedule(1.0, 2.0, 10, "cosine")


def test_scheduled_temperatures_follow_step():
    cfg = EstimatorConfig("decoupled_st_gs", 1.0, 1.0, Schedule(1.0, 0.3, 1), Schedule(5.0, 3.0, 1)).with_total_steps(10)
    assert cfg.temperatures(0) == (1.0, 5.0)
    assert cfg.temperatures(10) == (0.3, 3.0)
    tf, tb = cfg.temperatures(5)
    assert abs(tf - 0.65) < 1e-12 and abs(tb - 4.0) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.05, 5.0), st.integers(0, 2**31 - 1),
       st.integers(1, 3), st.integers(2, 6))
def test_latent_block_invariants(tf, tb, seed, dims, k):
    rng = np.random.default_rng(seed)
    l = rng.normal(scale=3.0, size=(2, dims, k))
    block = sample_latent(Tensor(l), EstimatorConfig("decoupled_st_gs", tf, tb), rng)
    assert np.allclose(block.probs.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(block.hard.sum(axis=-1) == 1) and set(np.unique(block.hard)) <= {0.0, 1.0}
    assert np.array_equal(np.argmax(block.relaxed_forward.data, -1), np.argmax(l / tf + block.gumbel, -1))
    assert np.array_equal(block.output.data, block.hard)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0), st.floats(0.01, 100.0), st.integers(1, 1000), st.integers(0, 1000),
       st.sampled_from(["linear", "geometric"]))
def test_schedule_monotone_between_endpoints(a, b, total, step, interp):
    s = Schedule(a, b, total, interp)
    v = s.value(step)
    assert min(a, b) - 1e-12 <= v <= max(a, b) + 1e-12
    if step < total:
        nxt = s.value(step + 1)
        assert (nxt - v) * (b - a) >= -1e-12
