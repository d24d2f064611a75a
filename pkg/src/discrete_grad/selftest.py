"""Oracle suites runnable without any dataset.

Each ``check_*`` function returns a :class:`CheckResult`; :func:`run_all`
runs the four of them in order. The oracles here never call the code path
under test for their reference values: gradients are compared with central
finite differences, sampling frequencies with closed-form probabilities and
the enumerated expectation with plain Monte Carlo.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import synthetic_images
from .estimators import EstimatorConfig, sample_gumbel, sample_latent
from .models import MlpSpec, ModelSpec, CategoricalLatentSpec, encode, init_model
from .oracle import exact_expected_loss, exact_gradient, monte_carlo_expected_loss

FD_STEP = 1e-5
FD_RTOL = 1e-4
FD_ATOL = 1e-7


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0
    failures: List[str] = field(default_factory=list)

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def finite_difference(f: Callable[[], float], arr: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place, restored)."""
    grad = np.zeros(arr.shape)
    for i in np.ndindex(arr.shape):
        orig = arr[i]
        arr[i] = orig + h
        up = f()
        arr[i] = orig - h
        down = f()
        arr[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad


# ----------------------------------------------------------- op catalogue


def _rand_shape(rng, ndim_range=(1, 3), max_dim=4):
    return tuple(int(d) for d in rng.integers(1, max_dim + 1, size=rng.integers(*ndim_range, endpoint=True)))


def _separated(rng, shape, gap=1e-2):
    """Random values whose rowwise maxima are unique by at least ``gap``."""
    while True:
        x = rng.normal(size=shape)
        s = np.sort(x, axis=-1)
        if s.shape[-1] == 1 or np.min(s[..., -1] - s[..., -2]) > gap:
            return x


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, margin * np.sign(x + 1e-300) * 2, x)


def op_cases():
    """name -> builder(rng) returning (inputs, fn(*tensors) -> Tensor)."""

    def binary(fn, suffix=False):
        def build(rng):
            shape = _rand_shape(rng)
            bshape = shape[rng.integers(0, len(shape)):] if suffix and rng.random() < 0.5 else shape
            return [rng.normal(size=shape), rng.normal(size=bshape)], fn

        return build

    def unary(fn, gen=None, **shape_kw):
        def build(rng):
            shape = _rand_shape(rng, **shape_kw)
            x = gen(rng, shape) if gen else rng.normal(size=shape)
            return [x], fn

        return build

    def matmul_case(rng):
        n, k, m = rng.integers(1, 5, size=3)
        return [rng.normal(size=(n, k)), rng.normal(size=(k, m))], ad.matmul

    def scale_case(rng):
        c = float(rng.normal())
        return [rng.normal(size=_rand_shape(rng))], lambda a: ad.scale(a, c)

    def sum_case(rng):
        shape = _rand_shape(rng)
        axis = None if rng.random() < 0.3 else int(rng.integers(0, len(shape)))
        keep = bool(rng.random() < 0.5)
        return [rng.normal(size=shape)], lambda a: ad.sum(a, axis=axis, keepdims=keep)

    def mean_case(rng):
        shape = _rand_shape(rng)
        axis = None if rng.random() < 0.3 else int(rng.integers(0, len(shape)))
        return [rng.normal(size=shape)], lambda a: ad.mean(a, axis=axis)

    def max_case(rng):
        shape = _rand_shape(rng)
        axis = int(rng.integers(0, len(shape)))
        x = np.moveaxis(_separated(rng, np.moveaxis(np.empty(shape), axis, -1).shape), -1, axis)
        return [x], lambda a: ad.max(a, axis=axis)[0]

    def concat_case(rng):
        shape = list(_rand_shape(rng))
        axis = int(rng.integers(0, len(shape)))
        parts = []
        for _ in range(rng.integers(2, 4)):
            s = list(shape)
            s[axis] = int(rng.integers(1, 4))
            parts.append(rng.normal(size=s))
        return parts, lambda *ts: ad.concatenate(ts, axis=axis)

    def reshape_case(rng):
        shape = _rand_shape(rng)
        n = int(np.prod(shape))
        return [rng.normal(size=shape)], lambda a: ad.reshape(a, (n,))

    def log_case(rng):
        return [rng.uniform(0.2, 3.0, size=_rand_shape(rng))], ad.log

    return {
        "add": binary(ad.add, suffix=True),
        "sub": binary(ad.sub, suffix=True),
        "mul": binary(ad.mul, suffix=True),
        "matmul": matmul_case,
        "scale": scale_case,
        "exp": unary(ad.exp),
        "log": log_case,
        "neg": unary(ad.neg),
        "sum": sum_case,
        "mean": mean_case,
        "max": max_case,
        "relu": unary(ad.relu, _away_from_zero),
        "sigmoid": unary(ad.sigmoid),
        "softmax": unary(ad.softmax),
        "log_softmax": unary(ad.log_softmax),
        "concatenate": concat_case,
        "reshape": reshape_case,
        "transpose": lambda rng: ([rng.normal(size=tuple(rng.integers(1, 5, size=2)))], ad.transpose),
    }


def gradcheck(inputs, fn, rng, h=FD_STEP, rtol=FD_RTOL, atol=FD_ATOL):
    """Compare backward() with central differences of ``sum(fn(*inputs) * c)``."""
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    c = rng.normal(size=out.shape)
    ad.backward(ad.sum(out * c))
    for a, leaf in zip(arrays, leaves):
        numeric = finite_difference(lambda: float((fn(*[Tensor(b) for b in arrays]).data * c).sum()), a, h)
        analytic = leaf.grad
        if not np.allclose(analytic, numeric, rtol=rtol, atol=atol):
            return False, float(np.max(np.abs(analytic - numeric)))
    return True, 0.0


def check_autodiff(n_cases: int = 100, seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    failures = []
    cases = op_cases()
    for name, build in cases.items():
        for i in range(n_cases):
            inputs, fn = build(rng)
            ok, err = gradcheck(inputs, fn, rng)
            if not ok:
                failures.append(f"{name}#{i} max abs err {err:.3g}")
    detail = f"{len(cases)} ops x {n_cases} cases, h={FD_STEP}, rtol={FD_RTOL}, atol={FD_ATOL}"
    return CheckResult("autodiff finite differences", not failures, detail, time.perf_counter() - t0, failures)


# ------------------------------------------------------------- collapse


def check_collapse(n_triples: int = 50, seed: int = 0, tol: float = 1e-12) -> CheckResult:
    """Decoupled ST-GS with tau_f == tau_b must equal single-temperature ST-GS."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    failures = []
    for i in range(n_triples):
        shape = (int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(2, 7)))
        logits = rng.normal(scale=2.0, size=shape)
        tau = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
        noise_seed = int(rng.integers(2**31))
        c = rng.normal(size=shape)
        outs = []
        for kind in ("st_gs", "decoupled_st_gs"):
            leaf = Tensor(logits, requires_grad=True)
            z = sample_latent(leaf, EstimatorConfig(kind, tau, tau), np.random.default_rng(noise_seed)).output
            ad.backward(ad.sum(z * c))
            outs.append((z.data, leaf.grad))
        dz = float(np.max(np.abs(outs[0][0] - outs[1][0])))
        dg = float(np.max(np.abs(outs[0][1] - outs[1][1])))
        worst = np.maximum(worst, np.maximum(dz, dg))
        if dz > tol or dg > tol:
            failures.append(f"triple {i}: |dz|={dz:.3g} |dgrad|={dg:.3g}")
    detail = f"{n_triples} triples, worst deviation {worst:.3g} (tol {tol})"
    return CheckResult("collapse decoupled(tau,tau) == st_gs(tau)", not failures, detail, time.perf_counter() - t0, failures)


# ------------------------------------------------------------ gumbel-max


def check_gumbel_max(n_draws: int = 200_000, k: int = 5, seed: int = 0, n_sigma: float = 3.0) -> CheckResult:
    """One-hot frequencies at tau_f = 1 against softmax(l)."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=k)
    p = np.exp(logits - logits.max())
    p /= p.sum()
    batch = np.broadcast_to(logits, (n_draws, 1, k)).copy()
    z = sample_latent(Tensor(batch), EstimatorConfig("decoupled_st_gs", 1.0, 2.0), rng).hard
    freq = z.reshape(n_draws, k).mean(axis=0)
    sigma = np.sqrt(p * (1 - p) / n_draws)
    z_scores = np.abs(freq - p) / sigma
    passed = bool(np.all(z_scores <= n_sigma))
    detail = f"k={k}, {n_draws} draws, max |z-score| {z_scores.max():.2f} (limit {n_sigma})"
    fails = [] if passed else [f"category {i}: z={z_scores[i]:.2f}" for i in np.flatnonzero(z_scores > n_sigma)]
    return CheckResult("gumbel-max marginals", passed, detail, time.perf_counter() - t0, fails)


# ---------------------------------------------------------- exact oracle

# every (dims, k) here has k**dims <= 256
EXACT_INSTANCES = [
    ("vae", 1, 2), ("vae", 1, 5), ("vae", 2, 2), ("vae", 2, 3), ("vae", 3, 4),
    ("vae", 4, 4), ("vae", 5, 3), ("vae", 2, 16), ("binary_ae", 3, 2), ("binary_ae", 8, 2),
]


def tiny_model(kind: str, dims: int, k: int, input_dim: int = 784, hidden: int = 6) -> ModelSpec:
    code = dims * k
    dec_in = dims if kind == "binary_ae" else code
    return ModelSpec(
        kind,
        CategoricalLatentSpec(dims, k),
        MlpSpec((input_dim, hidden, code), ("relu", "none")),
        MlpSpec((dec_in, hidden, input_dim), ("relu", "sigmoid")),
        beta=0.0,
    )


def check_exact_oracle(seed: int = 0, n_mc: int = 100_000, h: float = 1e-5, rtol: float = 1e-5,
                       atol: float = 1e-8, n_sigma: float = 3.0, instances=EXACT_INSTANCES) -> CheckResult:
    """Enumerated gradient vs finite differences; enumerated loss vs Monte Carlo.

    Inputs are synthetic bar images pushed through small random models.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    failures = []
    for kind, dims, k in instances:
        spec = tiny_model(kind, dims, k)
        params = init_model(spec, int(rng.integers(2**31)))
        x = synthetic_images(3, int(rng.integers(2**31))).reshape(3, -1)
        logits = encode(params, x, spec).data * 1.5
        grad = exact_gradient(params, x, spec, logits=logits)
        work = logits.copy()
        numeric = finite_difference(lambda: exact_expected_loss(params, x, spec, logits=Tensor(work)).item(), work, h)
        if not np.allclose(grad, numeric, rtol=rtol, atol=atol):
            failures.append(f"{kind} dims={dims} k={k}: FD mismatch {np.max(np.abs(grad - numeric)):.3g}")
        # MC draws from softmax(encode(x)), so compare against the unscaled logits
        exact = exact_expected_loss(params, x, spec).item()
        mean, se = monte_carlo_expected_loss(params, x, spec, n_mc, rng)
        if abs(mean - exact) > n_sigma * se:
            failures.append(f"{kind} dims={dims} k={k}: MC {mean:.6g} vs exact {exact:.6g} (se {se:.3g})")
    detail = f"{len(instances)} instances (k^dims <= 256), FD rtol {rtol}, MC {n_mc} samples within {n_sigma} SE"
    return CheckResult("exact-gradient oracle", not failures, detail, time.perf_counter() - t0, failures)


def run_all(seed: int = 0, log=print) -> List[CheckResult]:
    results = []
    for check in (check_autodiff, check_collapse, check_gumbel_max, check_exact_oracle):
        r = check(seed=seed)
        if log:
            log(r.line())
            for f in r.failures[:10]:
                log(f"    {f}")
        results.append(r)
    return results
