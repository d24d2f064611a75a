"""Ground truth for estimator fidelity.

The expected reconstruction loss over a categorical latent is computed
exactly by enumerating all ``k**dims`` configurations::

    E[L] = mean_b sum_c P_b(c) * L_b(decode(c)),   P_b(c) = prod_d p[b, d, c_d]

Its gradient with respect to the encoder logits is the reference against
which estimator gradients are scored (relative bias / relative std). For
latents too large to enumerate, :func:`gradient_gap` compares the fully
relaxed gradient with the straight-through one under shared noise.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .errors import EnumerationError
from .estimators import EstimatorConfig, relax, sample_gumbel, sample_latent, hard_sample
from .models import ModelParams, ModelSpec, decode, encode, per_sample_loss_matrix, reconstruction_loss

ENUMERATION_CAP = 65536


@dataclass
class GradStats:
    exact_grad: np.ndarray
    mean_est: np.ndarray
    std_est: np.ndarray
    relative_bias: float
    relative_std: float
    n_draws: int
    tau_forward: float = float("nan")
    tau_backward: float = float("nan")

    def as_row(self):
        return {
            "relative_bias": self.relative_bias,
            "relative_std": self.relative_std,
            "exact_grad_norm": float(np.linalg.norm(self.exact_grad)),
            "mean_est_norm": float(np.linalg.norm(self.mean_est)),
            "n_draws": float(self.n_draws),
        }


@dataclass
class GapRecord:
    tau_forward: float
    tau_backward: float
    gap: float
    seed: int
    per_sample: Optional[np.ndarray] = None


def _frozen(params: ModelParams) -> ModelParams:
    return {k: Tensor(v.data) for k, v in params.items()}


def enumerate_configs(dims: int, k: int, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """All category assignments as ``[k**dims, dims]`` ints, last dim fastest."""
    count = k ** dims
    if count > cap:
        raise EnumerationError(count, cap)
    return np.array(list(itertools.product(range(k), repeat=dims)), dtype=np.int64).reshape(count, dims)


def config_one_hots(dims: int, k: int, cap: int = ENUMERATION_CAP) -> np.ndarray:
    configs = enumerate_configs(dims, k, cap)
    z = np.zeros((configs.shape[0], dims, k))
    np.put_along_axis(z, configs[..., None], 1.0, axis=-1)
    return z


def config_log_probs(logits: Tensor, z_all: np.ndarray) -> Tensor:
    """log P_b(c) for every sample b and configuration c, shape ``[B, C]``."""
    b, dims, k = logits.shape
    logp = ad.reshape(ad.log_softmax(logits), (b, dims * k))
    return ad.matmul(logp, z_all.reshape(z_all.shape[0], dims * k).T)


def exact_expected_loss(
    params: ModelParams,
    x,
    spec: ModelSpec,
    logits: Optional[Tensor] = None,
    cap: int = ENUMERATION_CAP,
) -> Tensor:
    """Exact expected reconstruction loss, differentiable w.r.t. the logits.

    When ``logits`` is omitted they are computed by the encoder (and the
    result is then differentiable w.r.t. the encoder parameters as well).
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if logits is None:
        logits = encode(params, x, spec)
    z_all = config_one_hots(spec.latent.dims, spec.latent.k, cap)
    recon = decode(_frozen(params), z_all, spec)
    losses = per_sample_loss_matrix(spec, recon, x).data  # constant in the logits
    probs = ad.exp(config_log_probs(logits, z_all))
    return ad.scale(ad.sum(probs * losses), 1.0 / x.shape[0])


def exact_gradient(params: ModelParams, x, spec: ModelSpec, logits=None, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """d E[L] / d logits, shape ``[B, dims, k]``."""
    if logits is None:
        logits = encode(_frozen(params), x, spec).data
    leaf = Tensor(logits.data if isinstance(logits, Tensor) else logits, requires_grad=True)
    ad.backward(exact_expected_loss(params, x, spec, logits=leaf, cap=cap))
    return leaf.grad


def monte_carlo_expected_loss(params: ModelParams, x, spec: ModelSpec, n_samples: int, rng, chunk: int = 2048):
    """Mean and standard error of the batch loss under direct categorical
    sampling of the latents (no relaxation)."""
    x = np.asarray(x, dtype=np.float64)
    frozen = _frozen(params)
    probs = ad.softmax(encode(frozen, x, spec)).data
    cdf = np.cumsum(probs, axis=-1)
    b = x.shape[0]
    values = []
    done = 0
    while done < n_samples:
        r = min(chunk, n_samples - done)
        u = rng.uniform(size=(r, b, spec.latent.dims, 1))
        idx = np.minimum((u > cdf[None]).sum(axis=-1), spec.latent.k - 1)
        # decode each distinct sampled code once, then gather per sample
        codes, inverse = np.unique(idx.reshape(r * b, spec.latent.dims), axis=0, return_inverse=True)
        z = np.zeros((codes.shape[0], spec.latent.dims, spec.latent.k))
        np.put_along_axis(z, codes[..., None], 1.0, axis=-1)
        recon = decode(frozen, z, spec).data[inverse.reshape(-1)].reshape(r, b, -1)
        if spec.kind == "binary_ae":
            per = ((recon - x[None]) ** 2).mean(axis=-1)
        else:
            rc = np.clip(recon, 1e-12, None)
            rc1 = np.clip(1.0 - recon, 1e-12, None)
            per = -(x[None] * np.log(rc) + (1.0 - x[None]) * np.log(rc1)).sum(axis=-1)
        values.append(per.mean(axis=1))
        done += r
    values = np.concatenate(values)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(len(values)))


def estimator_gradients(
    params: ModelParams,
    x,
    spec: ModelSpec,
    config: EstimatorConfig,
    logits: np.ndarray,
    n_draws: int,
    rng=None,
    draw_seeds: Optional[Sequence[int]] = None,
    step: int = 0,
    chunk: int = 64,
) -> np.ndarray:
    """Estimator gradients at the logits for ``n_draws`` independent noise draws.

    Draws are stacked along the batch axis so one backward pass yields a
    chunk of per-draw gradients. Returns ``[n_draws, B, dims, k]``.
    """
    x = np.asarray(x, dtype=np.float64)
    frozen = _frozen(params)
    b = x.shape[0]
    shape = logits.shape
    if draw_seeds is not None and len(draw_seeds) != n_draws:
        raise ConfigError("draw_seeds must have one entry per draw")
    out = np.empty((n_draws,) + shape)
    start = 0
    while start < n_draws:
        r = min(chunk, n_draws - start)
        if draw_seeds is not None:
            g = np.stack([sample_gumbel(shape, np.random.default_rng(s)) for s in draw_seeds[start:start + r]])
        else:
            g = np.stack([sample_gumbel(shape, rng) for _ in range(r)])
        leaf = Tensor(np.tile(logits, (r, 1, 1)), requires_grad=True)
        z = sample_latent(leaf, config, step=step, gumbel=g.reshape((r * b,) + shape[1:])).output
        recon = decode(frozen, z, spec)
        # row-mean over r*b rows times r == sum over draws of per-draw batch means
        loss = ad.scale(reconstruction_loss(spec, recon, np.tile(x, (r, 1))), float(r))
        ad.backward(loss)
        out[start:start + r] = leaf.grad.reshape((r,) + shape)
        start += r
    return out


def summarize(exact: np.ndarray, grads: np.ndarray, config: Optional[EstimatorConfig] = None, step: int = 0) -> GradStats:
    n = grads.shape[0]
    if n < 2:
        raise ConfigError("need at least two draws for a standard deviation")
    norm_exact = float(np.linalg.norm(exact))
    if norm_exact == 0.0:
        raise ZeroDivisionError("exact gradient is zero; relative bias/std undefined")
    mean = grads.mean(axis=0)
    std = grads.std(axis=0, ddof=1)
    tf, tb = config.temperatures(step) if config is not None else (float("nan"), float("nan"))
    return GradStats(
        exact_grad=exact,
        mean_est=mean,
        std_est=std,
        relative_bias=float(np.linalg.norm(exact - mean)) / norm_exact,
        relative_std=float(np.linalg.norm(std)) / norm_exact,
        n_draws=n,
        tau_forward=tf,
        tau_backward=tb,
    )


def bias_variance(
    params: ModelParams,
    x,
    spec: ModelSpec,
    config: EstimatorConfig,
    n_draws: int = 1024,
    rng=None,
    draw_seeds: Optional[Sequence[int]] = None,
    step: int = 0,
    chunk: int = 64,
) -> GradStats:
    """Score ``config``'s logit gradients against the enumerated exact gradient."""
    x = np.asarray(x, dtype=np.float64)
    logits = encode(_frozen(params), x, spec).data
    exact = exact_gradient(params, x, spec, logits=logits)
    if rng is None and draw_seeds is None:
        rng = np.random.default_rng(0)
    grads = estimator_gradients(params, x, spec, config, logits, n_draws, rng, draw_seeds, step, chunk)
    return summarize(exact, grads, config, step)


def gradient_gap(
    params: ModelParams,
    x,
    spec: ModelSpec,
    config: EstimatorConfig,
    seed: int = 0,
    gumbel: Optional[np.ndarray] = None,
    squared: bool = False,
    step: int = 0,
) -> GapRecord:
    """Norm of (relaxed-pass logit gradient) - (straight-through logit gradient).

    The relaxed branch feeds ``relax(l, g, tau_f)`` to the decoder; the
    discrete branch feeds the hard sample with the ``tau_b`` surrogate. Both
    share ``g`` (drawn from ``seed`` unless given).
    """
    x = np.asarray(x, dtype=np.float64)
    frozen = _frozen(params)
    logits = encode(frozen, x, spec).data
    if gumbel is None:
        gumbel = sample_gumbel(logits.shape, np.random.default_rng(seed))
    tf, tb = config.temperatures(step)

    soft_leaf = Tensor(logits, requires_grad=True)
    zf = relax(soft_leaf, gumbel, tf)
    ad.backward(reconstruction_loss(spec, decode(frozen, zf, spec), x))

    hard_leaf = Tensor(logits, requires_grad=True)
    z = ad.straight_through(hard_sample(zf.data), relax(hard_leaf, gumbel, tb))
    ad.backward(reconstruction_loss(spec, decode(frozen, z, spec), x))

    diff = soft_leaf.grad - hard_leaf.grad
    per_sample = np.sqrt((diff.reshape(diff.shape[0], -1) ** 2).sum(axis=1))
    gap = float(np.sqrt((per_sample ** 2).sum()))
    if squared:
        gap, per_sample = gap ** 2, per_sample ** 2
    return GapRecord(tf, tb, gap, seed, per_sample)
