"""Gumbel noise, temperature relaxation and the straight-through estimator family.

Temperatures divide the logits only; the Gumbel noise is added unscaled::

    relaxed = softmax(logits / tau + g)

so ``tau -> 0`` recovers deterministic argmax selection and large ``tau``
hands the decision over to the noise.

The decoupled estimator draws ``g`` once per call and reuses it for both the
forward sample (``tau_forward``) and the backward surrogate (``tau_backward``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

KINDS = ("ste", "gumbel_softmax", "st_gs", "decoupled_st_gs")
UNIFORM_EPS = 1e-12


@dataclass(frozen=True)
class Schedule:
    """Temperature annealed from ``start`` to ``end`` over ``total_steps``."""

    start: float
    end: float
    total_steps: int
    interpolation: str = "linear"

    def __post_init__(self):
        if not (self.start > 0 and self.end > 0):
            raise ConfigError(f"schedule endpoints must be positive, got {self.start} -> {self.end}")
        if self.total_steps < 1:
            raise ConfigError(f"schedule total_steps must be >= 1, got {self.total_steps}")
        if self.interpolation not in ("linear", "geometric"):
            raise ConfigError(f"unknown interpolation {self.interpolation!r}")

    def value(self, step: int) -> float:
        return schedule_value(self, step)

    def with_total_steps(self, total_steps: int) -> "Schedule":
        return Schedule(self.start, self.end, total_steps, self.interpolation)


def schedule_value(s: Schedule, step: int) -> float:
    frac = min(max(step, 0), s.total_steps) / s.total_steps
    if frac == 1.0:
        return float(s.end)
    if s.interpolation == "linear":
        return s.start + (s.end - s.start) * frac
    return s.start * (s.end / s.start) ** frac


@dataclass(frozen=True)
class EstimatorConfig:
    kind: str = "decoupled_st_gs"
    tau_forward: float = 1.0
    tau_backward: Optional[float] = None
    schedule_forward: Optional[Schedule] = None
    schedule_backward: Optional[Schedule] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown estimator kind {self.kind!r}; expected one of {KINDS}")
        if self.tau_backward is None:
            object.__setattr__(self, "tau_backward", self.tau_forward)
        if not (self.tau_forward > 0 and self.tau_backward > 0):
            raise ConfigError(
                f"temperatures must be positive, got tau_forward={self.tau_forward}, "
                f"tau_backward={self.tau_backward}"
            )
        if self.kind != "decoupled_st_gs":
            if self.tau_backward != self.tau_forward:
                raise ConfigError(f"{self.kind} uses a single temperature; tau_backward must equal tau_forward")
            if self.schedule_backward is not None and self.schedule_backward != self.schedule_forward:
                raise ConfigError(f"{self.kind} cannot schedule the backward temperature separately")

    def temperatures(self, step: int = 0):
        """(tau_forward, tau_backward) after applying any schedules at ``step``."""
        tf = self.schedule_forward.value(step) if self.schedule_forward else self.tau_forward
        if self.kind == "decoupled_st_gs":
            tb = self.schedule_backward.value(step) if self.schedule_backward else self.tau_backward
        else:
            tb = tf
        if tf <= 0 or tb <= 0:
            raise ConfigError(f"non-positive temperature at step {step}: ({tf}, {tb})")
        return tf, tb

    def with_total_steps(self, total_steps: int) -> "EstimatorConfig":
        """Copy whose schedules span ``total_steps`` training steps."""
        sf = self.schedule_forward.with_total_steps(total_steps) if self.schedule_forward else None
        sb = self.schedule_backward.with_total_steps(total_steps) if self.schedule_backward else None
        return EstimatorConfig(self.kind, self.tau_forward, self.tau_backward, sf, sb)


@dataclass
class LatentBlock:
    """Everything produced while sampling one batch of categorical latents."""

    logits: Tensor
    probs: np.ndarray
    gumbel: Optional[np.ndarray]
    relaxed_forward: Optional[Tensor]
    relaxed_backward: Optional[Tensor]
    hard: Optional[np.ndarray]
    output: Tensor
    tau_forward: float = field(default=1.0)
    tau_backward: float = field(default=1.0)


def sample_gumbel(shape, rng: np.random.Generator) -> np.ndarray:
    u = rng.uniform(UNIFORM_EPS, 1.0 - UNIFORM_EPS, size=shape)
    return gumbel_from_uniform(u)


def gumbel_from_uniform(u):
    return -np.log(-np.log(u))


def relax(logits, gumbel, tau: float) -> Tensor:
    """softmax(logits / tau + gumbel) over the last axis."""
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    logits = ad.as_tensor(logits)
    g = np.asarray(gumbel, dtype=np.float64)
    if g.shape != logits.shape:
        raise ConfigError(f"gumbel shape {g.shape} does not match logits {logits.shape}")
    return ad.softmax(ad.scale(logits, 1.0 / tau) + g)


def hard_sample(relaxed) -> np.ndarray:
    """One-hot of the rowwise argmax; ties go to the lowest index."""
    r = relaxed.data if isinstance(relaxed, Tensor) else np.asarray(relaxed)
    idx = np.argmax(r, axis=-1)
    return one_hot(idx, r.shape[-1])


def one_hot(indices, k: int) -> np.ndarray:
    indices = np.asarray(indices)
    out = np.zeros(indices.shape + (k,))
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out


def sample_latent(
    logits: Tensor,
    config: EstimatorConfig,
    rng: Optional[np.random.Generator] = None,
    step: int = 0,
    gumbel: Optional[np.ndarray] = None,
    training: bool = True,
) -> LatentBlock:
    """Run one estimator on ``logits`` and keep every intermediate.

    ``gumbel`` overrides the noise draw (``rng`` is then unused). In eval mode
    (``training=False``) the output is the noiseless one-hot argmax of the
    probabilities regardless of kind.
    """
    logits = ad.as_tensor(logits)
    tf, tb = config.temperatures(step)
    probs = ad.softmax(logits)

    if not training:
        z = hard_sample(probs.data)
        return LatentBlock(logits, probs.data, None, None, None, z, Tensor(z), tf, tb)

    if config.kind == "ste":
        z = hard_sample(probs.data)
        out = ad.straight_through(z, probs)
        return LatentBlock(logits, probs.data, None, None, probs, z, out, tf, tb)

    if gumbel is None:
        if rng is None:
            raise ConfigError("a random generator or explicit gumbel noise is required")
        gumbel = sample_gumbel(logits.shape, rng)

    zf = relax(logits, gumbel, tf)
    if config.kind == "gumbel_softmax":
        return LatentBlock(logits, probs.data, gumbel, zf, zf, None, zf, tf, tb)

    z = hard_sample(zf.data)
    # st_gs reuses the forward relaxation; decoupled recomputes it at tau_b with the same g
    zb = zf if config.kind == "st_gs" else relax(logits, gumbel, tb)
    out = ad.straight_through(z, zb)
    return LatentBlock(logits, probs.data, gumbel, zf, zb, z, out, tf, tb)


def estimate(logits, config: EstimatorConfig, rng=None, step: int = 0, gumbel=None, training: bool = True) -> Tensor:
    """The latent fed to the decoder: hard one-hot for the straight-through
    kinds, the relaxed sample for ``gumbel_softmax``."""
    return sample_latent(logits, config, rng, step, gumbel, training).output
