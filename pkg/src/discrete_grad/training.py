"""Adam/RAdam, the training loop and noiseless evaluation."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .data import DatasetHandle, batches
from .errors import ConfigError, DataError, NumericError, TrainingError
from .estimators import EstimatorConfig, Schedule, sample_latent
from .models import (
    ModelParams,
    ModelSpec,
    bce_loss,
    binary_ae_loss,
    decode,
    encode,
    init_model,
    kl_uniform,
    training_loss,
)


@dataclass
class OptimState:
    kind: str = "adam"
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "radam"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("betas must lie in (0, 1)")


def radam_rho(t: int, beta2: float) -> float:
    """Length of the approximated SMA at step t (RAdam's rectification input)."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    b2t = beta2 ** t
    return rho_inf - 2.0 * t * b2t / (1.0 - b2t)


def optim_step(state: OptimState, params: ModelParams):
    """One in-place update of every parameter; gradients are left untouched."""
    for name, p in params.items():
        if p.grad is None:
            raise ConfigError(f"parameter {name!r} has no gradient")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t

    rect = None
    if state.kind == "radam":
        rho_inf = 2.0 / (1.0 - b2) - 1.0
        rho_t = radam_rho(t, b2)
        if rho_t > 4.0:
            rect = math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))

    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bc1
        if state.kind == "radam" and rect is None:
            # variance not yet tractable: bias-corrected momentum SGD
            update = state.learning_rate * m_hat
        else:
            v_hat = v / bc2
            update = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
            if rect is not None:
                update = update * rect
        p.data = p.data - update


# ----------------------------------------------------------------- configs


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec
    estimator: EstimatorConfig
    dataset: str = "mnist"
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    learning_rate: float = 3e-4
    optimizer: str = "adam"
    eval_every: int = 1

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.eval_every < 1:
            raise ConfigError("batch_size and eval_every must be positive and epochs nonnegative")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.optimizer not in ("adam", "radam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def replace(self, **changes) -> "RunConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(changes)
        return RunConfig(**d)

    def to_dict(self):
        est = self.estimator
        return {
            "model": self.model.to_dict(),
            "estimator": {
                "kind": est.kind,
                "tau_forward": est.tau_forward,
                "tau_backward": est.tau_backward,
                "schedule_forward": _schedule_dict(est.schedule_forward),
                "schedule_backward": _schedule_dict(est.schedule_backward),
            },
            "dataset": self.dataset,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "eval_every": self.eval_every,
        }


def _schedule_dict(s: Optional[Schedule]):
    if s is None:
        return None
    return {"start": s.start, "end": s.end, "interpolation": s.interpolation}


def default_run(model: str = "vae8x4", **overrides) -> RunConfig:
    """Desk-scale defaults: Adam 3e-4 for the AE, RAdam 5e-4 / 7e-4 for the VAEs."""
    from .models import binary_ae_spec, categorical_vae_spec

    presets = {
        "binary_ae": (binary_ae_spec(), "adam", 3e-4),
        "vae8x4": (categorical_vae_spec(8, 4), "radam", 5e-4),
        "vae16x12": (categorical_vae_spec(16, 12), "radam", 7e-4),
    }
    if model not in presets:
        raise ConfigError(f"unknown model preset {model!r}")
    spec, opt, lr = presets[model]
    base = dict(model=spec, estimator=EstimatorConfig(), optimizer=opt, learning_rate=lr)
    base.update(overrides)
    return RunConfig(**base)


# --------------------------------------------------------------- evaluate


def evaluate(params: ModelParams, spec: ModelSpec, images, batch_size: int = 500) -> Dict[str, float]:
    """Noiseless losses with ``z = one_hot(argmax(p))``.

    Binary AE: ``{"mse"}``. VAE: ``{"bce", "kl", "elbo"}``. ``loss`` is the
    headline number (MSE or BCE).
    """
    images = images.val if isinstance(images, DatasetHandle) else np.asarray(images)
    n = images.shape[0]
    if n == 0:
        raise DataError("cannot evaluate on an empty split")
    if images.ndim != 2 or images.shape[1] != spec.input_dim:
        raise DataError(f"evaluation data shape {images.shape} does not match model input {spec.input_dim}")
    frozen = {k: ad.Tensor(v.data) for k, v in params.items()}
    sums = {}
    for start in range(0, n, batch_size):
        x = images[start:start + batch_size]
        logits = encode(frozen, x, spec)
        block = sample_latent(logits, EstimatorConfig(), training=False)
        recon = decode(frozen, block.output, spec)
        w = x.shape[0]
        if spec.kind == "binary_ae":
            parts = {"mse": binary_ae_loss(recon, x).item()}
        else:
            bce = bce_loss(recon, x).item()
            kl = kl_uniform(ad.softmax(logits)).item()
            parts = {"bce": bce, "kl": kl, "elbo": bce + spec.beta * kl}
        for key, val in parts.items():
            sums[key] = sums.get(key, 0.0) + val * w
    report = {k: v / n for k, v in sums.items()}
    report["loss"] = report["mse"] if spec.kind == "binary_ae" else report["bce"]
    return report


# ------------------------------------------------------------------ train


@dataclass
class RunResult:
    config: dict
    epochs: List[dict]
    final_val: Dict[str, float]
    wall_clock_seconds: float
    params: ModelParams = field(repr=False)
    steps: int = 0

    @property
    def final_val_loss(self) -> float:
        return self.final_val["loss"]

    def val_curve(self, key="loss"):
        return [e["val"][key] for e in self.epochs if e.get("val")]

    def to_dict(self):
        return {
            "config": self.config,
            "epochs": self.epochs,
            "final_val": self.final_val,
            "wall_clock_seconds": self.wall_clock_seconds,
            "steps": self.steps,
        }


def train(run: RunConfig, data: DatasetHandle, params: Optional[ModelParams] = None, log=None) -> RunResult:
    """Train ``run.model`` on ``data.train``; validate on ``data.val``.

    Entry ``epochs[0]`` is the untrained model. Randomness comes from
    ``run.seed`` only: parameter init, per-epoch shuffles and Gumbel noise
    use separate child streams.
    """
    t0 = time.perf_counter()
    init_seed, noise_seed, shuffle_seed = np.random.SeedSequence(run.seed).spawn(3)
    if params is None:
        params = init_model(run.model, init_seed)
    noise_rng = np.random.default_rng(noise_seed)
    shuffle_key = int(shuffle_seed.generate_state(1)[0])
    opt = OptimState(run.optimizer, run.learning_rate)

    n_train = data.n_train
    if n_train == 0 and run.epochs > 0:
        raise DataError("training split is empty")
    steps_per_epoch = math.ceil(n_train / run.batch_size) if n_train else 0
    estimator = run.estimator.with_total_steps(max(1, steps_per_epoch * run.epochs))
    has_val = data.n_val > 0
    history = [{"epoch": 0, "train_loss": None, "val": evaluate(params, run.model, data.val) if has_val else None}]

    step = 0
    param_list = list(params.values())
    for epoch in range(1, run.epochs + 1):
        total, count = 0.0, 0
        for x in batches(data.train, run.batch_size, seed=shuffle_key, epoch=epoch):
            ad.zero_grad(param_list)
            try:
                logits = encode(params, x, run.model)
                z = sample_latent(logits, estimator, noise_rng, step=step).output
                recon = decode(params, z, run.model)
                loss = training_loss(run.model, recon, x, logits)
                ad.backward(loss)
            except NumericError as exc:
                raise TrainingError(step, float("nan"), run.to_dict()) from exc
            value = loss.item()
            optim_step(opt, params)
            total += value * x.shape[0]
            count += x.shape[0]
            step += 1
        entry = {"epoch": epoch, "train_loss": total / count, "val": None}
        if has_val and (epoch % run.eval_every == 0 or epoch == run.epochs):
            entry["val"] = evaluate(params, run.model, data.val)
        if log is not None:
            log(entry)
        history.append(entry)

    final = history[-1]["val"] if has_val else {}
    return RunResult(run.to_dict(), history, final, time.perf_counter() - t0, params, step)
