"""MLP encoder/decoder pairs with a categorical bottleneck.

Two model kinds share one code path:

``binary_ae``
    ``dims`` binary latents realised as ``k=2`` one-hot pairs; only the first
    channel of each pair reaches the decoder. Trained on per-pixel MSE.
``vae``
    ``dims`` categorical latents with ``k`` classes each, flattened to
    ``dims * k`` decoder inputs. Trained on BCE + beta * KL(p || uniform).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

LOG_FLOOR = 1e-12
ACTIVATIONS = ("relu", "sigmoid", "none")

ModelParams = Dict[str, Tensor]


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple
    activations: tuple

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        acts = tuple(self.activations)
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activations", acts)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ConfigError(f"invalid layer widths {widths}")
        if len(acts) != len(widths) - 1:
            raise ConfigError(f"need {len(widths) - 1} activations, got {len(acts)}")
        bad = [a for a in acts if a not in ACTIVATIONS]
        if bad:
            raise ConfigError(f"unknown activations {bad}")

    @property
    def n_in(self):
        return self.layer_widths[0]

    @property
    def n_out(self):
        return self.layer_widths[-1]


@dataclass(frozen=True)
class CategoricalLatentSpec:
    dims: int
    k: int

    def __post_init__(self):
        if self.dims < 1 or self.k < 1:
            raise ConfigError(f"latent dims and k must be positive, got dims={self.dims}, k={self.k}")

    @property
    def n_configs(self):
        return self.k ** self.dims


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    latent: CategoricalLatentSpec
    encoder: MlpSpec
    decoder: MlpSpec
    beta: float = 1.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.kind not in ("binary_ae", "vae"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.kind == "binary_ae" and self.latent.k != 2:
            raise ConfigError("binary_ae needs k=2")
        if self.encoder.n_out != self.latent.dims * self.latent.k:
            raise ConfigError(
                f"encoder output width {self.encoder.n_out} != dims*k = {self.latent.dims * self.latent.k}"
            )
        if self.decoder.n_in != self.decoder_input_width:
            raise ConfigError(f"decoder input width {self.decoder.n_in} != {self.decoder_input_width}")
        if self.decoder.n_out != self.encoder.n_in:
            raise ConfigError(f"decoder output width {self.decoder.n_out} != input width {self.encoder.n_in}")
        if self.decoder.activations[-1] != "sigmoid":
            raise ConfigError("decoder must end in a sigmoid")
        if self.beta < 0:
            raise ConfigError("beta must be nonnegative")

    @property
    def input_dim(self):
        return self.encoder.n_in

    @property
    def decoder_input_width(self):
        if self.kind == "binary_ae":
            return self.latent.dims
        return self.latent.dims * self.latent.k

    def to_dict(self):
        return {
            "kind": self.kind,
            "dims": self.latent.dims,
            "k": self.latent.k,
            "encoder": list(self.encoder.layer_widths),
            "decoder": list(self.decoder.layer_widths),
            "beta": self.beta,
        }

    @classmethod
    def from_dict(cls, d):
        latent = CategoricalLatentSpec(int(d["dims"]), int(d["k"]))
        enc = tuple(d["encoder"])
        dec = tuple(d["decoder"])
        return cls(
            d["kind"],
            latent,
            MlpSpec(enc, ("relu",) * (len(enc) - 2) + ("none",)),
            MlpSpec(dec, ("relu",) * (len(dec) - 2) + ("sigmoid",)),
            float(d.get("beta", 1.0)),
        )


def _mirror(input_dim, hidden, code_in, code_out):
    enc = MlpSpec((input_dim, *hidden, code_out), ("relu",) * len(hidden) + ("none",))
    dec = MlpSpec((code_in, *reversed(hidden), input_dim), ("relu",) * len(hidden) + ("sigmoid",))
    return enc, dec


def binary_ae_spec(bits=64, hidden=(256, 128), input_dim=784) -> ModelSpec:
    """Desk-scale binary autoencoder: 784 -> 256 -> 128 -> bits*2, mirrored back."""
    enc, dec = _mirror(input_dim, hidden, bits, bits * 2)
    return ModelSpec("binary_ae", CategoricalLatentSpec(bits, 2), enc, dec, beta=0.0, name=f"binary_ae{bits}")


def categorical_vae_spec(k=8, dims=4, hidden=(512, 256), input_dim=784, beta=1.0) -> ModelSpec:
    """Categorical VAE with ``dims`` latents of ``k`` classes (8x4 means k=8, dims=4)."""
    enc, dec = _mirror(input_dim, hidden, dims * k, dims * k)
    return ModelSpec("vae", CategoricalLatentSpec(dims, k), enc, dec, beta=beta, name=f"vae{k}x{dims}")


# -------------------------------------------------------------- parameters


def init_params(spec: MlpSpec, seed, prefix: str = "") -> ModelParams:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(spec.layer_widths[:-1], spec.layer_widths[1:])):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"{prefix}{i}.weight"] = Tensor(rng.uniform(-a, a, size=(fan_in, fan_out)), requires_grad=True)
        params[f"{prefix}{i}.bias"] = Tensor(np.zeros(fan_out), requires_grad=True)
    return params


def init_model(spec: ModelSpec, seed) -> ModelParams:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    enc_seed, dec_seed = ss.spawn(2)
    params = init_params(spec.encoder, enc_seed, prefix="encoder.")
    params.update(init_params(spec.decoder, dec_seed, prefix="decoder."))
    return params


def mlp(params: ModelParams, spec: MlpSpec, h: Tensor, prefix: str) -> Tensor:
    for i, act in enumerate(spec.activations):
        h = h @ params[f"{prefix}{i}.weight"] + params[f"{prefix}{i}.bias"]
        if act == "relu":
            h = ad.relu(h)
        elif act == "sigmoid":
            h = ad.sigmoid(h)
    return h


# ----------------------------------------------------------- encode/decode


def encode(params: ModelParams, x, spec: ModelSpec) -> Tensor:
    """Logits of shape ``[batch, dims, k]``."""
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError("encode", x.shape, (None, spec.input_dim))
    h = mlp(params, spec.encoder, x, "encoder.")
    return ad.reshape(h, (x.shape[0], spec.latent.dims, spec.latent.k))


def _first_channel_selector(dims):
    sel = np.zeros((dims * 2, dims))
    sel[np.arange(dims) * 2, np.arange(dims)] = 1.0
    return sel


def decoder_input(z, spec: ModelSpec) -> Tensor:
    z = ad.as_tensor(z)
    lat = spec.latent
    if z.ndim != 3 or z.shape[1:] != (lat.dims, lat.k):
        raise ShapeError("decode", z.shape, (None, lat.dims, lat.k))
    flat = ad.reshape(z, (z.shape[0], lat.dims * lat.k))
    if spec.kind == "binary_ae":
        # bit i is channel 0 of pair i
        return flat @ _first_channel_selector(lat.dims)
    return flat


def decode(params: ModelParams, z, spec: ModelSpec) -> Tensor:
    """Reconstruction in [0, 1] of shape ``[batch, input_dim]``."""
    return mlp(params, spec.decoder, decoder_input(z, spec), "decoder.")


# ------------------------------------------------------------------ losses


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def binary_ae_loss(recon: Tensor, x) -> Tensor:
    """Mean squared error over batch and pixels."""
    x = ad.as_tensor(x)
    _check_same("binary_ae_loss", recon, x)
    diff = recon - x
    return ad.mean(diff * diff)


def bce_loss(recon: Tensor, x) -> Tensor:
    """Binary cross-entropy summed over pixels, averaged over the batch."""
    x = ad.as_tensor(x)
    _check_same("bce_loss", recon, x)
    ll = x * ad.log(recon, floor=LOG_FLOOR) + (1.0 - x) * ad.log(1.0 - recon, floor=LOG_FLOOR)
    return ad.scale(ad.sum(ll), -1.0 / x.shape[0])


def kl_uniform(probs: Tensor) -> Tensor:
    """KL(p || uniform) summed over latent dims, averaged over the batch."""
    k = probs.shape[-1]
    terms = probs * (ad.log(probs, floor=LOG_FLOOR) + np.log(k))
    return ad.scale(ad.sum(terms), 1.0 / probs.shape[0])


def vae_loss(recon: Tensor, x, probs: Tensor, beta: float = 1.0) -> Tensor:
    loss = bce_loss(recon, x)
    if beta:
        loss = loss + ad.scale(kl_uniform(probs), beta)
    return loss


def reconstruction_loss(spec: ModelSpec, recon: Tensor, x) -> Tensor:
    return binary_ae_loss(recon, x) if spec.kind == "binary_ae" else bce_loss(recon, x)


def training_loss(spec: ModelSpec, recon: Tensor, x, logits: Tensor) -> Tensor:
    if spec.kind == "binary_ae":
        return binary_ae_loss(recon, x)
    return vae_loss(recon, x, ad.softmax(logits), spec.beta)


def per_sample_loss_matrix(spec: ModelSpec, recon: Tensor, x) -> Tensor:
    """Reconstruction loss of every (sample, candidate reconstruction) pair.

    ``recon`` is ``[C, D]`` and ``x`` is ``[B, D]``; the result is ``[B, C]``
    holding per-sample losses (pixel mean for MSE, pixel sum for BCE), so that
    a batch loss is the row mean of the chosen entries.
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if recon.ndim != 2 or x.ndim != 2 or recon.shape[1] != x.shape[1]:
        raise ShapeError("per_sample_loss_matrix", recon.shape, x.shape)
    n_b, d = x.shape
    n_c = recon.shape[0]
    if spec.kind == "binary_ae":
        r_sq = ad.sum(recon * recon, axis=1)  # [C]
        cross = ad.matmul(x, ad.transpose(recon))  # [B, C]
        x_sq = (x * x).sum(axis=1, keepdims=True) @ np.ones((1, n_c))
        return ad.scale(ad.add(ad.sub(r_sq, ad.scale(cross, 2.0)), x_sq), 1.0 / d)
    log_r = ad.transpose(ad.log(recon, floor=LOG_FLOOR))
    log_1mr = ad.transpose(ad.log(1.0 - recon, floor=LOG_FLOOR))
    return ad.neg(ad.matmul(x, log_r) + ad.matmul(1.0 - x, log_1mr))


# ------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"DGCKPT01"


def save_params(params: ModelParams, path, extra=None):
    """Write ``magic | u64 header_len | JSON header | float64 LE blob``.

    Header offsets are byte offsets into the blob that follows the header.
    """
    entries, blobs, offset = [], [], 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"schema_version": 1, "dtype": "float64-le", "tensors": entries, "extra": extra or {}})
    hb = header.encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(hb)))
        f.write(hb)
        for b in blobs:
            f.write(b)


def load_params(path, with_header=False):
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    blob = raw[16 + hlen:]
    params = {}
    for e in header["tensors"]:
        chunk = blob[e["offset"]:e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise ValueError(f"{path}: truncated tensor {e['name']}")
        arr = np.frombuffer(chunk, dtype="<f8").reshape(e["shape"]).astype(np.float64)
        params[e["name"]] = Tensor(arr, requires_grad=True)
    return (params, header) if with_header else params


def copy_params(params: ModelParams) -> ModelParams:
    return {k: Tensor(v.data, requires_grad=True) for k, v in params.items()}
