"""MNIST IDX ingestion, a synthetic bars-and-blocks dataset, and batching."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import BadMagicError, CountMismatchError, DataError, TruncatedFileError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "DISCRETE_GRAD_DATA_DIR"
BUNDLED_MNIST = Path(__file__).parent / "_mnist"

SIDE = 28
BLOCK = 4
GRID = SIDE // BLOCK  # 7x7 block lattice


@dataclass(frozen=True)
class DatasetHandle:
    """Images as ``[n, 784]`` floats in [0, 1]; the last ``n_val`` rows are
    the validation split."""

    name: str
    images: np.ndarray
    labels: Optional[np.ndarray]
    source: str
    n_val: int = 0

    def __post_init__(self):
        imgs = self.images
        if imgs.ndim != 2:
            raise DataError(f"{self.name}: images must be 2-D, got shape {imgs.shape}")
        if imgs.size and (imgs.min() < 0.0 or imgs.max() > 1.0):
            raise DataError(f"{self.name}: pixel values outside [0, 1]")
        if not 0 <= self.n_val <= imgs.shape[0]:
            raise DataError(f"{self.name}: n_val={self.n_val} out of range")
        imgs.setflags(write=False)

    def __len__(self):
        return self.images.shape[0]

    @property
    def n_train(self):
        return len(self) - self.n_val

    @property
    def train(self) -> np.ndarray:
        return self.images[: self.n_train]

    @property
    def val(self) -> np.ndarray:
        return self.images[self.n_train:]


# ------------------------------------------------------------------ IDX


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (EOFError, OSError) as exc:
            raise TruncatedFileError(f"{path}: corrupt or truncated gzip stream ({exc})") from None
    return raw


def _parse_idx(path, expected_magic, ndim):
    raw = _read_bytes(path)
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes is shorter than the {header_len}-byte header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    expected = int(np.prod(dims))
    payload = raw[header_len:]
    if len(payload) < expected:
        raise TruncatedFileError(f"{path}: payload has {len(payload)} bytes, header promises {expected}")
    return np.frombuffer(payload[:expected], dtype=np.uint8).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    return _parse_idx(path, IMAGES_MAGIC, 3)


def read_idx_labels(path) -> np.ndarray:
    return _parse_idx(path, LABELS_MAGIC, 1)


def load_idx(images_path, labels_path=None, name: Optional[str] = None) -> DatasetHandle:
    """Load an IDX image file (plus optional labels); pixels are scaled by 1/255."""
    imgs = read_idx_images(images_path)
    labels = None
    if labels_path is not None:
        labels = read_idx_labels(labels_path)
        if labels.shape[0] != imgs.shape[0]:
            raise CountMismatchError(f"{imgs.shape[0]} images but {labels.shape[0]} labels")
    flat = imgs.reshape(imgs.shape[0], -1).astype(np.float64) / 255.0
    return DatasetHandle(name or Path(images_path).name, flat, labels, "idx_file")


def write_idx_images(path, images: np.ndarray):
    """Write ``[n, rows, cols]`` uint8 images as IDX (gzip when the name ends in .gz)."""
    images = np.asarray(images, dtype=np.uint8)
    data = struct.pack(">I", IMAGES_MAGIC) + struct.pack(">3I", *images.shape) + images.tobytes()
    _write(path, data)


def write_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.uint8)
    _write(path, struct.pack(">II", LABELS_MAGIC, labels.shape[0]) + labels.tobytes())


def _write(path, data):
    if str(path).endswith(".gz"):
        with gzip.GzipFile(path, "wb", mtime=0) as f:
            f.write(data)
    else:
        Path(path).write_bytes(data)


def mnist_root() -> Path:
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        root = Path(env)
        return root / "mnist" if (root / "mnist").is_dir() else root
    return BUNDLED_MNIST


def _find(root: Path, stem: str) -> Path:
    for candidate in (root / stem, root / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"MNIST file {stem}[.gz] not found under {root}")


def stratified_prefix(labels: np.ndarray, n: int) -> np.ndarray:
    """Indices of the first ``n`` rows taking an equal share per class, in file order."""
    classes = np.unique(labels)
    quota, extra = divmod(n, len(classes))
    picked = []
    for i, c in enumerate(classes):
        take = quota + (1 if i < extra else 0)
        rows = np.flatnonzero(labels == c)
        if rows.size < take:
            raise DataError(f"class {c} has only {rows.size} rows, need {take}")
        picked.append(rows[:take])
    return np.sort(np.concatenate(picked))


def load_mnist(subset: Optional[int] = 2000, val_subset: Optional[int] = 1000, root=None) -> DatasetHandle:
    """MNIST train subset followed by a test subset as the validation split.

    ``root`` defaults to ``$DISCRETE_GRAD_DATA_DIR`` (or its ``mnist/``
    subdirectory), falling back to the bundled 4000/1000-image subset.
    ``None`` for a subset size keeps the whole split.
    """
    root = Path(root) if root is not None else mnist_root()
    train = load_idx(_find(root, "train-images-idx3-ubyte"), _find(root, "train-labels-idx1-ubyte"))
    test = load_idx(_find(root, "t10k-images-idx3-ubyte"), _find(root, "t10k-labels-idx1-ubyte"))
    tr_idx = stratified_prefix(train.labels, subset) if subset else np.arange(len(train))
    te_idx = stratified_prefix(test.labels, val_subset) if val_subset else np.arange(len(test))
    images = np.concatenate([train.images[tr_idx], test.images[te_idx]])
    labels = np.concatenate([train.labels[tr_idx], test.labels[te_idx]])
    return DatasetHandle("mnist", images, labels, "idx_file", n_val=len(te_idx))


# ------------------------------------------------------------- synthetic


def synthetic_images(n: int, seed) -> np.ndarray:
    """``[n, 28, 28]`` binary images of block-aligned bars and rectangles.

    Every shape snaps to a 7x7 lattice of 4x4 blocks, so a 49-bit code (one
    bit per block) reconstructs each image exactly.
    """
    if n < 1:
        raise DataError("synthetic dataset needs n >= 1")
    rng = np.random.default_rng(seed)
    blocks = np.zeros((n, GRID, GRID), dtype=bool)
    for i in range(n):
        for _ in range(rng.integers(1, 4)):
            start, length = rng.integers(0, GRID), rng.integers(2, GRID + 1)
            line = rng.integers(0, GRID)
            stop = min(start + length, GRID)
            if rng.random() < 0.5:
                blocks[i, line, start:stop] = True
            else:
                blocks[i, start:stop, line] = True
        for _ in range(rng.integers(0, 3)):
            r0, c0 = rng.integers(0, GRID - 1, size=2)
            h, w = rng.integers(2, 4, size=2)
            blocks[i, r0:r0 + h, c0:c0 + w] = True
    return blocks_to_images(blocks)


def blocks_to_images(blocks: np.ndarray) -> np.ndarray:
    return np.kron(blocks.astype(np.float64), np.ones((1, BLOCK, BLOCK)))


def synthetic(n: int, seed=0, val_fraction: float = 0.1) -> DatasetHandle:
    imgs = synthetic_images(n, seed).reshape(n, SIDE * SIDE)
    n_val = int(round(n * val_fraction)) if n > 1 else 0
    return DatasetHandle(f"synthetic-{seed}", imgs, None, "synthetic", n_val=n_val)


def load_dataset(name: str, subset: Optional[int] = 2000, val_subset: Optional[int] = 1000, seed=0) -> DatasetHandle:
    if name == "mnist":
        return load_mnist(subset, val_subset)
    if name == "synthetic":
        n = subset or 2000
        total = n + (val_subset or 0)
        return synthetic(total, seed, val_fraction=(val_subset or 0) / total if val_subset else 0.1)
    raise DataError(f"unknown dataset {name!r}")


# -------------------------------------------------------------- batching


def batches(images: np.ndarray, batch_size: int, seed=0, epoch: int = 0, shuffle: bool = True) -> Iterator[np.ndarray]:
    """Yield consecutive batches; the permutation depends only on (seed, epoch).

    The final partial batch is included.
    """
    if isinstance(images, DatasetHandle):
        images = images.train
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    n = images.shape[0]
    order = np.random.default_rng([int(seed), int(epoch)]).permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        yield images[order[start:start + batch_size]]
