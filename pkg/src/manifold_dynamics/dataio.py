"""Dataset ingestion, standardisation and derived training sets.

Images are stored row-major as ``(P, N)`` float64 matrices. Every example
carries a ``source_index``: its position in the original split, which stays
attached through subsampling and pruning so that misclassified sets can be
compared across runs trained on different subsets.
"""
from __future__ import annotations

import gzip
import hashlib
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
IDX_UBYTE = 0x08
# refuse headers declaring more than this many elements
IDX_MAX_ELEMENTS = 1 << 32

CIFAR_RECORD_BYTES = 3073
CIFAR_SIDE = 32

SOURCES = ("mnist", "kmnist", "fashion", "cifar10")
SPLITS = ("train", "test")

CACHE_FORMAT = "manifold-dynamics-dataset/1"


class IdxError(ValueError):
    """Base class for IDX parse failures."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxDimensionError(IdxError):
    pass


class CifarFormatError(ValueError):
    pass


class DegenerateDatasetWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RawDataset:
    images: np.ndarray  # (P, N) in [0, 1]
    class_ids: np.ndarray  # (P,) ints in 0..9
    split: str = "train"
    source: str = "mnist"
    source_index: np.ndarray | None = None

    def __post_init__(self):
        if self.source_index is None:
            object.__setattr__(self, "source_index", np.arange(len(self.class_ids)))
        if self.images.ndim != 2 or self.images.shape[0] != len(self.class_ids):
            raise ValueError(
                f"images {self.images.shape} do not match {len(self.class_ids)} labels"
            )

    def __len__(self) -> int:
        return len(self.class_ids)

    @property
    def n_features(self) -> int:
        return self.images.shape[1]


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (P, N) standardised
    labels: np.ndarray  # (P,) in {-1, +1}
    class_ids: np.ndarray
    source_index: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    @property
    def is_empty(self) -> bool:
        return len(self.labels) == 0

    def digest(self) -> str:
        """Short content hash; identical data gives identical digests."""
        h = hashlib.sha256()
        for arr in (self.inputs, self.labels, self.class_ids, self.source_index):
            a = np.ascontiguousarray(arr)
            h.update(str(a.dtype).encode())
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()[:16]

    def positions(self, members: Iterable[int]) -> np.ndarray:
        """Row positions of the given source indices (raises KeyError if absent)."""
        lookup = {int(s): i for i, s in enumerate(self.source_index)}
        try:
            return np.array([lookup[int(m)] for m in members], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"source index {exc.args[0]} not in dataset") from None


# ----------------------------------------------------------------------------
# IDX


def _open_bytes(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def parse_idx(buf: bytes) -> np.ndarray:
    """Parse an unsigned-byte IDX payload into a uint8 array of the declared shape."""
    if len(buf) < 4:
        raise IdxTruncatedError("payload shorter than the magic number")
    zero, dtype_code, ndim = struct.unpack(">HBB", buf[:4])
    if zero != 0 or dtype_code != IDX_UBYTE or ndim == 0:
        raise IdxMagicError(f"bad IDX magic 0x{int.from_bytes(buf[:4], 'big'):08x}")
    header_len = 4 + 4 * ndim
    if len(buf) < header_len:
        raise IdxTruncatedError("payload shorter than the dimension header")
    dims = struct.unpack(f">{ndim}I", buf[4:header_len])
    n = 1
    for d in dims:
        n *= d
        if n > IDX_MAX_ELEMENTS:
            raise IdxDimensionError(f"declared dimensions {dims} exceed {IDX_MAX_ELEMENTS} elements")
    if len(buf) - header_len < n:
        raise IdxTruncatedError(f"expected {n} data bytes, found {len(buf) - header_len}")
    if len(buf) - header_len > n:
        raise IdxDimensionError(f"{len(buf) - header_len - n} trailing bytes after declared data")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=header_len).reshape(dims)


def serialize_idx(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise TypeError("only uint8 IDX payloads are supported")
    header = struct.pack(">HBB", 0, IDX_UBYTE, array.ndim)
    header += struct.pack(f">{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array).tobytes()


def read_idx(path) -> np.ndarray:
    """Raw uint8 contents of an IDX file (plain or gzipped)."""
    return parse_idx(_open_bytes(path))


def load_idx(path) -> np.ndarray:
    """Load an IDX file: image tensors as float64 in [0, 1], label vectors as int64."""
    raw = read_idx(path)
    if raw.ndim == 1:
        return raw.astype(np.int64)
    return raw.astype(np.float64) / 255.0


_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(root: Path, name: str) -> Path:
    for candidate in (root / name, root / (name + ".gz")):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"{name}[.gz] not found in {root}")


def load_mnist_family(root, split: str = "train", source: str = "mnist") -> RawDataset:
    """Load MNIST, KMNIST or Fashion-MNIST from a directory of standard IDX files."""
    if split not in _MNIST_FILES:
        raise ValueError(f"unknown split {split!r}")
    root = Path(root)
    img_name, lbl_name = _MNIST_FILES[split]
    images = load_idx(_find(root, img_name))
    labels = load_idx(_find(root, lbl_name))
    if images.shape[0] != labels.shape[0]:
        raise IdxDimensionError(
            f"{images.shape[0]} images but {labels.shape[0]} labels in {root}"
        )
    return RawDataset(images.reshape(len(images), -1), labels, split=split, source=source)


def parse_cifar10_batch(buf: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(buf) % CIFAR_RECORD_BYTES:
        raise CifarFormatError(
            f"{len(buf)} bytes is not a multiple of the {CIFAR_RECORD_BYTES}-byte record"
        )
    records = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    planes = records[:, 1:].reshape(-1, 3, CIFAR_SIDE * CIFAR_SIDE).astype(np.float64) / 255.0
    return planes.mean(axis=1), labels


def load_cifar10(paths: Sequence, split: str = "train") -> RawDataset:
    """Read CIFAR-10 binary batches, averaging the colour planes to greyscale."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    images, labels = [], []
    for p in paths:
        im, lb = parse_cifar10_batch(_open_bytes(p))
        images.append(im)
        labels.append(lb)
    return RawDataset(np.concatenate(images), np.concatenate(labels), split=split, source="cifar10")


def load_source(source: str, root, split: str = "train") -> RawDataset:
    root = Path(root)
    if source == "cifar10":
        if split == "train":
            files = [root / f"data_batch_{i}.bin" for i in range(1, 6)]
        else:
            files = [root / "test_batch.bin"]
        return load_cifar10(files, split=split)
    if source not in SOURCES:
        raise ValueError(f"unknown source {source!r}")
    return load_mnist_family(root, split=split, source=source)


# ----------------------------------------------------------------------------
# transforms


def binarize_parity(class_ids) -> np.ndarray:
    """Even classes map to +1, odd classes to -1."""
    class_ids = np.asarray(class_ids)
    if class_ids.size and (class_ids.min() < 0 or class_ids.max() > 9):
        raise ValueError("class ids must lie in 0..9")
    return np.where(class_ids % 2 == 0, 1, -1).astype(np.int64)


def standardize_matrix(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    ok = x.max(axis=0) > x.min(axis=0)
    # two-pass (centred) moments: same quantity as <x^2> - <x>^2, less cancellation
    centred = x[:, ok] - x[:, ok].mean(axis=0)
    out[:, ok] = centred / np.sqrt((centred * centred).mean(axis=0))
    return out


def standardize(raw: RawDataset, subset_indices=None) -> Dataset:
    """Per-pixel z-scoring with statistics of the set being standardised.

    ``subset_indices`` (row positions, or None for all) selects the examples
    first. Constant pixels map to zero.
    """
    idx = np.arange(len(raw)) if subset_indices is None else np.asarray(sorted(subset_indices))
    if len(idx) < 2:
        raise ValueError("standardisation needs at least 2 examples")
    x = raw.images[idx]
    class_ids = raw.class_ids[idx]
    return Dataset(
        inputs=standardize_matrix(x),
        labels=binarize_parity(class_ids),
        class_ids=class_ids.copy(),
        source_index=raw.source_index[idx].copy(),
        meta={"source": raw.source, "split": raw.split},
    )


def subsample(raw: RawDataset, P: int, chunk: int = 0) -> RawDataset:
    """Contiguous block ``[chunk*P, (chunk+1)*P)`` in source order."""
    if P < 1 or chunk < 0:
        raise ValueError("P must be positive and chunk non-negative")
    lo, hi = chunk * P, (chunk + 1) * P
    if hi > len(raw):
        raise IndexError(f"range [{lo}, {hi}) exceeds source size {len(raw)}")
    return RawDataset(
        raw.images[lo:hi],
        raw.class_ids[lo:hi],
        split=raw.split,
        source=raw.source,
        source_index=raw.source_index[lo:hi],
    )


def randomize_labels(ds: Dataset, seed) -> Dataset:
    rng = np.random.default_rng(seed)
    labels = rng.choice(np.array([1, -1], dtype=np.int64), size=len(ds))
    return replace(ds, labels=labels, meta={**ds.meta, "randomized_labels": seed})


def add_noise(ds: Dataset, sigma: float, seed) -> Dataset:
    """Add i.i.d. N(0, sigma^2) noise to every input entry (no re-standardisation)."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return ds
    rng = np.random.default_rng(seed)
    noisy = ds.inputs + sigma * rng.standard_normal(ds.inputs.shape)
    return replace(ds, inputs=noisy, meta={**ds.meta, "noise_sigma": sigma})


def prune(ds: Dataset, removed) -> Dataset:
    """Drop the examples whose ``source_index`` is in ``removed``."""
    removed = {int(r) for r in removed}
    if not removed:
        return ds
    present = set(ds.source_index.tolist())
    missing = removed - present
    if missing:
        raise KeyError(f"{len(missing)} indices not in dataset, e.g. {min(missing)}")
    keep = np.array([int(s) not in removed for s in ds.source_index], dtype=bool)
    if not keep.any():
        warnings.warn("pruning removed every example", DegenerateDatasetWarning, stacklevel=2)
    return Dataset(
        inputs=ds.inputs[keep],
        labels=ds.labels[keep],
        class_ids=ds.class_ids[keep],
        source_index=ds.source_index[keep],
        meta={**ds.meta, "pruned": len(removed)},
    )


def take(ds: Dataset, positions) -> Dataset:
    positions = np.asarray(positions, dtype=np.int64)
    return Dataset(
        ds.inputs[positions], ds.labels[positions], ds.class_ids[positions],
        ds.source_index[positions], meta=dict(ds.meta),
    )


# ----------------------------------------------------------------------------
# cache


def save_dataset(ds: Dataset, path) -> None:
    """Write a dataset to a versioned ``.npz`` cache."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(
            fh,
            format=np.array(CACHE_FORMAT),
            source_index=ds.source_index,
            labels=ds.labels,
            class_ids=ds.class_ids,
            inputs=np.ascontiguousarray(ds.inputs, dtype=np.float64),
        )
    tmp.replace(path)


def load_dataset(path) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        fmt = str(z["format"])
        if fmt != CACHE_FORMAT:
            raise ValueError(f"unsupported dataset cache format {fmt!r}")
        return Dataset(
            inputs=z["inputs"], labels=z["labels"],
            class_ids=z["class_ids"], source_index=z["source_index"],
        )
