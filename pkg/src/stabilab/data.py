"""Dataset container, bit-exact binary persistence, IDX ingestion, splitting
and clean/poison mixing.

On-disk dataset format ("RSLB", version 1), all integers little-endian:

    magic   4 bytes  b"RSLB"
    version u32      1
    n       u64      examples
    m       u64      features per example
    k       u32      number of classes
    bounded u8       1 iff every feature lies in [0, 1]
    plen    u32      provenance byte length
    prov    plen bytes, UTF-8
    feats   n*m little-endian float64, row-major
    labels  n u32    binary tasks store {-1,+1} as {0,1}

Model files share the same envelope with magic "RSLM" (see models.py).
"""

from __future__ import annotations

import hashlib
import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    AlignmentError,
    BadMagicError,
    BadVersionError,
    InputError,
    InvariantError,
    TruncatedFileError,
)
from .numerics import RngState

_MAGIC = b"RSLB"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQIBI")

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Dense feature matrix with integer labels; immutable by convention.

    Binary tasks (k == 2) use labels in {-1, +1}; multiclass uses [0, k).
    bounded promises every feature lies in [0, 1].
    """

    features: np.ndarray
    labels: np.ndarray
    k: int
    bounded: bool
    provenance: str = ""

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InvariantError("features must be a 2D matrix")
        n, m = self.features.shape
        if n < 1 or m < 1:
            raise InvariantError("dataset must contain at least one example and feature")
        if self.labels.shape != (n,):
            raise InvariantError("labels must align with features")
        if self.k < 2:
            raise InvariantError("k must be at least 2")
        if self.k == 2:
            if not np.all(np.abs(self.labels) == 1):
                raise InvariantError("binary labels must be -1 or +1")
        elif self.labels.min() < 0 or self.labels.max() >= self.k:
            raise InvariantError(f"labels must lie in [0, {self.k})")
        if not np.all(np.isfinite(self.features)):
            raise InvariantError("features must be finite")
        if self.bounded:
            bad = np.argwhere((self.features < 0.0) | (self.features > 1.0))
            if bad.size:
                r, c = bad[0]
                raise InvariantError(
                    f"bounded dataset has feature {self.features[r, c]} "
                    f"outside [0, 1] at row {r}, column {c}"
                )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]

    def with_features(self, features: np.ndarray, provenance: str | None = None) -> "Dataset":
        return Dataset(
            features,
            self.labels.copy(),
            self.k,
            self.bounded,
            self.provenance if provenance is None else provenance,
        )


@dataclass(frozen=True)
class MixSpec:
    """Fraction of rows kept clean when mixing, and the stream choosing them."""

    clean_fraction: float
    seed: RngState

    def __post_init__(self):
        if not 0.0 <= self.clean_fraction <= 1.0:
            raise InputError("clean_fraction must lie in [0, 1]")


def to_bytes(ds: Dataset) -> bytes:
    prov = ds.provenance.encode("utf-8")
    buf = io.BytesIO()
    buf.write(
        _HEADER.pack(_MAGIC, _VERSION, ds.n, ds.m, ds.k, 1 if ds.bounded else 0, len(prov))
    )
    buf.write(prov)
    buf.write(np.ascontiguousarray(ds.features, dtype="<f8").tobytes())
    if ds.k == 2:
        stored = ((ds.labels + 1) // 2).astype("<u4")
    else:
        stored = ds.labels.astype("<u4")
    buf.write(stored.tobytes())
    return buf.getvalue()


def from_bytes(raw: bytes) -> Dataset:
    if len(raw) < _HEADER.size:
        raise TruncatedFileError("file shorter than the fixed header")
    magic, version, n, m, k, bounded, plen = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise BadMagicError(f"expected magic {_MAGIC!r}, found {magic!r}")
    if version != _VERSION:
        raise BadVersionError(f"unsupported dataset format version {version}")
    off = _HEADER.size
    expected = off + plen + n * m * 8 + n * 4
    if len(raw) < expected:
        raise TruncatedFileError(f"payload needs {expected} bytes, file has {len(raw)}")
    if len(raw) > expected:
        raise TruncatedFileError(f"{len(raw) - expected} trailing bytes after payload")
    try:
        prov = raw[off : off + plen].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InvariantError("provenance is not valid UTF-8") from exc
    off += plen
    feats = np.frombuffer(raw, dtype="<f8", count=n * m, offset=off)
    if n >= 1 and m >= 1:
        feats = feats.reshape(n, m)
    off += n * m * 8
    stored = np.frombuffer(raw, dtype="<u4", count=n, offset=off).astype(np.int64)
    if k == 2:
        if stored.size and stored.max() > 1:
            raise InvariantError("binary labels on disk must be 0 or 1")
        labels = 2 * stored - 1
    else:
        labels = stored
    return Dataset(feats.astype(np.float64), labels, int(k), bool(bounded), prov)


def save(ds: Dataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ds))


def load(path) -> Dataset:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def dataset_digest(ds: Dataset) -> str:
    """SHA-256 of the serialized bytes; the identity used by determinism checks."""
    return hashlib.sha256(to_bytes(ds)).hexdigest()


def _read_idx(path, magic_wanted: int, ndim: int) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    header = 4 * (1 + ndim)
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: shorter than its IDX header")
    words = struct.unpack(f">{1 + ndim}I", raw[:header])
    if words[0] != magic_wanted:
        raise BadMagicError(f"{path}: IDX magic 0x{words[0]:08x}, wanted 0x{magic_wanted:08x}")
    dims = words[1:]
    count = int(np.prod(dims))
    if len(raw) != header + count:
        raise TruncatedFileError(f"{path}: payload size does not match header dims {dims}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def import_idx(images_path, labels_path, classes, limit: int | None = None) -> Dataset:
    """Load an IDX image/label pair, keep the requested classes, scale to [0, 1].

    Two requested classes become a binary task: the smaller class id maps to
    -1, the larger to +1. More classes are relabeled to 0..k-1 in sorted
    order. At most `limit` examples are kept per class, in file order.
    """
    images = _read_idx(images_path, _IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, _IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise InvariantError(
            f"image count {images.shape[0]} does not match label count {labels.shape[0]}"
        )
    classes = sorted(int(c) for c in classes)
    if len(classes) < 2:
        raise InputError("need at least two classes")
    present = set(np.unique(labels).tolist())
    missing = [c for c in classes if c not in present]
    if missing:
        raise InputError(f"requested classes {missing} not present in {labels_path}")

    keep = []
    taken = {c: 0 for c in classes}
    for i, lab in enumerate(labels):
        c = int(lab)
        if c in taken and (limit is None or taken[c] < limit):
            keep.append(i)
            taken[c] += 1
    keep = np.array(keep, dtype=np.int64)
    feats = images[keep].reshape(len(keep), -1).astype(np.float64) / 255.0
    raw_labels = labels[keep].astype(np.int64)
    if len(classes) == 2:
        mapped = np.where(raw_labels == classes[0], -1, 1)
        k = 2
    else:
        lut = {c: i for i, c in enumerate(classes)}
        mapped = np.array([lut[int(c)] for c in raw_labels], dtype=np.int64)
        k = len(classes)
    # basename only: provenance must not tie artifact bytes to a run directory
    prov = f"idx:{os.path.basename(str(images_path))}:classes=" + ",".join(
        str(c) for c in classes
    )
    return Dataset(feats, mapped, k=k, bounded=True, provenance=prov)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Inverse of import_idx's readers: write uint8 images (n, rows, cols) and
    labels (n,) as standard big-endian IDX files."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise InputError("need images (n, rows, cols) and labels (n,)")
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", _IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", _IDX_LABELS_MAGIC, n))
        fh.write(labels.tobytes())


def split(ds: Dataset, train_fraction: float, rng: RngState) -> tuple[Dataset, Dataset]:
    """Disjoint (train, test) partition; train gets floor(n * train_fraction) rows."""
    if not 0.0 < train_fraction < 1.0:
        raise InputError("train_fraction must lie strictly between 0 and 1")
    n_train = int(np.floor(ds.n * train_fraction))
    if n_train < 1 or n_train >= ds.n:
        raise InputError("split would leave an empty side")
    perm = rng.draws().permutation(ds.n)
    idx_train = np.sort(perm[:n_train])
    idx_test = np.sort(perm[n_train:])
    a = Dataset(
        ds.features[idx_train].copy(), ds.labels[idx_train].copy(), ds.k, ds.bounded,
        f"{ds.provenance}|split:train",
    )
    b = Dataset(
        ds.features[idx_test].copy(), ds.labels[idx_test].copy(), ds.k, ds.bounded,
        f"{ds.provenance}|split:test",
    )
    return a, b


def mix(clean: Dataset, poisoned: Dataset, spec: MixSpec) -> Dataset:
    """Keep a seeded floor(n * clean_fraction) subset of rows clean and take the
    poisoned rows elsewhere. Requires example alignment so labels stay correct."""
    if clean.n != poisoned.n or clean.m != poisoned.m or clean.k != poisoned.k:
        raise AlignmentError("clean and poisoned datasets must have identical shape")
    if not np.array_equal(clean.labels, poisoned.labels):
        raise AlignmentError("clean and poisoned labels must agree row-wise")
    if clean.bounded != poisoned.bounded:
        raise AlignmentError("clean and poisoned bounded flags must agree")
    n_clean = int(np.floor(clean.n * spec.clean_fraction))
    perm = spec.seed.draws().permutation(clean.n)
    clean_rows = perm[:n_clean]
    feats = poisoned.features.copy()
    feats[clean_rows] = clean.features[clean_rows]
    prov = f"mix:clean_fraction={spec.clean_fraction:g}|{poisoned.provenance}"
    return Dataset(feats, clean.labels.copy(), clean.k, clean.bounded, prov)


def export_csv(ds: Dataset, path) -> None:
    """Plain-text dump for inspection: feature columns then the label."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(f"f{j}" for j in range(ds.m)) + ",label\n")
        for i in range(ds.n):
            row = ",".join(repr(float(v)) for v in ds.features[i])
            fh.write(f"{row},{int(ds.labels[i])}\n")
