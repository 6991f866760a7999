"""Dataset and model files, synthetic data and cross-validation folds.

Dataset file (``SBLR`` version 1, little-endian)::

    offset  size    field
    0       4       magic b"SBLR"
    4       4       uint32 version (= 1)
    8       12      uint32 n, s, t
    20      1       uint8 label width in bytes (= 1)
    21      n       int8 labels (-1/+1, or class ids 1..127)
    21+n    8*n*s*t float64 samples, sample-major, each row-major

Model file (``SBLM`` version 1, little-endian)::

    magic b"SBLM", uint32 version, uint8 kind, uint32 s, t, r, m
    kind 0  bilinear:        U (s*r), V (t*r), b          (m = 1)
    kind 1  linear:          w (s*t), b                   (r = 0, m = 1)
    kind 2  one-vs-all:      m int32 class ids, then m bilinear blocks
    kind 3  multinomial:     m int32 class ids, then m-1 bilinear blocks

All matrices are float64 in row-major order.

Synthetic data draw standard normals from numpy's PCG64 generator
(``numpy.random.default_rng(seed)``), whose ``standard_normal`` uses the
ziggurat method.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from sblr.types import Dataset, ModelParams, MulticlassModel

__all__ = [
    "FormatError",
    "generate_synthetic",
    "write_dataset",
    "read_dataset",
    "export_csv",
    "import_csv",
    "kfold_split",
    "train_test_split",
    "write_model",
    "read_model",
]

DATA_MAGIC = b"SBLR"
MODEL_MAGIC = b"SBLM"
VERSION = 1
_DATA_HEADER = struct.Struct("<4sIIIIB")
_MODEL_HEADER = struct.Struct("<4sIBIIII")

KIND_BILINEAR, KIND_LINEAR, KIND_OVA, KIND_MULTINOMIAL = 0, 1, 2, 3


class FormatError(ValueError):
    """Malformed dataset, model or CSV file."""


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def generate_synthetic(n: int, s: int, t: int, shift: float = 1.0, seed=0) -> Dataset:
    """``n/2`` samples ``N(0,1) + shift`` labelled +1 followed by ``n/2``
    samples ``N(0,1) - shift`` labelled -1."""
    if n < 2 or n % 2:
        raise ValueError(f"n must be a positive even number, got {n}")
    rng = _rng(seed)
    half = n // 2
    X = rng.standard_normal((n, s, t))
    X[:half] += shift
    X[half:] -= shift
    y = np.concatenate([np.ones(half), -np.ones(half)])
    return Dataset(X, y)


# ---------------------------------------------------------------------------
# binary dataset format


def write_dataset(path, data: Dataset) -> None:
    labels = data.y.astype(np.int64)
    if np.any(labels < -128) or np.any(labels > 127):
        raise FormatError("labels do not fit in one signed byte")
    header = _DATA_HEADER.pack(DATA_MAGIC, VERSION, data.n, data.s, data.t, 1)
    body = labels.astype("<i1").tobytes() + np.ascontiguousarray(data.X, dtype="<f8").tobytes()
    Path(path).write_bytes(header + body)


def read_dataset(path, multiclass: bool | None = None) -> Dataset:
    """Read an ``SBLR`` file. Label kind is inferred unless ``multiclass`` is given."""
    raw = Path(path).read_bytes()
    if len(raw) < _DATA_HEADER.size:
        raise FormatError("file shorter than the header")
    magic, version, n, s, t, width = _DATA_HEADER.unpack_from(raw)
    if magic != DATA_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if width != 1:
        raise FormatError(f"unsupported label width {width}")
    expected = _DATA_HEADER.size + n + 8 * n * s * t
    if len(raw) != expected:
        raise FormatError(f"truncated or oversized file: {len(raw)} bytes, expected {expected}")
    off = _DATA_HEADER.size
    labels = np.frombuffer(raw, dtype="<i1", count=n, offset=off).astype(np.float64)
    X = np.frombuffer(raw, dtype="<f8", count=n * s * t, offset=off + n).reshape(n, s, t)
    binary = bool(np.all((labels == 1) | (labels == -1)))
    if multiclass is None:
        multiclass = not binary
    if multiclass:
        if np.any(labels < 1):
            raise FormatError("invalid class label byte (must be >= 1)")
    elif not binary:
        bad = int(np.flatnonzero((labels != 1) & (labels != -1))[0])
        raise FormatError(f"invalid label byte {int(labels[bad])} at sample {bad}")
    return Dataset(X.astype(np.float64), labels, multiclass)


# ---------------------------------------------------------------------------
# CSV


def export_csv(path, data: Dataset) -> None:
    """One line per sample: label then the ``s*t`` entries in row-major order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for label, row in zip(data.y, data.flat):
            w.writerow([int(label)] + [repr(float(v)) for v in row])


def import_csv(path, s: int, t: int, multiclass: bool = False) -> Dataset:
    labels, rows = [], []
    with open(path, newline="") as fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if not fields or all(not f.strip() for f in fields):
                continue
            if len(fields) != 1 + s * t:
                raise FormatError(f"line {lineno}: expected {1 + s * t} fields, got {len(fields)}")
            try:
                label = float(fields[0])
                values = [float(f) for f in fields[1:]]
            except ValueError as exc:
                raise FormatError(f"line {lineno}: {exc}") from None
            if multiclass:
                if label != int(label) or label < 1:
                    raise FormatError(f"line {lineno}: class label must be a positive integer")
            elif label not in (-1.0, 1.0):
                raise FormatError(f"line {lineno}: label must be -1 or +1, got {fields[0]}")
            if not all(np.isfinite(values)):
                raise FormatError(f"line {lineno}: non-finite value")
            labels.append(label)
            rows.append(values)
    if not rows:
        raise FormatError("no samples in file")
    X = np.asarray(rows, dtype=np.float64).reshape(len(rows), s, t)
    return Dataset(X, np.asarray(labels), multiclass)


# ---------------------------------------------------------------------------
# splitting


def kfold_split(n: int, k: int, seed=0) -> list[np.ndarray]:
    """Shuffle ``0..n-1`` and cut it into ``k`` folds whose sizes differ by at most 1."""
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = _rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def train_test_split(data: Dataset, test_fraction: float, seed=0):
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    perm = _rng(seed).permutation(data.n)
    n_test = max(1, int(round(test_fraction * data.n)))
    return data.subset(np.sort(perm[n_test:])), data.subset(np.sort(perm[:n_test]))


# ---------------------------------------------------------------------------
# model files


def _f8(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _block_bytes(p: ModelParams) -> bytes:
    return _f8(p.U) + _f8(p.V) + _f8([p.b])


def write_model(path, model) -> None:
    """Write a :class:`ModelParams`, :class:`LinearModel` or :class:`MulticlassModel`."""
    from sblr.linear import LinearModel

    if isinstance(model, ModelParams):
        s, t = model.shape
        head = _MODEL_HEADER.pack(MODEL_MAGIC, VERSION, KIND_BILINEAR, s, t, model.rank, 1)
        body = _block_bytes(model)
    elif isinstance(model, LinearModel):
        s, t = model.shape
        head = _MODEL_HEADER.pack(MODEL_MAGIC, VERSION, KIND_LINEAR, s, t, 0, 1)
        body = _f8(model.w) + _f8([model.b])
    elif isinstance(model, MulticlassModel):
        kind = KIND_OVA if model.mode == "one-vs-all" else KIND_MULTINOMIAL
        s, t = model.params[0].shape
        m = len(model.classes)
        head = _MODEL_HEADER.pack(MODEL_MAGIC, VERSION, kind, s, t, model.params[0].rank, m)
        body = np.asarray(model.classes, dtype="<i4").tobytes()
        body += b"".join(_block_bytes(p) for p in model.params)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    Path(path).write_bytes(head + body)


def read_model(path):
    from sblr.linear import LinearModel

    raw = Path(path).read_bytes()
    if len(raw) < _MODEL_HEADER.size:
        raise FormatError("file shorter than the model header")
    magic, version, kind, s, t, r, m = _MODEL_HEADER.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    off = _MODEL_HEADER.size

    def take(count, dtype="<f8"):
        nonlocal off
        size = np.dtype(dtype).itemsize * count
        if off + size > len(raw):
            raise FormatError("truncated model file")
        out = np.frombuffer(raw, dtype=dtype, count=count, offset=off)
        off += size
        return out

    def block():
        U = take(s * r).reshape(s, r)
        V = take(t * r).reshape(t, r)
        return ModelParams(U, V, float(take(1)[0]))

    if kind == KIND_BILINEAR:
        model = block()
    elif kind == KIND_LINEAR:
        model = LinearModel(take(s * t).copy(), float(take(1)[0]), (s, t))
    elif kind in (KIND_OVA, KIND_MULTINOMIAL):
        classes = tuple(int(c) for c in take(m, "<i4"))
        count = m if kind == KIND_OVA else m - 1
        blocks = [block() for _ in range(count)]
        model = MulticlassModel(classes, tuple(blocks),
                                "one-vs-all" if kind == KIND_OVA else "multinomial")
    else:
        raise FormatError(f"unknown model kind {kind}")
    if off != len(raw):
        raise FormatError("trailing bytes after model payload")
    return model
