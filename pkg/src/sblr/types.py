"""Data model shared by the solvers: datasets of matrix samples, bilinear
model parameters and elastic-net settings.

Samples are stored stacked as one ``(n, s, t)`` float64 array. A single
sample is any 2-D array of shape ``(s, t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

__all__ = [
    "Dataset",
    "ModelParams",
    "RegConfig",
    "MulticlassModel",
    "as_sample",
    "materialize_weight_matrix",
    "margin",
    "predict",
]


def _frozen(a: ArrayLike, ndim: int, name: str) -> NDArray[np.float64]:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def as_sample(x: ArrayLike) -> NDArray[np.float64]:
    """Validate one matrix sample and return it as a float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"a sample must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("sample contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """``n`` matrix samples of identical shape ``(s, t)`` with their labels.

    Binary datasets carry labels in {-1, +1}. Multiclass datasets
    (``multiclass=True``) carry positive integer class ids.
    """

    X: NDArray[np.float64]
    y: NDArray[np.float64]
    multiclass: bool = False
    _flat: NDArray[np.float64] = field(init=False, repr=False)

    def __post_init__(self):
        X = _frozen(self.X, 3, "X")
        y = _frozen(np.ravel(self.y), 1, "y")
        n, s, t = X.shape
        if n < 1 or s < 1 or t < 1:
            raise ValueError(f"dataset needs n, s, t >= 1, got {X.shape}")
        if y.shape[0] != n:
            raise ValueError(f"{n} samples but {y.shape[0]} labels")
        if self.multiclass:
            if np.any(y != np.round(y)) or np.any(y < 1):
                raise ValueError("multiclass labels must be positive integers")
        elif not np.all((y == 1.0) | (y == -1.0)):
            raise ValueError("binary labels must be -1 or +1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "_flat", X.reshape(n, s * t))

    @classmethod
    def from_samples(cls, samples: Sequence[ArrayLike], labels: ArrayLike,
                     multiclass: bool = False) -> "Dataset":
        mats = [as_sample(x) for x in samples]
        if not mats:
            raise ValueError("dataset must contain at least one sample")
        shape = mats[0].shape
        if any(m.shape != shape for m in mats):
            raise ValueError("all samples must share one shape")
        return cls(np.stack(mats), np.asarray(labels, dtype=np.float64), multiclass)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def s(self) -> int:
        return self.X.shape[1]

    @property
    def t(self) -> int:
        return self.X.shape[2]

    @property
    def flat(self) -> NDArray[np.float64]:
        """Samples as an ``(n, s*t)`` row-major view."""
        return self._flat

    def subset(self, idx: ArrayLike) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.X[idx], self.y[idx], self.multiclass)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.multiclass == other.multiclass
                and self.X.shape == other.X.shape
                and np.array_equal(self.X, other.X)
                and np.array_equal(self.y, other.y))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Blocked iterate ``(U, V, b)`` with ``U`` of shape (s, r) and ``V`` of
    shape (t, r). The margin of a sample ``X`` is ``tr(U^T X V) + b``."""

    U: NDArray[np.float64]
    V: NDArray[np.float64]
    b: float = 0.0

    def __post_init__(self):
        U = _frozen(self.U, 2, "U")
        V = _frozen(self.V, 2, "V")
        if U.shape[1] != V.shape[1]:
            raise ValueError(f"U has {U.shape[1]} columns but V has {V.shape[1]}")
        r = U.shape[1]
        if not 1 <= r <= min(U.shape[0], V.shape[0]):
            raise ValueError(f"rank {r} outside [1, min(s, t)={min(U.shape[0], V.shape[0])}]")
        b = float(self.b)
        if not np.isfinite(b):
            raise ValueError("intercept is not finite")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "b", b)

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @classmethod
    def zeros(cls, s: int, t: int, r: int, b: float = 0.0) -> "ModelParams":
        return cls(np.zeros((s, r)), np.zeros((t, r)), b)

    def replace(self, U=None, V=None, b=None) -> "ModelParams":
        return ModelParams(self.U if U is None else U,
                           self.V if V is None else V,
                           self.b if b is None else b)

    def sq_norm(self) -> float:
        """``||U||_F^2 + ||V||_F^2 + b^2``."""
        return float(np.sum(self.U ** 2) + np.sum(self.V ** 2) + self.b ** 2)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (np.array_equal(self.U, other.U) and np.array_equal(self.V, other.V)
                and self.b == other.b)

    __hash__ = None


@dataclass(frozen=True)
class RegConfig:
    """Elastic-net weights: ``mu1 ||U||_1 + mu2/2 ||U||_F^2`` on U and
    ``nu1 ||V||_1 + nu2/2 ||V||_F^2`` on V."""

    mu1: float = 0.0
    mu2: float = 0.0
    nu1: float = 0.0
    nu2: float = 0.0
    rank: int = 1

    def __post_init__(self):
        for name in ("mu1", "mu2", "nu1", "nu2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be a finite nonnegative number, got {v}")
        if int(self.rank) != self.rank or self.rank < 1:
            raise ValueError(f"rank must be a positive integer, got {self.rank}")


@dataclass(frozen=True, eq=False)
class MulticlassModel:
    """Per-class bilinear models.

    ``one-vs-all`` stores one block per class. ``multinomial`` stores one
    block per class except the last, whose parameters are pinned to zero.
    """

    classes: tuple[int, ...]
    params: tuple[ModelParams, ...]
    mode: str
    reports: tuple = ()

    def __post_init__(self):
        classes = tuple(int(c) for c in self.classes)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "params", tuple(self.params))
        if len(set(classes)) != len(classes) or len(classes) < 2:
            raise ValueError("need at least two distinct classes")
        if self.mode == "one-vs-all":
            expected = len(classes)
        elif self.mode == "multinomial":
            expected = len(classes) - 1
        else:
            raise ValueError(f"unknown multiclass mode {self.mode!r}")
        if len(self.params) != expected:
            raise ValueError(f"{self.mode} with {len(classes)} classes needs "
                             f"{expected} parameter blocks, got {len(self.params)}")
        shapes = {(p.shape, p.rank) for p in self.params}
        if len(shapes) != 1:
            raise ValueError("all class blocks must share shape and rank")


def materialize_weight_matrix(params: ModelParams) -> NDArray[np.float64]:
    """Low-rank weight matrix ``W = U V^T`` of shape (s, t)."""
    return params.U @ params.V.T


def _check_shape(params: ModelParams, x: np.ndarray):
    if x.shape != params.shape:
        raise ValueError(f"sample shape {x.shape} does not match model shape {params.shape}")


def margin(params: ModelParams, x: ArrayLike) -> float:
    """``tr(U^T x V) + b``."""
    x = as_sample(x)
    _check_shape(params, x)
    return float(np.trace(params.U.T @ x @ params.V) + params.b)


def predict(params: ModelParams, x: ArrayLike) -> tuple[int, float]:
    """Return ``(label, P(label=+1))``. A margin of exactly zero predicts +1."""
    m = margin(params, x)
    return (1 if m >= 0 else -1), float(expit(m))
