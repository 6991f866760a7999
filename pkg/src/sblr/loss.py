"""Bilinear logistic loss, its partial gradients and the block Lipschitz
constants used as a safe stepsize cap.

All margins are evaluated through the weight matrix ``W = U V^T`` so one
pass over the data costs a single ``(n, s*t)`` matrix-vector product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from sblr.types import Dataset, ModelParams, RegConfig

__all__ = [
    "LossGradient",
    "softplus_neg",
    "margins",
    "loss",
    "penalty",
    "objective",
    "gradients",
    "lipschitz_u",
    "lipschitz_v",
]


@dataclass(frozen=True)
class LossGradient:
    gU: NDArray[np.float64]
    gV: NDArray[np.float64]
    gb: float


def softplus_neg(m):
    """Stable ``log(1 + exp(-m))``."""
    m = np.asarray(m, dtype=np.float64)
    out = np.maximum(0.0, -m) + np.log1p(np.exp(-np.abs(m)))
    return float(out) if out.ndim == 0 else out


def _check(params: ModelParams, data: Dataset):
    if params.shape != (data.s, data.t):
        raise ValueError(f"model shape {params.shape} does not match data shape {(data.s, data.t)}")


def _margins_w(data: Dataset, W: np.ndarray, b: float) -> np.ndarray:
    return data.flat @ W.ravel() + b


def margins(params: ModelParams, data: Dataset) -> NDArray[np.float64]:
    """Margins ``tr(U^T X_i V) + b`` for every sample."""
    _check(params, data)
    return _margins_w(data, params.U @ params.V.T, params.b)


def _loss_from_margins(y: np.ndarray, m: np.ndarray) -> float:
    return float(np.mean(softplus_neg(y * m)))


def _loss_change(y: np.ndarray, m0: np.ndarray, dm: np.ndarray) -> tuple[float, float]:
    """Loss change when margins move from ``m0`` to ``m0 + dm``, evaluated without
    cancellation; also returns the mean absolute per-sample change as a roundoff scale."""
    a, d = -y * m0, -y * dm
    small = np.abs(d) <= 1.0
    # log(1 + e^(a+d)) - log(1 + e^a) = log1p(sigmoid(a) * expm1(d))
    stable = np.log1p(expit(a) * np.expm1(np.where(small, d, 0.0)))
    direct = softplus_neg(-(a + d)) - softplus_neg(-a)
    per = np.where(small, stable, direct)
    return float(np.mean(per)), float(np.mean(np.abs(per)))


def loss(params: ModelParams, data: Dataset) -> float:
    """Mean logistic loss over the dataset."""
    return _loss_from_margins(data.y, margins(params, data))


def penalty_u(U: np.ndarray, reg: RegConfig) -> float:
    return reg.mu1 * float(np.abs(U).sum()) + 0.5 * reg.mu2 * float(np.sum(U * U))


def penalty_v(V: np.ndarray, reg: RegConfig) -> float:
    return reg.nu1 * float(np.abs(V).sum()) + 0.5 * reg.nu2 * float(np.sum(V * V))


def penalty(params: ModelParams, reg: RegConfig) -> float:
    """Elastic-net penalty on both factors."""
    return penalty_u(params.U, reg) + penalty_v(params.V, reg)


def objective(params: ModelParams, data: Dataset, reg: RegConfig) -> float:
    return loss(params, data) + penalty(params, reg)


def _residual_weights(y: np.ndarray, m: np.ndarray) -> np.ndarray:
    # -(1/n) y_i sigma_i with sigma_i = 1 / (1 + exp(y_i m_i))
    return -y * expit(-y * m) / y.shape[0]


def _weighted_sample_sum(data: Dataset, c: np.ndarray) -> np.ndarray:
    return (c @ data.flat).reshape(data.s, data.t)


def gradients(params: ModelParams, data: Dataset) -> LossGradient:
    """Partial gradients of the loss with respect to U, V and b."""
    m = margins(params, data)
    c = _residual_weights(data.y, m)
    M = _weighted_sample_sum(data, c)
    return LossGradient(M @ params.V, M.T @ params.U, float(c.sum()))


def lipschitz_u(V: np.ndarray, data: Dataset) -> float:
    """Lipschitz constant of the (U, b) partial gradient for fixed V:
    ``sqrt(2)/n * sum_i (||X_i V||_F + 1)^2``."""
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[0] != data.t:
        raise ValueError(f"V must have {data.t} rows, got shape {V.shape}")
    norms = np.linalg.norm(data.X @ V, axis=(1, 2))
    return float(np.sqrt(2.0) * np.mean((norms + 1.0) ** 2))


def lipschitz_v(U: np.ndarray, data: Dataset) -> float:
    """Mirror of :func:`lipschitz_u` using ``||X_i^T U||_F``."""
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[0] != data.s:
        raise ValueError(f"U must have {data.s} rows, got shape {U.shape}")
    norms = np.linalg.norm(np.swapaxes(data.X, 1, 2) @ U, axis=(1, 2))
    return float(np.sqrt(2.0) * np.mean((norms + 1.0) ** 2))
