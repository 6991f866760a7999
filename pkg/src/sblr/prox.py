"""Soft-thresholding and the closed-form elastic-net proximal steps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ProxSpec", "shrink", "prox_update_factor", "intercept_step"]


@dataclass(frozen=True)
class ProxSpec:
    """Stepsize ``step_l`` with l1/l2 elastic-net weights for one factor."""

    step_l: float
    l1: float = 0.0
    l2: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.step_l) and self.step_l > 0):
            raise ValueError(f"step_l must be positive and finite, got {self.step_l}")
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError("elastic-net weights must be nonnegative")

    @property
    def tau(self) -> float:
        return self.l1 / (self.step_l + self.l2)


def shrink(z, tau: float) -> np.ndarray:
    """Entrywise soft-thresholding; entries with ``|z| <= tau`` map to 0."""
    if tau < 0:
        raise ValueError(f"threshold must be nonnegative, got {tau}")
    z = np.asarray(z, dtype=np.float64)
    out = np.where(z > tau, z - tau, np.where(z < -tau, z + tau, 0.0))
    return out


def prox_update_factor(current, grad, spec: ProxSpec) -> np.ndarray:
    """Exact minimizer over X of

        <grad, X - current> + step_l/2 ||X - current||_F^2
            + l1 ||X||_1 + l2/2 ||X||_F^2
    """
    current = np.asarray(current, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if current.shape != grad.shape:
        raise ValueError(f"shape mismatch: {current.shape} vs {grad.shape}")
    denom = spec.step_l + spec.l2
    return shrink((spec.step_l * current - grad) / denom, spec.l1 / denom)


def intercept_step(b: float, gb: float, step_l: float) -> float:
    if not step_l > 0:
        raise ValueError(f"step_l must be positive, got {step_l}")
    return float(b - gb / step_l)
