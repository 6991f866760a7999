"""Linear logistic regression on vectorized samples, optionally with an
l1 penalty on the weights, solved by accelerated proximal gradient."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from sblr.bcpd import StepsizePolicy, _search
from sblr.loss import _loss_change, softplus_neg
from sblr.types import Dataset, as_sample

__all__ = ["LinearModel", "LinearSolverConfig", "LinearFit", "vectorize", "linear_objective",
           "linear_gradient", "linear_residual", "solve_linear", "fit_linear", "predict_linear"]


@dataclass(frozen=True, eq=False)
class LinearModel:
    w: NDArray[np.float64]
    b: float
    shape: tuple[int, int]

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).ravel()
        shape = tuple(int(v) for v in self.shape)
        if w.size != shape[0] * shape[1]:
            raise ValueError(f"w has {w.size} entries, shape {shape} needs {shape[0] * shape[1]}")
        if not (np.all(np.isfinite(w)) and np.isfinite(self.b)):
            raise ValueError("linear model has non-finite entries")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "shape", shape)


@dataclass(frozen=True)
class LinearSolverConfig:
    tol: float = 1e-6
    obj_tol: float = 1e-13
    max_iter: int = 20000
    acceleration: bool = True


@dataclass(frozen=True, eq=False)
class LinearFit:
    model: LinearModel
    objective: float
    residual: float
    iterations: int
    converged: bool
    history: tuple[float, ...]


def vectorize(x) -> NDArray[np.float64]:
    """Row-major flattening of a matrix sample."""
    return as_sample(x).ravel(order="C")


def linear_objective(w, b, data: Dataset, lam: float) -> float:
    m = data.flat @ w + b
    return float(np.mean(softplus_neg(data.y * m))) + lam * float(np.abs(w).sum())


def linear_gradient(w, b, data: Dataset):
    """Gradient of the mean logistic loss with respect to ``(w, b)``."""
    m = data.flat @ w + b
    c = -data.y * expit(-data.y * m) / data.n
    return c @ data.flat, float(c.sum())


def linear_residual(w, b, data: Dataset, lam: float) -> float:
    """Max-norm distance from 0 to the subdifferential of the objective."""
    gw, gb = linear_gradient(w, b, data)
    r = np.where(w != 0, gw + lam * np.sign(w), np.maximum(0.0, np.abs(gw) - lam))
    return max(float(np.max(np.abs(r))), abs(gb))


def solve_linear(data: Dataset, lam: float = 0.0, cfg: LinearSolverConfig = LinearSolverConfig(),
                 policy: StepsizePolicy = StepsizePolicy(), w0=None, b0: float = 0.0) -> LinearFit:
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    A, y, n = data.flat, data.y, data.n

    def loss_and_grad(w, b):
        m = A @ w + b
        c = -y * expit(-y * m) / n
        return float(np.mean(softplus_neg(y * m))), c @ A, float(c.sum()), m

    def trial_loss(w0, b0, m0):
        def loss_at(new):
            dm = A @ (new[0] - w0) + (new[1] - b0)
            f = float(np.mean(softplus_neg(y * (m0 + dm))))
            return (f, None) + _loss_change(y, m0, dm)
        return loss_at

    def lipschitz():
        aug = np.hstack([A, np.ones((n, 1))])
        return 0.25 * float(np.linalg.norm(aug, 2)) ** 2 / n

    x = np.zeros(A.shape[1]) if w0 is None else np.array(w0, dtype=np.float64)
    b = float(b0)
    f_x = linear_objective(x, b, data, lam)
    history = [f_x]
    y_w, y_b, t = x, b, 1.0
    step_l = policy.l_init
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        ly, gw, gb, my = loss_and_grad(y_w, y_b)
        parts = [(y_w, gw, lam, 0.0, True), (y_b, gb, 0.0, 0.0, False)]
        step_l, (z, zb), lz, _, _, _ = _search(trial_loss(y_w, y_b, my), parts, ly, step_l,
                                               policy, lipschitz)
        f_z = lz + lam * float(np.abs(z).sum())
        if f_z > f_x:
            if y_w is x:
                converged = linear_residual(x, b, data, lam) <= 1e2 * cfg.tol
                break
            y_w, y_b, t = x, b, 1.0
            continue
        x_prev, b_prev, f_prev = x, b, f_x
        x, b, f_x = z, float(zb), f_z
        history.append(f_x)
        if cfg.acceleration:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_next
            y_w, y_b, t = x + beta * (x - x_prev), b + beta * (b - b_prev), t_next
        else:
            y_w, y_b = x, b
        if linear_residual(x, b, data, lam) <= cfg.tol:
            converged = True
            break
        if abs(f_prev - f_x) <= cfg.obj_tol * (1.0 + abs(f_prev)):
            break
    model = LinearModel(x, b, (data.s, data.t))
    return LinearFit(model, f_x, linear_residual(x, b, data, lam), it, converged, tuple(history))


def fit_linear(data: Dataset, lam: float = 0.0, cfg: Optional[LinearSolverConfig] = None) -> LinearModel:
    """Minimize the mean logistic loss plus ``lam * ||w||_1``; the intercept is unpenalized."""
    return solve_linear(data, lam, cfg or LinearSolverConfig()).model


def linear_margin(model: LinearModel, x) -> float:
    x = as_sample(x)
    if x.shape != model.shape:
        raise ValueError(f"sample shape {x.shape} does not match model shape {model.shape}")
    return float(vectorize(x) @ model.w + model.b)


def predict_linear(model: LinearModel, x) -> tuple[int, float]:
    m = linear_margin(model, x)
    return (1 if m >= 0 else -1), float(expit(m))
