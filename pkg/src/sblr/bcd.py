"""Classical block coordinate descent: each block subproblem is solved to
high accuracy before switching blocks.

The convex ``(U, b)`` and ``(V, b)`` subproblems are solved with an
accelerated proximal-gradient method (FISTA) that restarts whenever an
accelerated step would increase the block objective, so every inner
iterate is monotone.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from sblr import loss as L
from sblr.bcpd import (DEGENERATE, MAX_ITER, TOLERANCE_REACHED, FitReport, IterationRecord,
                       SolverConfig, StepsizePolicy, _search, init_params, is_degenerate,
                       relative_error)
from sblr.types import Dataset, ModelParams, RegConfig

__all__ = ["InnerSolverConfig", "BlockSolution", "block_residual", "solve_u_block",
           "solve_v_block", "fit_bcd"]


@dataclass(frozen=True)
class InnerSolverConfig:
    inner_tol: float = 1e-6
    inner_max_iter: int = 1000
    acceleration: bool = True

    def __post_init__(self):
        if not self.inner_tol > 0:
            raise ValueError("inner_tol must be positive")
        if self.inner_max_iter < 1:
            raise ValueError("inner_max_iter must be at least 1")


@dataclass(frozen=True, eq=False)
class BlockSolution:
    factor: np.ndarray
    b: float
    objective: float
    iterations: int
    step_l: float
    converged: bool


class _Block:
    """Loss and gradient oracles for one block with the other factor fixed."""

    def __init__(self, which: str, data: Dataset, other: np.ndarray, reg: RegConfig):
        self.which, self.data, self.other = which, data, other
        if which == "U":
            self.l1, self.l2 = reg.mu1, reg.mu2
        elif which == "V":
            self.l1, self.l2 = reg.nu1, reg.nu2
        else:
            raise ValueError(f"block must be 'U' or 'V', got {which!r}")

    def weight(self, x):
        return x @ self.other.T if self.which == "U" else self.other @ x.T

    def loss(self, x, b) -> float:
        return L._loss_from_margins(self.data.y, L._margins_w(self.data, self.weight(x), b))

    def penalty(self, x) -> float:
        return self.l1 * float(np.abs(x).sum()) + 0.5 * self.l2 * float(np.sum(x * x))

    def grad(self, x, b):
        m = L._margins_w(self.data, self.weight(x), b)
        c = L._residual_weights(self.data.y, m)
        M = L._weighted_sample_sum(self.data, c)
        gx = M @ self.other if self.which == "U" else M.T @ self.other
        return L._loss_from_margins(self.data.y, m), gx, float(c.sum()), m

    def trial_loss(self, x0, b0, m0):
        """``loss_at`` callback for a backtracking search based at ``(x0, b0)``."""
        def loss_at(new):
            dm = L._margins_w(self.data, self.weight(new[0] - x0), new[1] - b0)
            f = L._loss_from_margins(self.data.y, m0 + dm)
            return (f, None) + L._loss_change(self.data.y, m0, dm)
        return loss_at

    def lipschitz(self) -> float:
        if self.which == "U":
            return L.lipschitz_u(self.other, self.data)
        return L.lipschitz_v(self.other, self.data)


def block_residual(which: str, data: Dataset, other: np.ndarray, x: np.ndarray, b: float,
                   reg: RegConfig) -> tuple[float, float]:
    """``(dist(0, subdifferential), ||gradient||)`` of the block objective at ``(x, b)``."""
    blk = _Block(which, data, np.asarray(other, dtype=np.float64), reg)
    return _residual(blk, np.asarray(x, dtype=np.float64), float(b))


def _residual(blk: _Block, x, b):
    _, gx, gb, _ = blk.grad(x, b)
    smooth = gx + blk.l2 * x
    r = np.where(x != 0, smooth + blk.l1 * np.sign(x), np.maximum(0.0, np.abs(smooth) - blk.l1))
    res = math.sqrt(float(np.sum(r * r)) + gb * gb)
    gnorm = math.sqrt(float(np.sum(gx * gx)) + gb * gb)
    return res, gnorm


def _solve_block(blk: _Block, x0, b0, cfg: InnerSolverConfig, policy: StepsizePolicy,
                 l_start: float) -> BlockSolution:
    x, b = np.array(x0, dtype=np.float64), float(b0)
    f_x = blk.loss(x, b) + blk.penalty(x)
    y, yb = x, b
    t = 1.0
    step_l = l_start
    converged = False
    it = 0
    for it in range(1, cfg.inner_max_iter + 1):
        ly, gx, gb, my = blk.grad(y, yb)
        parts = [(y, gx, blk.l1, blk.l2, True), (yb, gb, 0.0, 0.0, False)]
        step_l, (z, zb), lz, _, _, _ = _search(blk.trial_loss(y, yb, my), parts, ly, step_l,
                                               policy, blk.lipschitz)
        zb = float(zb)
        f_z = lz + blk.penalty(z)
        restarted = y is x
        if f_z > f_x:
            if restarted:
                # plain step from the incumbent cannot improve: roundoff floor
                converged = True
                break
            y, yb, t = x, b, 1.0
            continue
        x_prev, b_prev, f_prev = x, b, f_x
        x, b, f_x = z, zb, f_z
        if cfg.acceleration:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_next
            y, yb, t = x + beta * (x - x_prev), b + beta * (b - b_prev), t_next
        else:
            y, yb = x, b
        if abs(f_prev - f_x) <= cfg.inner_tol * (1.0 + abs(f_prev)):
            res, gnorm = _residual(blk, x, b)
            if res <= 10.0 * cfg.inner_tol * (1.0 + gnorm):
                converged = True
                break
    return BlockSolution(x, b, f_x, it, step_l, converged)


def solve_u_block(data: Dataset, V: np.ndarray, U0: np.ndarray, b0: float, reg: RegConfig,
                  cfg: InnerSolverConfig = InnerSolverConfig(),
                  policy: StepsizePolicy = StepsizePolicy(),
                  l_start: Optional[float] = None) -> BlockSolution:
    """Approximately minimize ``loss(U, V, b) + r1(U)`` over ``(U, b)`` from ``(U0, b0)``."""
    blk = _Block("U", data, np.asarray(V, dtype=np.float64), reg)
    return _solve_block(blk, U0, b0, cfg, policy, policy.l_init if l_start is None else l_start)


def solve_v_block(data: Dataset, U: np.ndarray, V0: np.ndarray, b0: float, reg: RegConfig,
                  cfg: InnerSolverConfig = InnerSolverConfig(),
                  policy: StepsizePolicy = StepsizePolicy(),
                  l_start: Optional[float] = None) -> BlockSolution:
    """Approximately minimize ``loss(U, V, b) + r2(V)`` over ``(V, b)`` from ``(V0, b0)``."""
    blk = _Block("V", data, np.asarray(U, dtype=np.float64), reg)
    return _solve_block(blk, V0, b0, cfg, policy, policy.l_init if l_start is None else l_start)


def fit_bcd(data: Dataset, config: SolverConfig,
            inner: Optional[InnerSolverConfig] = None,
            init: Optional[ModelParams] = None) -> FitReport:
    """Alternate accurate ``(U, b)`` and ``(V, b)`` solves from the SVD start.

    Shares the outer stopping rule and trace layout with :func:`sblr.bcpd.fit`;
    the recorded stepsizes are the last inner ones of each block. Without an
    explicit ``inner`` config the inner tolerance is ``min(1e-6, tol / 100)``.
    """
    if inner is None:
        inner = InnerSolverConfig(inner_tol=min(1e-6, config.tol * 1e-2))
    if not inner.inner_tol < config.tol:
        raise ValueError("inner_tol must be smaller than the outer tol")
    reg, policy = config.reg, config.policy
    t0 = time.perf_counter()
    params = init_params(data, reg.rank) if init is None else init
    f_prev = L.objective(params, data, reg)
    l_u = l_v = policy.l_init
    trace = [IterationRecord(0, f_prev, math.nan, l_u, l_v, 0.0, 0.0)]
    reason = MAX_ITER
    k = 0
    for k in range(1, config.max_iter + 1):
        su = solve_u_block(data, params.V, params.U, params.b, reg, inner, policy, l_u)
        sv = solve_v_block(data, su.factor, params.V, su.b, reg, inner, policy, l_v)
        l_u, l_v = su.step_l, sv.step_l
        new = ModelParams(su.factor, sv.factor, sv.b)
        f_new = L.objective(new, data, reg)
        if f_new > f_prev:
            # roundoff floor, see sblr.bcpd.fit
            new, f_new, sq_step = params, f_prev, 0.0
        else:
            sq_step = float(np.sum((su.factor - params.U) ** 2)
                            + np.sum((sv.factor - params.V) ** 2)
                            + (su.b - params.b) ** 2 + (sv.b - su.b) ** 2)
        q = relative_error(params, f_prev, new, f_new)
        trace.append(IterationRecord(k, f_new, q, l_u, l_v, time.perf_counter() - t0, sq_step))
        params, f_prev = new, f_new
        if q <= config.tol:
            reason = TOLERANCE_REACHED
            break
    degenerate = is_degenerate(data)
    if degenerate:
        reason = DEGENERATE
    return FitReport(params, tuple(trace), reason, k if config.max_iter else 0,
                     time.perf_counter() - t0, degenerate)
