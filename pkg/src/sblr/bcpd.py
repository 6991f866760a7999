"""Block coordinate proximal descent for sparse bilinear logistic regression.

Each outer iteration takes one proximal-gradient step on the ``(U, b)``
block and then one on the ``(V, b)`` block. Stepsizes follow a dynamic
rule: the previous value divided by ``eta`` is tried first and is grown by
``eta`` until a sufficient-decrease test on the loss passes.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from sblr import loss as L
from sblr.prox import ProxSpec, intercept_step, prox_update_factor
from sblr.types import Dataset, ModelParams, RegConfig

__all__ = [
    "SolverError",
    "StepsizePolicy",
    "SolverConfig",
    "IterationRecord",
    "FitReport",
    "BlockStep",
    "init_params",
    "relative_error",
    "backtrack_stepsize",
    "sufficient_decrease_gap",
    "stationarity_residual",
    "fit",
    "write_trace_csv",
    "TRACE_COLUMNS",
]

TOLERANCE_REACHED = "tolerance-reached"
MAX_ITER = "max-iter"
DEGENERATE = "degenerate-input"

TRACE_COLUMNS = ("k", "F", "q", "L_u", "L_v", "seconds")


class SolverError(RuntimeError):
    """Raised when a trial point has a non-finite objective."""


@dataclass(frozen=True)
class StepsizePolicy:
    l_min: float = 1e-3
    eta: float = 2.0
    l_init: float = 1.0
    max_backtracks: int = 60

    def __post_init__(self):
        if not self.l_min > 0:
            raise ValueError("l_min must be positive")
        if not self.eta > 1:
            raise ValueError("eta must exceed 1")
        if not self.l_init > 0:
            raise ValueError("l_init must be positive")
        if self.max_backtracks < 1:
            raise ValueError("max_backtracks must be at least 1")


@dataclass(frozen=True)
class SolverConfig:
    reg: RegConfig = field(default_factory=RegConfig)
    policy: StepsizePolicy = field(default_factory=StepsizePolicy)
    max_iter: int = 500
    tol: float = 1e-3

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        # max_iter = 0 is allowed: the report then holds only the initial point.
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")


@dataclass(frozen=True)
class IterationRecord:
    """One row of the convergence trace.

    ``sq_step`` is ``||dU||^2 + ||dV||^2 + (b_hat - b_prev)^2 + (b - b_hat)^2``
    for the iteration, the quantity bounding the objective decrease.
    """

    k: int
    objective: float
    rel_err: float
    l_u: float
    l_v: float
    seconds: float
    sq_step: float = 0.0


@dataclass(frozen=True, eq=False)
class FitReport:
    params: object
    trace: tuple[IterationRecord, ...]
    termination_reason: str
    total_iters: int
    total_seconds: float
    degenerate: bool = False

    @property
    def objective(self) -> float:
        return self.trace[-1].objective

    @property
    def converged(self) -> bool:
        return self.termination_reason == TOLERANCE_REACHED


@dataclass(frozen=True, eq=False)
class BlockStep:
    """Result of one backtracked proximal step on a block."""

    step_l: float
    params: ModelParams
    loss_before: float
    loss_after: float
    margins_after: np.ndarray
    tries: int
    fell_back: bool


# ---------------------------------------------------------------------------
# initialization and stopping statistic


def _orient(u: np.ndarray, v: np.ndarray):
    """Make each column of ``v`` have a positive largest-magnitude entry."""
    u, v = u.copy(), v.copy()
    for k in range(v.shape[1]):
        j = int(np.argmax(np.abs(v[:, k])))
        if v[j, k] < 0:
            u[:, k] *= -1
            v[:, k] *= -1
    return u, v


def init_params(data: Dataset, r: int) -> ModelParams:
    """SVD start: ``U0 = -u_1..r``, ``V0 = v_1..r`` of the sample mean, ``b0 = 0``."""
    if not 1 <= r <= min(data.s, data.t):
        raise ValueError(f"rank {r} outside [1, min(s, t)={min(data.s, data.t)}]")
    x_av = data.X.mean(axis=0)
    if not np.any(x_av):
        U = -np.eye(data.s, r)
        V = np.eye(data.t, r)
        return ModelParams(U, V, 0.0)
    u, _, vt = np.linalg.svd(x_av, full_matrices=False)
    u, v = _orient(u[:, :r], vt[:r].T)
    return ModelParams(-u, v, 0.0)


def _rel_err(d_sq: float, prev_sq: float, f_prev: float, f_curr: float) -> float:
    return max(math.sqrt(d_sq) / (1.0 + math.sqrt(prev_sq)),
               abs(f_curr - f_prev) / (1.0 + f_prev))


def relative_error(prev: ModelParams, f_prev: float, curr: ModelParams, f_curr: float) -> float:
    """``max(||W - W_prev|| / (1 + ||W_prev||), |F - F_prev| / (1 + F_prev))`` with
    ``||W||^2 = ||U||^2 + ||V||^2 + b^2``."""
    d_sq = (np.sum((curr.U - prev.U) ** 2) + np.sum((curr.V - prev.V) ** 2)
            + (curr.b - prev.b) ** 2)
    return _rel_err(float(d_sq), prev.sq_norm(), f_prev, f_curr)


# ---------------------------------------------------------------------------
# backtracking


_EPS = float(np.finfo(np.float64).eps)


def _decrease_slack(scale: float, lin: float, quad_term: float) -> float:
    # a few ulps of every term in the test; relative, so it never admits
    # steps that a correctly rounded evaluation would reject by a wide margin
    return 32.0 * _EPS * (scale + abs(lin) + quad_term)


def _search(loss_at: Callable[[list], tuple], parts: Sequence[tuple], f0: float,
            l_prev: float, policy: StepsizePolicy, fallback: Callable[[], float]):
    """Backtracking over the candidates ``max(l_min, l_prev * eta**n)``, n = -1, 0, 1, ...

    ``parts`` lists ``(x0, grad, l1, l2, is_factor)`` per variable; factors get
    the elastic-net prox step, the rest a plain gradient step. ``loss_at``
    returns ``(loss, aux)`` or ``(loss, aux, change, scale)`` where ``change``
    is the loss difference to ``f0`` computed without cancellation and
    ``scale`` bounds the magnitude of its summands. ``aux`` of the accepted
    trial is passed back.
    Returns ``(step_l, new_values, f_new, aux, tries, fell_back)``.
    """

    def trial(step_l):
        new, lin, quad = [], 0.0, 0.0
        for x0, g, l1, l2, is_factor in parts:
            if is_factor:
                x = prox_update_factor(x0, g, ProxSpec(step_l, l1, l2))
            elif np.ndim(x0) == 0:
                x = intercept_step(x0, g, step_l)
            else:
                x = np.asarray(x0, dtype=np.float64) - np.asarray(g) / step_l
            d = x - x0
            lin += float(np.sum(g * d))
            quad += float(np.sum(d * d))
            new.append(x)
        out = loss_at(new)
        f, aux = out[0], out[1]
        if not np.isfinite(f):
            raise SolverError("non-finite loss at trial point")
        if len(out) == 4:
            change, scale = out[2], out[3]
        else:
            change, scale = f - f0, max(abs(f), abs(f0))
        quad_term = 0.5 * step_l * quad
        ok = change <= lin + quad_term + _decrease_slack(scale, lin, quad_term)
        return new, f, aux, ok

    for tries, n in enumerate(range(-1, policy.max_backtracks - 1), start=1):
        step_l = max(policy.l_min, l_prev * policy.eta ** n)
        new, f, aux, ok = trial(step_l)
        if ok:
            return step_l, new, f, aux, tries, False
    step_l = max(policy.l_min, fallback())
    new, f, aux, _ = trial(step_l)
    return step_l, new, f, aux, policy.max_backtracks + 1, True


def backtrack_stepsize(block: str, data: Dataset, params: ModelParams, l_prev: float,
                       reg: RegConfig, policy: StepsizePolicy,
                       margins: Optional[np.ndarray] = None) -> BlockStep:
    """One proximal step on the ``(U, b)`` (``block="U"``) or ``(V, b)``
    (``block="V"``) block with the dynamic stepsize rule.

    ``margins`` at ``params`` may be passed to skip recomputing them. If
    ``policy.max_backtracks`` candidates fail, the Lipschitz constant of the
    block gradient is used, for which the test always holds.
    """
    if margins is None:
        margins = L.margins(params, data)
    f0 = L._loss_from_margins(data.y, margins)
    c = L._residual_weights(data.y, margins)
    M = L._weighted_sample_sum(data, c)
    gb = float(c.sum())
    if block == "U":
        fixed = params.V
        parts = [(params.U, M @ fixed, reg.mu1, reg.mu2, True), (params.b, gb, 0.0, 0.0, False)]
        weight = lambda x: x @ fixed.T  # noqa: E731
        fallback = lambda: L.lipschitz_u(fixed, data)  # noqa: E731
    elif block == "V":
        fixed = params.U
        parts = [(params.V, M.T @ fixed, reg.nu1, reg.nu2, True), (params.b, gb, 0.0, 0.0, False)]
        weight = lambda x: fixed @ x.T  # noqa: E731
        fallback = lambda: L.lipschitz_v(fixed, data)  # noqa: E731
    else:
        raise ValueError(f"block must be 'U' or 'V', got {block!r}")

    x0, b0 = parts[0][0], params.b

    def loss_at(new):
        dm = L._margins_w(data, weight(new[0] - x0), new[1] - b0)
        m = margins + dm
        return (L._loss_from_margins(data.y, m), m) + L._loss_change(data.y, margins, dm)

    step_l, (x, b), f, m, tries, fell_back = _search(loss_at, parts, f0, l_prev, policy, fallback)
    trial_params = params.replace(U=x, b=b) if block == "U" else params.replace(V=x, b=b)
    return BlockStep(step_l, trial_params, f0, f, m, tries, fell_back)


def sufficient_decrease_gap(block: str, data: Dataset, before: ModelParams,
                            after: ModelParams, step_l: float) -> float:
    """Right side minus left side of the block sufficient-decrease test.

    Nonnegative when ``step_l`` is acceptable for the move ``before -> after``.
    """
    g = L.gradients(before, data)
    db = after.b - before.b
    if block == "U":
        d, gx = after.U - before.U, g.gU
    else:
        d, gx = after.V - before.V, g.gV
    bound = (L.loss(before, data) + float(np.sum(gx * d)) + g.gb * db
             + 0.5 * step_l * (float(np.sum(d * d)) + db * db))
    return bound - L.loss(after, data)


# ---------------------------------------------------------------------------
# diagnostics


def stationarity_residual(params: ModelParams, data: Dataset, reg: RegConfig) -> float:
    """``dist(0, dF(W))``: norm of the minimal-norm element of the subdifferential."""
    g = L.gradients(params, data)

    def block(x, gx, l1, l2):
        smooth = gx + l2 * x
        r = np.where(x != 0, smooth + l1 * np.sign(x), np.maximum(0.0, np.abs(smooth) - l1))
        return float(np.sum(r * r))

    total = block(params.U, g.gU, reg.mu1, reg.mu2) + block(params.V, g.gV, reg.nu1, reg.nu2)
    return math.sqrt(total + g.gb ** 2)


def is_degenerate(data: Dataset) -> bool:
    return bool(np.all(data.y == data.y[0]))


# ---------------------------------------------------------------------------
# driver


def fit(data: Dataset, config: SolverConfig, init: Optional[ModelParams] = None,
        callback: Optional[Callable[[int, ModelParams], None]] = None) -> FitReport:
    """Run block coordinate proximal descent from the SVD start (or ``init``).

    Stops when the relative error drops to ``config.tol`` or after
    ``config.max_iter`` iterations. ``callback(k, params)`` sees every iterate,
    including the starting point at ``k = 0``.
    """
    reg, policy = config.reg, config.policy
    t0 = time.perf_counter()
    params = init_params(data, reg.rank) if init is None else init
    if params.shape != (data.s, data.t):
        raise ValueError("initial parameters do not match the data shape")
    f_prev = L.objective(params, data, reg)
    l_u = l_v = policy.l_init
    trace = [IterationRecord(0, f_prev, math.nan, l_u, l_v, 0.0, 0.0)]
    if callback is not None:
        callback(0, params)

    reason = MAX_ITER
    k = 0
    m = L.margins(params, data)
    for k in range(1, config.max_iter + 1):
        su = backtrack_stepsize("U", data, params, l_u, reg, policy, m)
        mid = su.params
        sv = backtrack_stepsize("V", data, mid, l_v, reg, policy, su.margins_after)
        m = sv.margins_after
        new = sv.params
        l_u, l_v = su.step_l, sv.step_l

        f_new = sv.loss_after + L.penalty(new, reg)
        if f_new > f_prev:
            # only possible once the decrease is below roundoff: keep the
            # incumbent, which makes q = 0 and ends the run at a fixed point
            new, f_new, m = params, f_prev, L.margins(params, data)
            mid = params
        q = relative_error(params, f_prev, new, f_new)
        sq_step = float(np.sum((mid.U - params.U) ** 2) + np.sum((new.V - mid.V) ** 2)
                        + (mid.b - params.b) ** 2 + (new.b - mid.b) ** 2)
        trace.append(IterationRecord(k, f_new, q, l_u, l_v, time.perf_counter() - t0, sq_step))
        params, f_prev = new, f_new
        if callback is not None:
            callback(k, params)
        if q <= config.tol:
            reason = TOLERANCE_REACHED
            break

    degenerate = is_degenerate(data)
    if degenerate:
        reason = DEGENERATE
    return FitReport(params, tuple(trace), reason, k if config.max_iter else 0,
                     time.perf_counter() - t0, degenerate)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trace_csv(report: FitReport, path, timing: bool = True) -> None:
    """One row per iteration: ``k, F, q, L_u, L_v, seconds``.

    With ``timing=False`` the seconds column is written as 0 so that the file
    depends only on data and configuration.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for rec in report.trace:
            w.writerow([rec.k, _fmt(rec.objective), _fmt(rec.rel_err), _fmt(rec.l_u),
                        _fmt(rec.l_v), _fmt(rec.seconds if timing else 0.0)])
