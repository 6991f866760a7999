"""Multiclass sparse bilinear classifiers.

Two routes are provided: one-vs-all, which trains an independent binary
model per class, and the multinomial (softmax) loss with the last class
pinned to zero parameters, fitted by cycling proximal steps over the blocks
``U_1..U_m, b, V_1..V_m, b``.

The multinomial gradients, with ``p_ic`` the softmax probability of class
``c`` for sample ``i`` and ``y_ic`` its one-hot label, are::

    dU_c = 1/n sum_i (p_ic - y_ic) X_i V_c
    dV_c = 1/n sum_i (p_ic - y_ic) X_i^T U_c
    db_c = 1/n sum_i (p_ic - y_ic)
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logsumexp, softmax

from sblr import loss as L
from sblr.bcpd import (DEGENERATE, MAX_ITER, TOLERANCE_REACHED, FitReport, IterationRecord,
                       SolverConfig, _rel_err, _search, fit, init_params)
from sblr.types import Dataset, ModelParams, MulticlassModel, RegConfig, as_sample

__all__ = [
    "MultinomialLossGradient",
    "one_vs_all_labels",
    "fit_one_vs_all",
    "multinomial_loss",
    "multinomial_objective",
    "multinomial_gradients",
    "fit_multinomial",
    "decision_scores",
    "class_probabilities",
    "predict_classes",
    "predict_multiclass",
]


@dataclass(frozen=True, eq=False)
class MultinomialLossGradient:
    gU: tuple[np.ndarray, ...]
    gV: tuple[np.ndarray, ...]
    gb: np.ndarray


def _classes(data: Dataset, classes: Optional[Sequence[int]]) -> tuple[int, ...]:
    if classes is None:
        return tuple(int(c) for c in np.unique(data.y))
    return tuple(int(c) for c in classes)


def _one_hot(data: Dataset, classes: tuple[int, ...]) -> np.ndarray:
    index = {c: j for j, c in enumerate(classes)}
    try:
        cols = np.array([index[int(v)] for v in data.y])
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]} is not one of the classes {classes}") from None
    Y = np.zeros((data.n, len(classes)))
    Y[np.arange(data.n), cols] = 1.0
    return Y


def one_vs_all_labels(data: Dataset, cls: int) -> Dataset:
    """Binary relabeling: +1 for ``cls``, -1 for every other class."""
    return Dataset(data.X, np.where(data.y == cls, 1.0, -1.0))


def fit_one_vs_all(data: Dataset, config: SolverConfig,
                   classes: Optional[Sequence[int]] = None) -> MulticlassModel:
    """Train one binary bilinear model per class (class vs rest)."""
    classes = _classes(data, classes)
    if len(classes) < 2:
        raise ValueError("one-vs-all needs at least two classes")
    present = set(int(v) for v in np.unique(data.y))
    missing = [c for c in classes if c not in present]
    if missing:
        raise ValueError(f"classes {missing} have no training samples")
    if not present <= set(classes):
        raise ValueError(f"labels {sorted(present - set(classes))} are not among the classes")
    reports = [fit(one_vs_all_labels(data, c), config) for c in classes]
    return MulticlassModel(classes, tuple(r.params for r in reports), "one-vs-all", tuple(reports))


# ---------------------------------------------------------------------------
# multinomial loss


def _margin_matrix(blocks: Sequence[ModelParams], data: Dataset) -> np.ndarray:
    W = np.stack([(p.U @ p.V.T).ravel() for p in blocks], axis=1)
    return data.flat @ W + np.array([p.b for p in blocks])


def _loss_from_scores(Z: np.ndarray, Y: np.ndarray) -> float:
    full = np.hstack([Z, np.zeros((Z.shape[0], 1))])
    return float(np.mean(logsumexp(full, axis=1) - np.sum(Y[:, :-1] * Z, axis=1)))


def _check_blocks(blocks, data: Dataset, classes):
    if len(blocks) != len(classes) - 1:
        raise ValueError(f"{len(classes)} classes need {len(classes) - 1} blocks, got {len(blocks)}")
    for p in blocks:
        if p.shape != (data.s, data.t):
            raise ValueError("block shape does not match the data")


def multinomial_loss(blocks: Sequence[ModelParams], data: Dataset,
                     classes: Optional[Sequence[int]] = None) -> float:
    """Mean softmax negative log-likelihood; the last class has zero parameters."""
    classes = _classes(data, classes)
    _check_blocks(blocks, data, classes)
    return _loss_from_scores(_margin_matrix(blocks, data), _one_hot(data, classes))


def multinomial_objective(blocks, data: Dataset, reg: RegConfig,
                          classes: Optional[Sequence[int]] = None) -> float:
    return multinomial_loss(blocks, data, classes) + sum(L.penalty(p, reg) for p in blocks)


def _residual_matrix(Z: np.ndarray, Y: np.ndarray) -> np.ndarray:
    P = softmax(np.hstack([Z, np.zeros((Z.shape[0], 1))]), axis=1)
    return (P[:, :-1] - Y[:, :-1]) / Z.shape[0]


def multinomial_gradients(blocks: Sequence[ModelParams], data: Dataset,
                          classes: Optional[Sequence[int]] = None) -> MultinomialLossGradient:
    classes = _classes(data, classes)
    _check_blocks(blocks, data, classes)
    R = _residual_matrix(_margin_matrix(blocks, data), _one_hot(data, classes))
    gU, gV = [], []
    for c, p in enumerate(blocks):
        M = L._weighted_sample_sum(data, R[:, c])
        gU.append(M @ p.V)
        gV.append(M.T @ p.U)
    return MultinomialLossGradient(tuple(gU), tuple(gV), R.sum(axis=0))


# ---------------------------------------------------------------------------
# multinomial fit


class _State:
    """Mutable per-run copy of the blocks with cached margins."""

    def __init__(self, blocks, data, Y):
        self.U = [np.array(p.U) for p in blocks]
        self.V = [np.array(p.V) for p in blocks]
        self.b = np.array([p.b for p in blocks])
        self.data, self.Y = data, Y
        self.Z = _margin_matrix(blocks, data)

    def blocks(self):
        return tuple(ModelParams(u, v, float(b)) for u, v, b in zip(self.U, self.V, self.b))

    def with_column(self, c, W, b_c):
        Z = self.Z.copy()
        Z[:, c] = self.data.flat @ W.ravel() + b_c
        return Z


def _cycle(state: _State, steps: dict, reg: RegConfig, policy) -> tuple[float, float]:
    """One pass over ``U_1..U_m, b, V_1..V_m, b``; returns (loss, squared step)."""
    data, Y = state.data, state.Y
    m = len(state.U)
    sq = 0.0
    f = _loss_from_scores(state.Z, Y)

    def factor_sweep(kind):
        nonlocal f, sq
        fac, other = (state.U, state.V) if kind == "U" else (state.V, state.U)
        l1, l2 = (reg.mu1, reg.mu2) if kind == "U" else (reg.nu1, reg.nu2)
        for c in range(m):
            R = _residual_matrix(state.Z, Y)
            M = L._weighted_sample_sum(data, R[:, c])
            g = M @ other[c] if kind == "U" else M.T @ other[c]
            oc = other[c]

            def loss_at(new, c=c, oc=oc):
                W = new[0] @ oc.T if kind == "U" else oc @ new[0].T
                Z = state.with_column(c, W, state.b[c])
                return _loss_from_scores(Z, Y), Z

            if kind == "U":
                fallback = lambda oc=oc: L.lipschitz_u(oc, data)  # noqa: E731
            else:
                fallback = lambda oc=oc: L.lipschitz_v(oc, data)  # noqa: E731
            key = (kind, c)
            step, (x,), f, Z, _, _ = _search(loss_at, [(fac[c], g, l1, l2, True)], f,
                                             steps[key], policy, fallback)
            steps[key] = step
            sq += float(np.sum((x - fac[c]) ** 2))
            fac[c] = x
            state.Z = Z

    def intercept_sweep(key):
        nonlocal f, sq
        g = _residual_matrix(state.Z, Y).sum(axis=0)
        base = state.Z - state.b

        def loss_at(new):
            Z = base + new[0]
            return _loss_from_scores(Z, Y), Z

        step, (b,), f, Z, _, _ = _search(loss_at, [(state.b, g, 0.0, 0.0, False)], f,
                                         steps[key], policy, lambda: 1.0)
        steps[key] = step
        sq += float(np.sum((b - state.b) ** 2))
        state.b = np.asarray(b, dtype=np.float64)
        state.Z = Z

    factor_sweep("U")
    intercept_sweep("b1")
    factor_sweep("V")
    intercept_sweep("b2")
    return f, sq


def fit_multinomial(data: Dataset, config: SolverConfig,
                    classes: Optional[Sequence[int]] = None) -> MulticlassModel:
    """Fit the penalized multinomial bilinear model; the last class is the reference.

    All class blocks start from the same SVD point used by the binary solver.
    """
    classes = _classes(data, classes)
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    reg, policy = config.reg, config.policy
    Y = _one_hot(data, classes)
    m = len(classes) - 1
    t0 = time.perf_counter()
    start = init_params(data, reg.rank)
    state = _State([start] * m, data, Y)

    def penalty():
        return sum(L.penalty_u(u, reg) + L.penalty_v(v, reg) for u, v in zip(state.U, state.V))

    def stacked():
        return [*state.U, *state.V, state.b.copy()]

    f_prev = _loss_from_scores(state.Z, Y) + penalty()
    steps = {key: policy.l_init for key in
             [("U", c) for c in range(m)] + [("V", c) for c in range(m)] + ["b1", "b2"]}
    trace = [IterationRecord(0, f_prev, math.nan, policy.l_init, policy.l_init, 0.0, 0.0)]
    reason = MAX_ITER
    k = 0
    prev = stacked()
    for k in range(1, config.max_iter + 1):
        loss_k, sq = _cycle(state, steps, reg, policy)
        f_new = loss_k + penalty()
        curr = stacked()
        d_sq = sum(float(np.sum((a - b) ** 2)) for a, b in zip(curr, prev))
        prev_sq = sum(float(np.sum(a * a)) for a in prev)
        q = _rel_err(d_sq, prev_sq, f_prev, f_new)
        l_u = max(steps[("U", c)] for c in range(m))
        l_v = max(steps[("V", c)] for c in range(m))
        trace.append(IterationRecord(k, f_new, q, l_u, l_v, time.perf_counter() - t0, sq))
        prev, f_prev = curr, f_new
        if q <= config.tol:
            reason = TOLERANCE_REACHED
            break
    degenerate = len(np.unique(data.y)) < 2
    if degenerate:
        reason = DEGENERATE
    blocks = state.blocks()
    report = FitReport(blocks, tuple(trace), reason, k if config.max_iter else 0,
                       time.perf_counter() - t0, degenerate)
    return MulticlassModel(classes, blocks, "multinomial", (report,))


# ---------------------------------------------------------------------------
# prediction


def decision_scores(model: MulticlassModel, data: Dataset) -> np.ndarray:
    """Per-class scores, shape ``(n, len(classes))``.

    One-vs-all: the binary margins. Multinomial: the softmax logits with the
    reference class fixed at 0.
    """
    Z = _margin_matrix(model.params, data)
    if model.mode == "multinomial":
        Z = np.hstack([Z, np.zeros((data.n, 1))])
    return Z


def class_probabilities(model: MulticlassModel, data: Dataset) -> np.ndarray:
    if model.mode != "multinomial":
        raise ValueError("class probabilities are only defined for the multinomial model")
    return softmax(decision_scores(model, data), axis=1)


def predict_classes(model: MulticlassModel, data: Dataset) -> np.ndarray:
    """Argmax class per sample; ties go to the class listed first."""
    return np.asarray(model.classes)[np.argmax(decision_scores(model, data), axis=1)]


def predict_multiclass(model: MulticlassModel, x) -> tuple[int, float]:
    """``(class, score)`` for one sample; the score is the winning class
    probability (multinomial) or the sigmoid of the winning margin (one-vs-all)."""
    x = as_sample(x)
    data = Dataset(x[None], np.ones(1), multiclass=True)
    scores = decision_scores(model, data)[0]
    j = int(np.argmax(scores))
    if model.mode == "multinomial":
        prob = float(softmax(scores)[j])
    else:
        prob = float(expit(scores[j]))
    return model.classes[j], prob
