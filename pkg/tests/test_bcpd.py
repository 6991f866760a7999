import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sblr import loss as L
from sblr.bcpd import (DEGENERATE, MAX_ITER, TOLERANCE_REACHED, TRACE_COLUMNS, SolverConfig,
                       StepsizePolicy, backtrack_stepsize, fit, init_params, relative_error,
                       stationarity_residual, sufficient_decrease_gap, write_trace_csv)
from sblr.dataio import generate_synthetic
from sblr.types import Dataset, ModelParams, RegConfig

from conftest import random_dataset, random_params

RIDGE_DOMINATED = RegConfig(0.1, 1.0, 0.1, 1.0, 1)


def dataset_with_mean(x_av):
    """Two samples whose average is ``x_av``."""
    x_av = np.asarray(x_av, dtype=np.float64)
    noise = np.ones_like(x_av)
    return Dataset(np.stack([x_av + noise, x_av - noise]), [1, -1])


class TestInit:
    def test_diagonal_average(self):
        p = init_params(dataset_with_mean(np.diag([3.0, 1.0])), 1)
        np.testing.assert_allclose(p.V, [[1.0], [0.0]], atol=1e-15)
        np.testing.assert_allclose(p.U, [[-1.0], [0.0]], atol=1e-15)
        assert p.b == 0.0

    def test_zero_average_falls_back_to_unit_columns(self):
        p = init_params(dataset_with_mean(np.zeros((3, 4))), 2)
        np.testing.assert_allclose(np.linalg.norm(p.U, axis=0), 1.0)
        np.testing.assert_allclose(np.linalg.norm(p.V, axis=0), 1.0)
        np.testing.assert_array_equal(p.U, -np.eye(3, 2))
        np.testing.assert_array_equal(p.V, np.eye(4, 2))

    def test_orthonormal_and_reconstructs_truncation(self, rng):
        x_av = rng.standard_normal((5, 4))
        p = init_params(dataset_with_mean(x_av), 2)
        np.testing.assert_allclose(p.U.T @ p.U, np.eye(2), atol=1e-10)
        np.testing.assert_allclose(p.V.T @ p.V, np.eye(2), atol=1e-10)
        u, sig, vt = np.linalg.svd(x_av)
        truncation = u[:, :2] @ np.diag(sig[:2]) @ vt[:2]
        np.testing.assert_allclose(-p.U @ np.diag(sig[:2]) @ p.V.T, truncation, atol=1e-10)

    def test_sign_convention(self, rng):
        p = init_params(dataset_with_mean(rng.standard_normal((6, 5))), 3)
        for k in range(3):
            j = np.argmax(np.abs(p.V[:, k]))
            assert p.V[j, k] > 0

    def test_rank_too_large(self, rng):
        with pytest.raises(ValueError, match="rank"):
            init_params(random_dataset(rng, 4, 3, 2), 3)


class TestRelativeError:
    def test_identical(self, rng):
        p = random_params(rng, 3, 2, 1)
        assert relative_error(p, 0.5, p, 0.5) == 0.0

    def test_unit_displacement(self):
        prev = ModelParams.zeros(2, 2, 1)
        curr = ModelParams(np.array([[1.0], [0.0]]), np.zeros((2, 1)))
        assert relative_error(prev, 0.0, curr, 1.0) == 1.0

    def test_stacked_norm_definition(self, rng):
        prev, curr = random_params(rng, 4, 3, 2), random_params(rng, 4, 3, 2)
        stacked = lambda p: np.concatenate([p.U.ravel(), p.V.ravel(), [p.b]])  # noqa: E731
        a, b = stacked(prev), stacked(curr)
        oracle = max(np.linalg.norm(b - a) / (1 + np.linalg.norm(a)), abs(0.3 - 0.7) / 1.7)
        assert relative_error(prev, 0.7, curr, 0.3) == pytest.approx(oracle, rel=1e-14)


class TestBacktracking:
    def test_large_previous_stepsize_shrinks_by_eta(self, rng):
        d, p = random_dataset(rng, 10, 3, 3), random_params(rng, 3, 3, 1)
        step = backtrack_stepsize("U", d, p, 1e4, RegConfig(), StepsizePolicy())
        assert step.tries == 1 and step.step_l == 5e3 and not step.fell_back

    def test_lipschitz_fallback_satisfies_decrease(self, rng):
        d, p = random_dataset(rng, 10, 4, 3), random_params(rng, 4, 3, 2, -3, 3)
        policy = StepsizePolicy(l_min=1e-9, max_backtracks=1)
        for block, cap in (("U", L.lipschitz_u(p.V, d)), ("V", L.lipschitz_v(p.U, d))):
            step = backtrack_stepsize(block, d, p, 1e-6, RegConfig(), policy)
            assert step.fell_back and step.step_l == cap
            assert sufficient_decrease_gap(block, d, p, step.params, step.step_l) >= -1e-15

    def test_accepted_stepsize_is_first_passing_candidate(self, rng):
        policy = StepsizePolicy()
        reg = RegConfig(0.05, 0.1, 0.05, 0.1, 2)
        for _ in range(10):
            d, p = random_dataset(rng, 12, 4, 3), random_params(rng, 4, 3, 2, -2, 2)
            for block in ("U", "V"):
                step = backtrack_stepsize(block, d, p, 0.5, reg, policy)
                assert sufficient_decrease_gap(block, d, p, step.params, step.step_l) >= -1e-14
                if step.tries > 1:
                    smaller = step.step_l / policy.eta
                    redo = backtrack_stepsize(block, d, p, smaller * policy.eta, reg,
                                              StepsizePolicy(max_backtracks=1))
                    # the candidate tried just before the accepted one fails the test
                    assert redo.fell_back

    def test_stepsize_never_below_floor(self, rng):
        d, p = random_dataset(rng, 10, 3, 3), random_params(rng, 3, 3, 1)
        step = backtrack_stepsize("V", d, p, 1e-9, RegConfig(), StepsizePolicy(l_min=0.25))
        assert step.step_l >= 0.25

    def test_bad_block_name(self, rng):
        d, p = random_dataset(rng, 4, 2, 2), random_params(rng, 2, 2, 1)
        with pytest.raises(ValueError):
            backtrack_stepsize("W", d, p, 1.0, RegConfig(), StepsizePolicy())


class TestConfigValidation:
    def test_policy(self):
        for kw in ({"l_min": 0}, {"eta": 1.0}, {"l_init": -1}, {"max_backtracks": 0}):
            with pytest.raises(ValueError):
                StepsizePolicy(**kw)

    def test_solver(self):
        with pytest.raises(ValueError):
            SolverConfig(tol=0)
        with pytest.raises(ValueError):
            SolverConfig(max_iter=-1)


class TestFit:
    def test_identical_classes_init_only(self, rng):
        X = rng.standard_normal((6, 3, 3))
        d = Dataset(X, [1, -1, 1, -1, 1, -1])
        rep = fit(d, SolverConfig(max_iter=0))
        assert len(rep.trace) == 1 and math.isfinite(rep.trace[0].objective)
        assert rep.total_iters == 0 and rep.termination_reason == MAX_ITER

    def test_ridge_dominated_50x50(self):
        d = generate_synthetic(100, 50, 50, seed=0)
        rep = fit(d, SolverConfig(RIDGE_DOMINATED))
        assert rep.termination_reason == TOLERANCE_REACHED
        assert rep.total_iters <= 100
        assert rep.trace[-1].rel_err <= 1e-3
        disp = [math.sqrt(r.sq_step) for r in rep.trace[1:]]
        assert max(disp[-10:]) < max(disp[:10])

    @pytest.mark.parametrize("reg", [RIDGE_DOMINATED, RegConfig(0.1, 0, 0.1, 0, 1),
                                     RegConfig(0.01, 0.5, 0.01, 0.5, 2)])
    def test_monotone_and_stationary(self, reg):
        d = generate_synthetic(60, 12, 10, seed=4)
        rep = fit(d, SolverConfig(reg))
        F = [r.objective for r in rep.trace]
        assert all(b <= a for a, b in zip(F, F[1:]))
        assert all(r.l_u >= 1e-3 and r.l_v >= 1e-3 for r in rep.trace)
        assert rep.objective == pytest.approx(L.objective(rep.params, d, reg), rel=1e-12)
        last = rep.trace[-1]
        bound = (3 * (L.lipschitz_u(rep.params.V, d) + L.lipschitz_v(rep.params.U, d))
                 + 2 * max(last.l_u, last.l_v) + reg.mu2 + reg.nu2)
        assert stationarity_residual(rep.params, d, reg) <= bound * math.sqrt(last.sq_step)

    def test_quantified_decrease(self):
        d = generate_synthetic(40, 10, 10, seed=9)
        policy = StepsizePolicy()
        rep = fit(d, SolverConfig(RegConfig(0.05, 0.2, 0.05, 0.2, 1), policy, tol=1e-6))
        for prev, curr in zip(rep.trace, rep.trace[1:]):
            assert prev.objective - curr.objective >= policy.l_min / 2 * curr.sq_step - 1e-10

    def test_deterministic(self):
        d = generate_synthetic(40, 8, 8, seed=2)
        a, b = fit(d, SolverConfig(RIDGE_DOMINATED)), fit(d, SolverConfig(RIDGE_DOMINATED))
        assert a.params == b.params
        assert [(r.objective, r.rel_err, r.l_u, r.l_v) for r in a.trace] == \
               [(r.objective, r.rel_err, r.l_u, r.l_v) for r in b.trace]

    def test_degenerate_labels_flagged(self, rng):
        d = Dataset(rng.standard_normal((5, 3, 3)), np.ones(5))
        rep = fit(d, SolverConfig(RIDGE_DOMINATED))
        assert rep.degenerate and rep.termination_reason == DEGENERATE
        assert rep.params.b > 0

    def test_max_iter_reason(self):
        d = generate_synthetic(40, 8, 8, seed=2)
        rep = fit(d, SolverConfig(RIDGE_DOMINATED, max_iter=2, tol=1e-12))
        assert rep.termination_reason == MAX_ITER and rep.total_iters == 2
        assert not rep.converged

    def test_callback_sees_every_iterate(self):
        d = generate_synthetic(40, 8, 8, seed=2)
        seen = []
        rep = fit(d, SolverConfig(RIDGE_DOMINATED), callback=lambda k, p: seen.append((k, p)))
        assert [k for k, _ in seen] == list(range(rep.total_iters + 1))
        assert seen[-1][1] == rep.params

    def test_custom_init_and_shape_check(self, rng):
        d = generate_synthetic(40, 8, 6, seed=2)
        start = random_params(rng, 8, 6, 1)
        rep = fit(d, SolverConfig(RIDGE_DOMINATED, max_iter=0), init=start)
        assert rep.params == start
        with pytest.raises(ValueError):
            fit(d, SolverConfig(), init=random_params(rng, 6, 8, 1))


def test_trace_csv(tmp_path):
    d = generate_synthetic(40, 8, 8, seed=2)
    rep = fit(d, SolverConfig(RIDGE_DOMINATED))
    path = tmp_path / "trace.csv"
    write_trace_csv(rep, path, timing=False)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == len(rep.trace) + 1
    assert [float(r[1]) for r in rows[1:]] == [r.objective for r in rep.trace]
    assert {r[5] for r in rows[1:]} == {"0.0"}


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(0.0, 0.0), (0.1, 0.0), (0.0, 1.0), (0.1, 1.0)]))
def test_objective_never_increases(seed, weights):
    rng = np.random.default_rng(seed)
    d = random_dataset(rng, 20, 5, 4)
    l1, l2 = weights
    rep = fit(d, SolverConfig(RegConfig(l1, l2, l1, l2, 2), max_iter=50))
    F = [r.objective for r in rep.trace]
    assert all(b <= a for a, b in zip(F, F[1:]))
