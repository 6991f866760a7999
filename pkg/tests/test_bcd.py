import math

import numpy as np
import pytest
from scipy.optimize import minimize

from sblr import loss as L
from sblr.bcd import InnerSolverConfig, block_residual, fit_bcd, solve_u_block, solve_v_block
from sblr.bcpd import SolverConfig, fit
from sblr.dataio import generate_synthetic
from sblr.types import Dataset, ModelParams, RegConfig

from conftest import random_dataset


def overlapping_dataset():
    """Small s=t=2 instance whose classes overlap under both block
    parameterizations, so each block subproblem has a finite minimizer."""
    rng = np.random.default_rng(7)
    X = rng.standard_normal((24, 2, 2))
    y = np.sign(X[:, 0, 0] + X[:, 1, 1] + 0.3)
    y[::4] *= -1
    return Dataset(X, y)


def bfgs_block(which, data, other, reg):
    """Reference minimizer of the (factor, b) block objective. The l1 part is
    handled by splitting the factor into positive and negative parts."""
    shape = (data.s if which == "U" else data.t, other.shape[1])
    size = shape[0] * shape[1]
    l1, l2 = (reg.mu1, reg.mu2) if which == "U" else (reg.nu1, reg.nu2)

    def unpack(z):
        x = (z[:size] - z[size:2 * size]).reshape(shape)
        return x, z[-1]

    def f(z):
        x, b = unpack(z)
        p = ModelParams(x, other, b) if which == "U" else ModelParams(other, x, b)
        g = L.gradients(p, data)
        gx = (g.gU if which == "U" else g.gV) + l2 * x
        val = L.loss(p, data) + l1 * z[:2 * size].sum() + 0.5 * l2 * np.sum(x * x)
        grad = np.concatenate([gx.ravel() + l1, -gx.ravel() + l1, [g.gb]])
        return val, grad

    bounds = [(0, None)] * (2 * size) + [(None, None)]
    res = minimize(f, np.zeros(2 * size + 1), jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10000})
    x, b = unpack(res.x)
    return x, b, res.fun


class TestBlockSolves:
    def test_zero_partner_gives_zero_factor_and_logit_intercept(self, rng):
        d = Dataset(rng.standard_normal((7, 3, 2)), [1, 1, 1, 1, 1, -1, -1])
        reg = RegConfig(0.1, 0.0, 0.1, 0.0)
        cfg = InnerSolverConfig(inner_tol=1e-12)
        sol = solve_u_block(d, np.zeros((2, 1)), rng.standard_normal((3, 1)), 0.0, reg, cfg)
        np.testing.assert_array_equal(sol.factor, 0.0)
        assert sol.b == pytest.approx(math.log(5 / 2), abs=1e-5)
        sol = solve_v_block(d, np.zeros((3, 1)), rng.standard_normal((2, 1)), 0.0, reg, cfg)
        np.testing.assert_array_equal(sol.factor, 0.0)
        assert sol.b == pytest.approx(math.log(5 / 2), abs=1e-5)

    @pytest.mark.parametrize("which", ["U", "V"])
    def test_unregularized_tiny_instance_matches_reference(self, which):
        d = overlapping_dataset()
        other = np.array([[0.8], [-0.6]])
        solve = solve_u_block if which == "U" else solve_v_block
        sol = solve(d, other, np.zeros((2, 1)), 0.0, RegConfig(),
                    InnerSolverConfig(inner_tol=1e-12, inner_max_iter=20000))
        x_ref, b_ref, f_ref = bfgs_block(which, d, other, RegConfig())
        assert 0.05 < np.max(np.abs(x_ref)) < 10
        np.testing.assert_allclose(sol.factor, x_ref, atol=1e-3)
        assert sol.b == pytest.approx(b_ref, abs=1e-3)
        assert sol.objective == pytest.approx(f_ref, abs=1e-8)

    @pytest.mark.parametrize("which", ["U", "V"])
    def test_elastic_net_block_matches_reference(self, rng, which):
        d = random_dataset(rng, 20, 4, 3)
        reg = RegConfig(0.02, 0.1, 0.03, 0.2, 2)
        other = rng.standard_normal((3 if which == "U" else 4, 2))
        start = np.zeros((4 if which == "U" else 3, 2))
        solve = solve_u_block if which == "U" else solve_v_block
        sol = solve(d, other, start, 0.0, reg, InnerSolverConfig(inner_tol=1e-12))
        _, _, f_ref = bfgs_block(which, d, other, reg)
        assert sol.converged
        assert sol.objective == pytest.approx(f_ref, abs=1e-9)

    @pytest.mark.parametrize("which", ["U", "V"])
    def test_optimality_residual(self, rng, which):
        d = random_dataset(rng, 30, 5, 4)
        reg = RegConfig(0.05, 0.5, 0.05, 0.5, 1)
        cfg = InnerSolverConfig()
        other = rng.standard_normal((4 if which == "U" else 5, 1))
        solve = solve_u_block if which == "U" else solve_v_block
        start = np.ones((5 if which == "U" else 4, 1))
        sol = solve(d, other, start, 0.3, reg, cfg)
        res, gnorm = block_residual(which, d, other, sol.factor, sol.b, reg)
        assert res <= 10 * cfg.inner_tol * (1 + gnorm)

    def test_inner_iterations_monotone_without_acceleration(self, rng):
        d = random_dataset(rng, 15, 3, 3)
        reg = RegConfig(0.05, 0.0, 0.0, 0.0)
        other = rng.standard_normal((3, 1))
        prev = math.inf
        for iters in (1, 2, 5, 20, 80):
            sol = solve_u_block(d, other, np.zeros((3, 1)), 0.0, reg,
                                InnerSolverConfig(1e-14, iters, acceleration=False))
            assert sol.objective <= prev
            prev = sol.objective

    def test_config_validation(self):
        with pytest.raises(ValueError):
            InnerSolverConfig(inner_tol=0)
        with pytest.raises(ValueError):
            InnerSolverConfig(inner_max_iter=0)
        with pytest.raises(ValueError):
            block_residual("W", overlapping_dataset(), np.ones((2, 1)), np.ones((2, 1)), 0.0, RegConfig())


class TestFitBCD:
    def test_agrees_with_bcpd(self):
        d = generate_synthetic(60, 12, 12, seed=3)
        cfg = SolverConfig(RegConfig(0.1, 1.0, 0.1, 1.0, 1), tol=1e-6)
        a, b = fit(d, cfg), fit_bcd(d, cfg, InnerSolverConfig(inner_tol=1e-9))
        assert a.converged and b.converged
        assert abs(a.objective - b.objective) <= 1e-2 * abs(b.objective)

    def test_outer_objective_monotone(self):
        d = generate_synthetic(60, 12, 12, seed=3)
        rep = fit_bcd(d, SolverConfig(RegConfig(0.1, 0.0, 0.1, 0.0, 1)))
        F = [r.objective for r in rep.trace]
        assert all(b <= a for a, b in zip(F, F[1:]))

    def test_zero_iterations(self):
        d = generate_synthetic(20, 4, 4, seed=3)
        rep = fit_bcd(d, SolverConfig(max_iter=0))
        assert len(rep.trace) == 1 and rep.total_iters == 0

    def test_inner_tol_must_be_tighter(self):
        d = generate_synthetic(20, 4, 4, seed=3)
        with pytest.raises(ValueError, match="inner_tol"):
            fit_bcd(d, SolverConfig(tol=1e-6), InnerSolverConfig(inner_tol=1e-5))

    def test_default_inner_tol_follows_outer(self):
        d = overlapping_dataset()
        rep = fit_bcd(d, SolverConfig(RegConfig(0.01, 0.1, 0.01, 0.1, 1), tol=1e-8, max_iter=50))
        assert rep.total_iters >= 1
