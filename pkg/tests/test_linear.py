import math

import numpy as np
import pytest
from scipy.optimize import minimize

from sblr.linear import (LinearModel, LinearSolverConfig, fit_linear, linear_gradient,
                         linear_margin, linear_objective, linear_residual, predict_linear,
                         solve_linear, vectorize)
from sblr.types import Dataset, ModelParams, margin

from conftest import central_difference, random_dataset, rel_err


def split_lbfgs_oracle(data, lam):
    """Reference optimum of the l1 logistic problem via w = p - q, p, q >= 0."""
    A, y, n = data.flat, data.y, data.n
    p = A.shape[1]

    def f(z):
        w, b = z[:p] - z[p:2 * p], z[-1]
        m = A @ w + b
        val = np.mean(np.logaddexp(0, -y * m)) + lam * z[:2 * p].sum()
        c = -y / (1 + np.exp(y * m)) / n
        gw = c @ A
        return val, np.concatenate([gw + lam, -gw + lam, [c.sum()]])

    best = None
    for start in range(5):  # multi-start guards against a poor L-BFGS-B exit
        z0 = np.random.default_rng(start).uniform(0, 0.5, 2 * p + 1)
        res = minimize(f, z0, jac=True, method="L-BFGS-B",
                       bounds=[(0, None)] * (2 * p) + [(None, None)],
                       options={"ftol": 1e-16, "gtol": 1e-12, "maxiter": 20000})
        if best is None or res.fun < best.fun:
            best = res
    return best.fun


class TestVectorize:
    def test_row_major(self):
        np.testing.assert_array_equal(vectorize([[1, 2], [3, 4]]), [1, 2, 3, 4])

    def test_single_entry(self):
        assert vectorize([[5.0]]).shape == (1,)

    def test_round_trip(self, rng):
        x = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(vectorize(x).reshape(3, 4), x)


class TestFitLinear:
    def test_large_lambda_gives_zero_weights(self, rng):
        d = Dataset(rng.standard_normal((9, 2, 3)), [1, 1, 1, 1, 1, 1, -1, -1, -1])
        b_star = math.log(6 / 3)
        gw, _ = linear_gradient(np.zeros(6), b_star, d)
        lam = float(np.max(np.abs(gw))) * 1.01
        model = fit_linear(d, lam)
        np.testing.assert_array_equal(model.w, 0.0)
        assert model.b == pytest.approx(b_star, abs=1e-5)

    def test_separable_one_dimensional(self):
        x = np.array([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0])
        d = Dataset(x.reshape(6, 1, 1), np.sign(x))
        model = fit_linear(d, 0.0)
        preds = [predict_linear(model, xi[None, None])[0] for xi in x]
        assert preds == list(np.sign(x))

    def test_matches_reference_optimum(self, rng):
        d = random_dataset(rng, 20, 5, 1)
        fit = solve_linear(d, 0.1, LinearSolverConfig(tol=1e-10))
        assert fit.objective == pytest.approx(split_lbfgs_oracle(d, 0.1), abs=1e-6)

    def test_residual_and_monotone_history(self, rng):
        d = random_dataset(rng, 40, 4, 3)
        fit = solve_linear(d, 0.02)
        assert fit.converged and fit.residual <= 1e-4
        assert linear_residual(fit.model.w, fit.model.b, d, 0.02) == fit.residual
        assert all(b <= a for a, b in zip(fit.history, fit.history[1:]))
        assert fit.objective == linear_objective(fit.model.w, fit.model.b, d, 0.02)

    def test_negative_lambda(self, rng):
        with pytest.raises(ValueError):
            fit_linear(random_dataset(rng, 4, 2, 2), -1.0)

    def test_gradient_finite_differences(self, rng):
        d = random_dataset(rng, 10, 3, 2)
        w, b = rng.uniform(-1, 1, 6), 0.3
        gw, gb = linear_gradient(w, b, d)
        fd_w = central_difference(lambda v: linear_objective(v, b, d, 0.0), w)
        assert rel_err(gw, fd_w) <= 1e-5
        fd_b = (linear_objective(w, b + 1e-6, d, 0) - linear_objective(w, b - 1e-6, d, 0)) / 2e-6
        assert rel_err(gb, fd_b) <= 1e-5


class TestPredictLinear:
    def test_zero_model(self):
        assert predict_linear(LinearModel(np.zeros(4), 0.0, (2, 2)), np.ones((2, 2))) == (1, 0.5)

    def test_saturation(self):
        label, p = predict_linear(LinearModel(np.zeros(4), 1000.0, (2, 2)), np.ones((2, 2)))
        assert label == 1 and abs(p - 1) <= 1e-12

    def test_log_three(self):
        w = np.array([math.log(3.0), 0, 0, 0])
        label, p = predict_linear(LinearModel(w, 0.0, (2, 2)), np.eye(2))
        assert label == 1 and p == pytest.approx(0.75, abs=1e-15)

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            LinearModel(np.zeros(3), 0.0, (2, 2))
        with pytest.raises(ValueError):
            linear_margin(LinearModel(np.zeros(4), 0.0, (2, 2)), np.zeros((4, 1)))


def test_full_rank_bilinear_represents_any_linear_model(rng):
    s, t = 4, 3
    w, b = rng.standard_normal(s * t), 0.4
    u, sig, vt = np.linalg.svd(w.reshape(s, t), full_matrices=False)
    params = ModelParams(u * sig, vt.T, b)
    model = LinearModel(w, b, (s, t))
    for _ in range(10):
        x = rng.standard_normal((s, t))
        assert margin(params, x) == pytest.approx(linear_margin(model, x), rel=1e-10, abs=1e-12)
