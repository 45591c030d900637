import numpy as np
import pytest

from splitdp import Model, PolyObjective, Task, accuracy, minimize, mse, predict
from splitdp.solver import SolverError, default_ridge_floor, sigmoid


class TestMinimize:
    def test_one_dim_quadratic(self):
        # w^2 - 2w has its minimum at w = 1
        obj = PolyObjective(0.0, np.array([-2.0]), np.array([[1.0]]))
        assert minimize(obj) == pytest.approx([1.0])

    def test_separable_quadratic(self):
        obj = PolyObjective(0.0, np.array([-2.0, -4.0]), np.eye(2))
        assert minimize(obj) == pytest.approx([1.0, 2.0])

    def test_indefinite_repaired_by_floor(self):
        # -w^2 - 2w clipped at rho=0.01 becomes 0.01 w^2 - 2w, argmin 100
        obj = PolyObjective(0.0, np.array([-2.0]), np.array([[-1.0]]))
        w = minimize(obj, rho=0.01)
        assert w == pytest.approx([100.0])
        repaired_grad = 2 * 0.01 * w[0] + (-2.0)
        assert abs(repaired_grad) <= 1e-8 * (1 + 2.0)

    def test_gradient_stationarity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            d = int(rng.integers(1, 8))
            A = rng.normal(size=(d, d))
            l1 = rng.normal(size=d) * 100
            obj = PolyObjective(0.0, l1, A)
            rho = 0.5
            w = minimize(obj, rho=rho)
            S = 0.5 * (A + A.T)
            vals, vecs = np.linalg.eigh(S)
            S_rep = vecs @ np.diag(np.maximum(vals, rho)) @ vecs.T
            grad = 2 * S_rep @ w + l1
            assert np.abs(grad).max() <= 1e-8 * (1 + np.abs(l1).max())

    def test_positive_definite_matches_direct_solve(self):
        rng = np.random.default_rng(1)
        B = rng.normal(size=(5, 5))
        S = B @ B.T + 5 * np.eye(5)
        l1 = rng.normal(size=5)
        obj = PolyObjective(0.0, l1, S)
        direct = np.linalg.solve(2 * S, -l1)
        assert minimize(obj, rho=0.0) == pytest.approx(direct, abs=1e-10)

    def test_constant_shift_invariant(self):
        rng = np.random.default_rng(2)
        l1 = rng.normal(size=3)
        l2 = rng.normal(size=(3, 3))
        w1 = minimize(PolyObjective(0.0, l1, l2), rho=0.1)
        w2 = minimize(PolyObjective(1e9, l1, l2), rho=0.1)
        assert np.array_equal(w1, w2)

    def test_non_finite_rejected(self):
        obj = PolyObjective(0.0, np.array([np.nan]), np.array([[1.0]]))
        with pytest.raises(ValueError):
            minimize(obj)

    def test_negative_rho_rejected(self):
        obj = PolyObjective(0.0, np.zeros(1), np.ones((1, 1)))
        with pytest.raises(ValueError):
            minimize(obj, rho=-1.0)


class TestRidgeFloor:
    def test_base_term_scales_with_records(self):
        assert default_ridge_floor(10_000, 5, 0.0) == pytest.approx(1.0)

    def test_noise_term_dominates_when_large(self):
        assert default_ridge_floor(100, 4, 100.0) == pytest.approx(4 * 100.0 * 2.0)


class TestPredictions:
    def test_zero_weights_logistic_is_half(self):
        model = Model(np.zeros(3), Task.LOGISTIC)
        out = predict(model, np.array([[0.5, -0.5, 1.0], [0.0, 0.0, 0.0]]))
        assert out.tolist() == [0.5, 0.5]

    def test_perfect_fit_zero_mse(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(-1, 1, (50, 4))
        w = rng.normal(size=4)
        model = Model(w, Task.LINEAR)
        assert mse(model, X, X @ w) <= 1e-12

    def test_hand_computed_residuals(self):
        X = np.array([[1.0], [0.5], [-1.0], [0.0], [0.25]])
        y = np.array([0.5, 0.5, 0.0, 0.1, 0.2])
        model = Model(np.array([0.4]), Task.LINEAR)
        residuals = [0.4 - 0.5, 0.2 - 0.5, -0.4 - 0.0, 0.0 - 0.1, 0.1 - 0.2]
        expected = sum(r * r for r in residuals) / 5
        assert mse(model, X, y) == pytest.approx(expected)

    def test_accuracy_threshold(self):
        model = Model(np.array([10.0]), Task.LOGISTIC)
        X = np.array([[1.0], [-1.0], [0.5], [-0.5]])
        y = np.array([1.0, 0.0, 1.0, 1.0])
        assert accuracy(model, X, y) == 0.75

    def test_dimension_mismatch_rejected(self):
        model = Model(np.zeros(2), Task.LINEAR)
        with pytest.raises(ValueError):
            predict(model, np.zeros((3, 4)))

    def test_sigmoid_stable_at_extremes(self):
        assert sigmoid(np.array([800.0]))[0] == 1.0
        assert sigmoid(np.array([-800.0]))[0] == 0.0

    def test_non_finite_weights_rejected(self):
        with pytest.raises(SolverError):
            Model(np.array([np.inf]), Task.LINEAR)
