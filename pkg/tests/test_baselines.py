import numpy as np
import pytest

from splitdp import (
    DatasetSpec,
    SgdConfig,
    Task,
    dpsgd,
    fit_nonprivate,
    gen_synthetic,
    mse,
    predict,
)
from splitdp.baselines import clip_l1
from splitdp.solver import accuracy, sigmoid


class TestNonPrivate:
    def test_recovers_noiseless_linear_truth(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, (300, 6))
        w_true = rng.uniform(-0.3, 0.3, 6)
        y = X @ w_true  # bounded since |w|_1 < 1
        model = fit_nonprivate(X, y, Task.LINEAR)
        assert np.abs(model.weights - w_true).max() <= 1e-6

    def test_generated_truth_recovered_without_label_noise(self):
        ds, w_star = gen_synthetic(DatasetSpec(2000, 5, 1.0, label_noise=0.0, seed=3), Task.LINEAR)
        model = fit_nonprivate(ds.X, ds.y, Task.LINEAR)
        scaled_truth = w_star / np.abs(w_star).sum()
        assert np.abs(model.weights - scaled_truth).max() <= 1e-4

    def test_rank_deficient_falls_back_to_ridge(self):
        X = np.array([[1.0, 1.0]])
        y = np.array([1.0])
        with pytest.warns(UserWarning, match="ridge"):
            model = fit_nonprivate(X, y, Task.LINEAR)
        assert np.all(np.isfinite(model.weights))

    def test_single_record_finite(self):
        model = fit_nonprivate(np.array([[1.0]]), np.array([1.0]), Task.LINEAR)
        assert np.isfinite(model.weights).all()
        # underdetermined single record takes the fallback and stays finite
        with pytest.warns(UserWarning, match="ridge"):
            wide = fit_nonprivate(np.array([[1.0, 0.5]]), np.array([1.0]), Task.LINEAR)
        assert np.isfinite(wide.weights).all()

    def test_separable_logistic_perfect_training_accuracy(self):
        X = np.array([[1.0], [0.8], [0.6], [-0.6], [-0.8], [-1.0]])
        y = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
        model = fit_nonprivate(X, y, Task.LOGISTIC)
        assert accuracy(model, X, y) == 1.0

    def test_logistic_gradient_tolerance(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(-1, 1, (500, 4))
        logits = X @ np.array([2.0, -1.0, 0.5, 0.0])
        y = (rng.random(500) < sigmoid(logits)).astype(float)
        model = fit_nonprivate(X, y, Task.LOGISTIC)
        grad = X.T @ (sigmoid(X @ model.weights) - y) / X.shape[0]
        assert np.abs(grad).max() <= 1e-5  # lbfgs gtol on the projected gradient


class TestClip:
    def test_rows_above_bound_scaled(self):
        grads = np.array([[3.0, 2.0], [0.2, 0.1]])  # L1 norms 5 and 0.3
        out = clip_l1(grads, 1.0)
        assert np.allclose(out[0], [0.6, 0.4])
        assert np.array_equal(out[1], grads[1])
        assert np.abs(out).sum(axis=1).max() <= 1.0 + 1e-12


class TestDpsgd:
    def _data(self, n=200, d=4, seed=5):
        rng = np.random.default_rng(seed)
        X = rng.uniform(-1, 1, (n, d))
        w = rng.uniform(-0.25, 0.25, d)
        y = np.clip(X @ w + rng.uniform(-0.05, 0.05, n), -1, 1)
        return X, y

    def test_noise_off_equals_plain_clipped_descent(self):
        X, y = self._data()
        cfg = SgdConfig(iterations=30, epsilon=None)
        model = dpsgd(X, y, Task.LINEAR, cfg, seed=1)
        w = np.zeros(X.shape[1])
        eta = 0.1 / X.shape[0]
        for _ in range(30):
            grads = clip_l1(2.0 * ((X @ w) - y)[:, None] * X, cfg.clip_bound)
            w = w - eta * grads.sum(axis=0)
        assert np.array_equal(model.weights, w)

    def test_deterministic_given_seed(self):
        X, y = self._data()
        cfg = SgdConfig(iterations=10, epsilon=1.0)
        a = dpsgd(X, y, Task.LINEAR, cfg, seed=9)
        b = dpsgd(X, y, Task.LINEAR, cfg, seed=9)
        assert np.array_equal(a.weights, b.weights)

    def test_noise_scale_formula(self):
        cfg = SgdConfig(iterations=50, clip_bound=2.0, epsilon=0.5)
        assert cfg.noise_scale == 2.0 * 2.0 * 50 / 0.5

    def test_budget_accounting_exact(self):
        cfg = SgdConfig(iterations=7, epsilon=0.3)
        assert cfg.consumed_budget(7) == 0.3  # sums to epsilon exactly
        assert cfg.consumed_budget(0) == 0.0

    def test_draw_log_variance_scales_with_iterations_squared(self):
        X, y = self._data(n=40, d=100)  # wide: many draws per iteration
        draws = {}
        for T in (20, 40):
            log = []
            cfg = SgdConfig(iterations=T, epsilon=1.0)
            dpsgd(X, y, Task.LINEAR, cfg, seed=2, draw_log=log)
            assert len(log) == T
            draws[T] = np.concatenate(log)
        # per-draw variance is 2*(2CT/eps)^2: doubling T multiplies it by 4
        v20 = draws[20].var()
        v40 = draws[40].var()
        assert v40 / v20 == pytest.approx(4.0, rel=0.25)
        cfg20 = SgdConfig(iterations=20, epsilon=1.0)
        assert v20 == pytest.approx(2 * cfg20.noise_scale**2, rel=0.2)

    def test_private_fit_worse_than_exact_fit(self):
        X, y = self._data(n=500)
        noisy = dpsgd(X, y, Task.LINEAR, SgdConfig(iterations=100, epsilon=0.5), seed=3)
        exact = fit_nonprivate(X, y, Task.LINEAR)
        assert mse(noisy, X, y) >= mse(exact, X, y)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SgdConfig(iterations=0)
        with pytest.raises(ValueError):
            SgdConfig(clip_bound=-1.0)
        with pytest.raises(ValueError):
            SgdConfig(epsilon=0.0)
