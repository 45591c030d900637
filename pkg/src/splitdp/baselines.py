"""Non-private reference models and the gradient-perturbation baseline."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .dp import DOMAIN_SGD, NoiseStream, laplace_array
from .objective import Task
from .solver import Model, sigmoid


def fit_nonprivate(X, y, task: Task) -> Model:
    """Plain least squares / maximum-likelihood logistic fit.

    Linear: exact least squares, falling back to a small ridge (with a
    warning) when the system is rank deficient.  Logistic: quasi-Newton
    descent on the mean log-loss until the gradient infinity-norm is at
    most 1e-6.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if task is Task.LINEAR:
        w, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
        if rank < d:
            warnings.warn(f"design matrix rank {rank} < d={d}; using ridge fallback")
            alpha = 1e-8 * max(n, 1)
            w = np.linalg.solve(X.T @ X + alpha * np.eye(d), X.T @ y)
        return Model(w, task)

    def loss_grad(w):
        z = X @ w
        # log(1 + exp(z)) - y*z, computed stably
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        grad = X.T @ (sigmoid(z) - y) / n
        return loss, grad

    res = optimize.minimize(
        loss_grad, np.zeros(d), jac=True, method="L-BFGS-B",
        options={"maxiter": 2000, "gtol": 1e-6, "ftol": 0.0},
    )
    return Model(res.x, task)


@dataclass
class SgdConfig:
    """Full-batch gradient perturbation: T iterations of L1-clipped gradients
    with per-coordinate Laplace noise, per-iteration budget epsilon / T."""

    iterations: int = 100
    learning_rate: float = None  # resolved to 0.1 / n when unset
    clip_bound: float = 1.0
    epsilon: float = None  # None means noise off

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.clip_bound <= 0:
            raise ValueError("clip bound must be positive")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive (or None for noise off)")

    @property
    def noise_scale(self) -> float:
        """Per-coordinate Laplace scale each iteration: sensitivity 2C at budget eps/T."""
        if self.epsilon is None:
            return 0.0
        return 2.0 * self.clip_bound * self.iterations / self.epsilon

    def consumed_budget(self, steps: int) -> float:
        if self.epsilon is None:
            return 0.0
        return self.epsilon * steps / self.iterations


def _per_example_gradients(X, y, w, task: Task) -> np.ndarray:
    z = X @ w
    if task is Task.LINEAR:
        return 2.0 * (z - y)[:, None] * X
    return (sigmoid(z) - y)[:, None] * X


def clip_l1(grads: np.ndarray, bound: float) -> np.ndarray:
    """Scale each row down so its L1 norm is at most ``bound``."""
    norms = np.abs(grads).sum(axis=1)
    factor = np.where(norms > bound, bound / np.maximum(norms, 1e-300), 1.0)
    return grads * factor[:, None]


def dpsgd(X, y, task: Task, config: SgdConfig, seed: int, draw_log: list = None) -> Model:
    """Laplace-noised full-batch gradient descent, deterministic given the seed.

    Each iteration clips every per-example gradient to L1 norm C, sums them,
    and adds per-coordinate Laplace(2*C*T/epsilon) noise before the step.
    ``draw_log`` (a list, when provided) collects each iteration's noise
    vector so the injected-variance accounting can be checked.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    eta = config.learning_rate if config.learning_rate is not None else 0.1 / n
    stream = NoiseStream(seed).substream(DOMAIN_SGD)
    w = np.zeros(d)
    for _ in range(config.iterations):
        grads = clip_l1(_per_example_gradients(X, y, w, task), config.clip_bound)
        total = grads.sum(axis=0)
        if config.epsilon is not None:
            noise = laplace_array(config.noise_scale, stream, d)
            if draw_log is not None:
                draw_log.append(noise.copy())
            total = total + noise
        w = w - eta * total
    return Model(w, task)
