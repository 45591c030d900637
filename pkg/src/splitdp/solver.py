"""Minimization of (possibly indefinite) degree-2 objectives and metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .objective import PolyObjective, Task


class SolverError(RuntimeError):
    pass


@dataclass
class Model:
    weights: np.ndarray
    task: Task

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not np.all(np.isfinite(self.weights)):
            raise SolverError("model weights must be finite")


def default_ridge_floor(n_records: int, d: int, noise_scale: float = 0.0,
                        base: float = 1e-4, noise_factor: float = 4.0) -> float:
    """Eigenvalue floor for repairing a perturbed quadratic.

    The base term scales with the record count because coefficients do.  The
    noise term dominates the spectral radius of a symmetrized matrix of
    Laplace(noise_scale) entries (about 2 * scale * sqrt(d)), so directions
    wiped out by noise get shrunk instead of exploding.  Not part of the
    source method, which leaves indefiniteness unaddressed.
    """
    return max(base * n_records, noise_factor * noise_scale * math.sqrt(d))


def minimize(obj: PolyObjective, rho: float = 0.0) -> np.ndarray:
    """argmin of lambda0 + lambda1.w + w.lambda2.w with eigenvalue repair.

    Symmetrizes the quadratic part, lifts eigenvalues below ``rho`` up to
    ``rho``, and solves the stationarity condition 2*S*w + lambda1 = 0 in the
    eigenbasis.  With rho = 0 any exactly-nonpositive directions get a zero
    component (minimum-norm convention).
    """
    if rho < 0:
        raise ValueError("ridge floor must be >= 0")
    vec = obj.as_vector()
    if not np.all(np.isfinite(vec)):
        raise ValueError("objective coefficients must be finite")
    S = 0.5 * (obj.lambda2 + obj.lambda2.T)
    try:
        vals, vecs = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - eigh rarely fails
        raise SolverError(f"eigendecomposition failed: {exc}") from exc
    clipped = np.maximum(vals, rho)
    rhs = vecs.T @ (-obj.lambda1)
    comp = np.zeros_like(rhs)
    nonzero = clipped > 0
    comp[nonzero] = rhs[nonzero] / (2.0 * clipped[nonzero])
    w = vecs @ comp
    return w


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def predict(model: Model, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != model.weights.shape[0]:
        raise ValueError(f"feature dimension {X.shape[1]} does not match model d={model.weights.shape[0]}")
    z = X @ model.weights
    out = z if model.task is Task.LINEAR else sigmoid(z)
    return float(out[0]) if single else out


def mse(model: Model, X, y) -> float:
    y = np.asarray(y, dtype=np.float64)
    pred = np.atleast_1d(predict(model, X))
    if pred.shape != y.shape:
        raise ValueError("prediction/label shape mismatch")
    return float(np.mean((pred - y) ** 2))


def accuracy(model: Model, X, y, threshold: float = 0.5) -> float:
    y = np.asarray(y, dtype=np.float64)
    pred = np.atleast_1d(predict(model, X))
    if pred.shape != y.shape:
        raise ValueError("prediction/label shape mismatch")
    return float(np.mean((pred >= threshold) == (y == 1.0)))
