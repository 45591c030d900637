"""Polynomial form of regression objectives, their sensitivities, and the
dissection of coefficients across feature-partitioned parties.

Both regression losses are stored as degree-2 polynomials in the model
weights: a constant, a length-d linear part, and a d-by-d quadratic part
indexed by ordered feature pairs.  The quadratic part keeps both (a, b)
and (b, a) as separate coefficients so that the closed-form sensitivity
2(1 + 2d + d^2) counts exactly one unit per stored coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

LOG2 = math.log(2.0)

# Taylor data of log(1 + exp(z)) at z = 0: value, first, second derivative.
TAYLOR_F0 = LOG2
TAYLOR_F1 = 0.5
TAYLOR_F2 = 0.25
# Weight of every quadratic term in the logistic surrogate: f''(0)/2!.
LOGISTIC_QUAD = TAYLOR_F2 / 2.0


class Task(Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"


def record_dot(u, v) -> float:
    """Sum of elementwise products; the one kernel every coefficient uses.

    Centralized aggregation, per-party computation and the plaintext debug
    backend all route through this function on contiguous float64 copies,
    so a coefficient computed from a party's local column equals the one
    computed centrally bit for bit.
    """
    u = np.ascontiguousarray(u, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    if u.ndim != 1 or u.shape != v.shape:
        raise ValueError(f"record_dot needs equal-length vectors, got {u.shape} and {v.shape}")
    return float(np.dot(u, v))


def validate_record(x, y, task: Task) -> np.ndarray:
    """Check the input-domain bounds: |x_a| <= 1 and a task-matching label."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("record features must be a 1-d vector")
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > 1.0):
        raise ValueError("feature values must be finite and within [-1, 1]")
    if task is Task.LINEAR:
        if not (math.isfinite(y) and -1.0 <= y <= 1.0):
            raise ValueError(f"linear label {y!r} outside [-1, 1]")
    else:
        if y not in (0.0, 1.0):
            raise ValueError(f"logistic label {y!r} not in {{0, 1}}")
    return x


@dataclass
class PolyObjective:
    """Degree-2 polynomial coefficients of a loss: constant, linear, quadratic."""

    lambda0: float
    lambda1: np.ndarray
    lambda2: np.ndarray

    def __post_init__(self):
        self.lambda1 = np.asarray(self.lambda1, dtype=np.float64)
        self.lambda2 = np.asarray(self.lambda2, dtype=np.float64)
        d = self.lambda1.shape[0]
        if self.lambda1.ndim != 1 or self.lambda2.shape != (d, d):
            raise ValueError(
                f"coefficient shapes disagree: lambda1 {self.lambda1.shape}, lambda2 {self.lambda2.shape}"
            )

    @property
    def d(self) -> int:
        return self.lambda1.shape[0]

    @property
    def n_coeffs(self) -> int:
        return 1 + self.d + self.d * self.d

    def as_vector(self) -> np.ndarray:
        """Canonical flattening: lambda0, lambda1 by index, lambda2 row-major."""
        return np.concatenate(([self.lambda0], self.lambda1, self.lambda2.ravel()))

    @classmethod
    def from_vector(cls, vec, d: int) -> "PolyObjective":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (1 + d + d * d,):
            raise ValueError(f"expected {1 + d + d * d} coefficients, got {vec.shape}")
        return cls(float(vec[0]), vec[1 : 1 + d].copy(), vec[1 + d :].reshape(d, d).copy())

    def copy(self) -> "PolyObjective":
        return PolyObjective(self.lambda0, self.lambda1.copy(), self.lambda2.copy())


def coeff_count(d: int) -> int:
    return 1 + d + d * d


def coeff_index(d: int, features: Sequence[int]) -> int:
    """Canonical index of a coefficient given its (0-based) feature tuple."""
    if len(features) == 0:
        return 0
    if len(features) == 1:
        return 1 + features[0]
    a, b = features
    return 1 + d + a * d + b


def linear_record_coeffs(x, y: float) -> PolyObjective:
    """Squared-loss coefficients of one record: y^2, -2*y*x_a, x_a*x_b."""
    x = validate_record(x, y, Task.LINEAR)
    return PolyObjective(y * y, -2.0 * y * x, np.outer(x, x))


def logistic_record_coeffs(x, y: float) -> PolyObjective:
    """Order-2 surrogate of the log-loss for one record.

    The constant is log 2, the linear part (1/2 - y) * x_a, and every
    quadratic term carries weight 1/8; all three follow from expanding
    log(1 + exp(z)) to second order at z = 0 and subtracting y * z.
    """
    x = validate_record(x, y, Task.LOGISTIC)
    return PolyObjective(LOG2, (TAYLOR_F1 - y) * x, LOGISTIC_QUAD * np.outer(x, x))


def record_coeffs(x, y: float, task: Task) -> PolyObjective:
    if task is Task.LINEAR:
        return linear_record_coeffs(x, y)
    return logistic_record_coeffs(x, y)


def aggregate(X, y, task: Task) -> PolyObjective:
    """Coefficient-wise sum of per-record objectives over a whole dataset.

    Every entry is produced by `record_dot` on contiguous column copies,
    which is exactly how parties compute their allocated coefficients.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d array of shape (n, d)")
    n, d = X.shape
    if n == 0:
        raise ValueError("cannot aggregate an empty dataset")
    if y.shape != (n,):
        raise ValueError(f"label vector shape {y.shape} does not match {n} records")

    cols = [np.ascontiguousarray(X[:, a]) for a in range(d)]
    lambda1 = np.empty(d)
    lambda2 = np.empty((d, d))
    if task is Task.LINEAR:
        lambda0 = record_dot(y, y)
        for a in range(d):
            lambda1[a] = -2.0 * record_dot(y, cols[a])
        quad = 1.0
    else:
        lambda0 = n * LOG2
        h = np.ascontiguousarray(TAYLOR_F1 - y)
        for a in range(d):
            lambda1[a] = record_dot(h, cols[a])
        quad = LOGISTIC_QUAD
    for a in range(d):
        for b in range(a, d):
            v = quad * record_dot(cols[a], cols[b])
            lambda2[a, b] = v
            lambda2[b, a] = v
    return PolyObjective(lambda0, lambda1, lambda2)


# ---------------------------------------------------------------------------
# Sensitivities


def global_sensitivity(task: Task, d: int) -> float:
    """Worst-case L1 change of the full coefficient vector when one record changes."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if task is Task.LINEAR:
        return 2.0 * (1 + 2 * d + d * d)
    return d * d / 4.0 + d


def party_sensitivity(task: Task, d: int, dk: int, is_label_owner: bool) -> float:
    """Worst-case L1 change restricted to coefficients involving one party's data.

    Owning the label costs extra: every degree-1 coefficient involves the
    label, so the owner is exposed on all d of them instead of only its own.
    """
    if not 1 <= dk <= d:
        raise ValueError(f"party feature count {dk} must satisfy 1 <= dk <= d={d}")
    if task is Task.LINEAR:
        if is_label_owner:
            return 2.0 * (1 + 2 * d + dk * d)
        return 2.0 * (2 * dk + dk * d)
    if is_label_owner:
        return d + dk * (2 * d - dk) / 4.0
    return dk + dk * (2 * d - dk) / 4.0


def sub_sensitivity_g(task: Task, d: int, dk: int, is_label_owner: bool) -> float:
    """Sensitivity of the single-party coefficient block of one party.

    Evaluates 2 * max over a record of the L1 mass of the coefficients the
    party computes alone: the constant and its own degree-1 terms if it owns
    the label, plus its own dk*dk quadratic block.
    """
    if not 1 <= dk <= d:
        raise ValueError(f"party feature count {dk} must satisfy 1 <= dk <= d={d}")
    if task is Task.LINEAR:
        if is_label_owner:
            return 2.0 * (1 + 2 * dk + dk * dk)
        return 2.0 * (dk * dk)
    # Logistic: degree-1 mass 1/2 each, quadratic mass 1/8 each; no constant.
    if is_label_owner:
        return 2.0 * (TAYLOR_F1 * dk + LOGISTIC_QUAD * dk * dk)
    return 2.0 * (LOGISTIC_QUAD * dk * dk)


def sub_sensitivity_h(task: Task, d: int, dk: int, dl: int, involves_label: bool) -> float:
    """Sensitivity of the cross-party coefficient block of a party pair.

    When the pair includes the label owner (first party), the block also
    holds the dl degree-1 coefficients of the other party's features.  The
    quadratic cross block stores both orientations, 2*dk*dl entries.
    """
    if dk < 1 or dl < 1 or dk + dl > d:
        raise ValueError("invalid pair sizes")
    cross_quad = 2 * dk * dl
    if task is Task.LINEAR:
        label_part = 2.0 * dl if involves_label else 0.0
        return 2.0 * (label_part + cross_quad)
    label_part = TAYLOR_F1 * dl if involves_label else 0.0
    return 2.0 * (label_part + LOGISTIC_QUAD * cross_quad)


# ---------------------------------------------------------------------------
# Vertical partitions and coefficient allocation


@dataclass(frozen=True)
class VerticalPartition:
    """Disjoint feature ownership; party ids are 1-based, features 0-based."""

    party_features: dict
    label_owner: int = 1

    def __post_init__(self):
        object.__setattr__(
            self,
            "party_features",
            {int(k): tuple(int(a) for a in v) for k, v in self.party_features.items()},
        )
        parties = sorted(self.party_features)
        if not parties or parties != list(range(1, len(parties) + 1)):
            raise ValueError("party ids must be 1..K")
        seen = []
        for k in parties:
            feats = self.party_features[k]
            if not feats:
                raise ValueError(f"party {k} owns no features")
            seen.extend(feats)
        if sorted(seen) != list(range(len(seen))):
            raise ValueError("party feature sets must be disjoint and cover 0..d-1")
        if self.label_owner not in self.party_features:
            raise ValueError(f"label owner {self.label_owner} is not a party")

    @property
    def K(self) -> int:
        return len(self.party_features)

    @property
    def d(self) -> int:
        return sum(len(v) for v in self.party_features.values())

    def size(self, k: int) -> int:
        return len(self.party_features[k])

    def owner_array(self) -> np.ndarray:
        owners = np.empty(self.d, dtype=np.int64)
        for k, feats in self.party_features.items():
            owners[list(feats)] = k
        return owners

    def owner_of(self, a: int) -> int:
        for k, feats in self.party_features.items():
            if a in feats:
                return k
        raise ValueError(f"feature {a} not owned by any party")


class CoeffEntry(NamedTuple):
    """One allocated coefficient: who computes it and who adds its noise."""

    index: int
    degree: int
    features: tuple
    parties: tuple
    noise_adder: int
    noise_exempt: bool

    @property
    def is_cross(self) -> bool:
        return len(self.parties) == 2


@dataclass
class CoefficientAllocation:
    """The server's dissection map over all 1 + d + d^2 coefficients."""

    task: Task
    partition: VerticalPartition
    entries: list

    def __post_init__(self):
        if len(self.entries) != coeff_count(self.partition.d):
            raise ValueError("allocation must cover every coefficient exactly once")
        for pos, entry in enumerate(self.entries):
            if entry.index != pos:
                raise ValueError("allocation entries must be in canonical order")

    @property
    def d(self) -> int:
        return self.partition.d

    def single_entries(self):
        return [e for e in self.entries if not e.is_cross]

    def cross_entries(self):
        return [e for e in self.entries if e.is_cross]

    def party_mask(self, k: int) -> np.ndarray:
        """Boolean selector over canonical indices: coefficients touching party k."""
        mask = np.zeros(coeff_count(self.d), dtype=bool)
        for e in self.entries:
            if not e.noise_exempt and k in e.parties:
                mask[e.index] = True
        return mask


def dissect(task: Task, partition: VerticalPartition) -> CoefficientAllocation:
    """Split the objective's coefficients into single-party and cross-party ones.

    The constant and the label owner's degree-1 terms stay with the owner;
    degree-1 terms of other parties pair the owner (label) with the feature
    holder, which also adds the noise because it ends up holding the product.
    Quadratic terms are single-party when both features share an owner and
    otherwise cross-party with the lower-indexed party adding the noise.
    """
    d = partition.d
    owner = partition.owner_array()
    p1 = partition.label_owner
    entries = []
    exempt0 = task is Task.LOGISTIC
    entries.append(CoeffEntry(0, 0, (), (p1,), p1, exempt0))
    for a in range(d):
        k = int(owner[a])
        if k == p1:
            entries.append(CoeffEntry(1 + a, 1, (a,), (p1,), p1, False))
        else:
            entries.append(CoeffEntry(1 + a, 1, (a,), (p1, k), k, False))
    for a in range(d):
        ka = int(owner[a])
        for b in range(d):
            kb = int(owner[b])
            idx = 1 + d + a * d + b
            if ka == kb:
                entries.append(CoeffEntry(idx, 2, (a, b), (ka,), ka, False))
            else:
                entries.append(CoeffEntry(idx, 2, (a, b), (ka, kb), min(ka, kb), False))
    return CoefficientAllocation(task, partition, entries)
