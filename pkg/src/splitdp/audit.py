"""Empirical sensitivity audits: neighboring-pair coefficient distances."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dp import DOMAIN_AUDIT, NoiseStream
from .objective import (
    Task,
    aggregate,
    dissect,
    global_sensitivity,
    party_sensitivity,
)


@dataclass
class SensitivityReport:
    pairs_checked: int = 0
    bound_violations: list = field(default_factory=list)
    domain_violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.bound_violations and not self.domain_violations


def _random_labels(rng, n, task):
    if task is Task.LINEAR:
        return rng.uniform(-1.0, 1.0, size=n)
    return (rng.random(n) < 0.5).astype(np.float64)


def sensitivity_audit(
    task: Task,
    partition,
    n_pairs: int,
    n_records: int,
    seed: int,
    inject_out_of_range: bool = False,
) -> SensitivityReport:
    """Check coefficient L1 distances of random neighboring datasets.

    For each trial a random dataset is drawn; its full coefficient distance
    to a one-record-replaced neighbor must stay within the global
    sensitivity, and for every party the distance restricted to that
    party's coefficients (only the party's view of the record changes) must
    stay within its per-party sensitivity.  Records outside the input
    domain are reported as domain violations, attributed to ingestion
    rather than to the bounds.
    """
    d = partition.d
    rng = NoiseStream(seed).substream(DOMAIN_AUDIT)._gen
    allocation = dissect(task, partition)
    delta_f = global_sensitivity(task, d)
    parties = sorted(partition.party_features)
    masks = {k: allocation.party_mask(k) for k in parties}
    bounds = {
        k: party_sensitivity(task, d, partition.size(k), k == partition.label_owner)
        for k in parties
    }
    report = SensitivityReport()

    for trial in range(n_pairs):
        X = rng.uniform(-1.0, 1.0, size=(n_records, d))
        y = _random_labels(rng, n_records, task)
        if inject_out_of_range and trial == 0:
            X[0, 0] = 2.0
        if np.any(np.abs(X) > 1.0):
            bad = np.argwhere(np.abs(X) > 1.0)[0]
            report.domain_violations.append(
                {
                    "trial": trial,
                    "record": int(bad[0]),
                    "feature": int(bad[1]),
                    "value": float(X[bad[0], bad[1]]),
                    "cause": "ingestion",
                }
            )
            continue
        base = aggregate(X, y, task).as_vector()
        j = int(rng.integers(n_records))
        x_new = rng.uniform(-1.0, 1.0, size=d)
        y_new = float(_random_labels(rng, 1, task)[0])

        X_full = X.copy()
        X_full[j] = x_new
        y_full = y.copy()
        y_full[j] = y_new
        dist = float(np.abs(aggregate(X_full, y_full, task).as_vector() - base).sum())
        report.pairs_checked += 1
        if dist > delta_f + 1e-9:
            report.bound_violations.append(
                {"trial": trial, "scope": "global", "distance": dist, "bound": delta_f}
            )

        for k in parties:
            X_k = X.copy()
            feats = list(partition.party_features[k])
            X_k[j, feats] = x_new[feats]
            y_k = y.copy()
            if k == partition.label_owner:
                y_k[j] = y_new
            diff = aggregate(X_k, y_k, task).as_vector() - base
            dist_k = float(np.abs(diff[masks[k]]).sum())
            if dist_k > bounds[k] + 1e-9:
                report.bound_violations.append(
                    {"trial": trial, "scope": f"party:{k}", "distance": dist_k, "bound": bounds[k]}
                )
    return report
