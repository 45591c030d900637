"""Dataset generation, CSV ingestion, and splitting.

All feature values (and linear labels) are snapped to the 2^-20 grid when a
Dataset is constructed.  The grid matches the fixed-point encoding of the
secure backend, so a secure dot product of dataset columns is exact and the
secret-sharing and plaintext paths agree to the last bit for sums of up to
a few thousand records.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dp import DOMAIN_DATA, DOMAIN_SPLIT, NoiseStream
from .objective import Task, VerticalPartition
from .secure import SCALE
from .solver import sigmoid

MISSING_TOKENS = {"", "?", "na", "n/a", "nan", "null"}
MAX_CATEGORIES = 64


class IngestError(ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


def _quantize(values: np.ndarray) -> np.ndarray:
    return np.round(values * SCALE) / SCALE


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    task: Task
    source_meta: dict = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ValueError("X must be (n, d) and y length n")
        if not np.all(np.isfinite(self.X)) or np.any(np.abs(self.X) > 1.0):
            raise ValueError("feature values must be finite and within [-1, 1]")
        if self.task is Task.LINEAR:
            if not np.all(np.isfinite(self.y)) or np.any(np.abs(self.y) > 1.0):
                raise ValueError("linear labels must lie in [-1, 1]")
            self.y = _quantize(self.y)
        else:
            if not np.all(np.isin(self.y, (0.0, 1.0))):
                raise ValueError("logistic labels must be 0 or 1")
        self.X = _quantize(self.X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows], self.task, self.source_meta)


@dataclass
class DatasetSpec:
    """Synthetic generator knobs: size, sparsity, label noise, seed."""

    n: int
    d: int
    sparsity: float
    label_noise: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be >= 1")
        if not 0.0 < self.sparsity <= 1.0:
            raise ValueError(f"sparsity must be in (0, 1], got {self.sparsity}")
        if self.sparsity * self.d < 1.0:
            raise ValueError(
                f"sparsity {self.sparsity} with d={self.d} leaves no nonzero entries"
            )
        if self.label_noise < 0:
            raise ValueError("label noise must be >= 0")

    @property
    def nnz(self) -> int:
        return int(math.ceil(self.sparsity * self.d))

    def dataset_id(self, task: Task) -> str:
        return (
            f"syn-{task.value}-n{self.n}-d{self.d}-s{self.sparsity:g}-seed{self.seed}"
        )


def gen_synthetic(spec: DatasetSpec, task: Task):
    """Sparse synthetic regression data with a known ground-truth weight vector.

    Exactly ceil(s*d) entries of the truth and of every record are nonzero.
    Linear labels are the L1-normalized margin plus bounded uniform noise,
    clamped to [-1, 1]; logistic labels are Bernoulli draws of a sigmoid
    whose slope is set from the margin spread so classes are learnable and
    roughly balanced.
    """
    rng = NoiseStream(spec.seed).substream(DOMAIN_DATA)._gen
    nnz = spec.nnz
    w_star = np.zeros(spec.d)
    support = rng.choice(spec.d, size=nnz, replace=False)
    w_star[support] = rng.uniform(-1.0, 1.0, size=nnz)

    X = np.zeros((spec.n, spec.d))
    if nnz == spec.d:
        X[:] = rng.uniform(-1.0, 1.0, size=(spec.n, spec.d))
    else:
        order = np.argsort(rng.random((spec.n, spec.d)), axis=1)[:, :nnz]
        values = rng.uniform(-1.0, 1.0, size=(spec.n, nnz))
        rows = np.repeat(np.arange(spec.n), nnz)
        X[rows, order.ravel()] = values.ravel()

    margin = X @ w_star / max(np.abs(w_star).sum(), 1e-12)
    if task is Task.LINEAR:
        noise = rng.uniform(-spec.label_noise, spec.label_noise, size=spec.n)
        y = np.clip(margin + noise, -1.0, 1.0)
    else:
        rms = math.sqrt(float(np.mean(margin**2))) or 1.0
        y = (rng.random(spec.n) < sigmoid(4.0 * margin / rms)).astype(np.float64)
    return Dataset(X, y, task), w_star


def save_csv(dataset: Dataset, path, w_star=None, spec: DatasetSpec = None):
    """Write a dataset plus a sidecar describing it (domain marker included)."""
    path = str(path)
    header = [f"f{a}" for a in range(dataset.d)] + ["label"]
    table = np.column_stack([dataset.X, dataset.y])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, table, delimiter=",", fmt="%.17g")
    meta = {
        "n": dataset.n,
        "d": dataset.d,
        "task": dataset.task.value,
        "domain": "pm1",
        "label_column": "label",
    }
    if spec is not None:
        meta["spec"] = {
            "n": spec.n,
            "d": spec.d,
            "sparsity": spec.sparsity,
            "label_noise": spec.label_noise,
            "seed": spec.seed,
        }
    if w_star is not None:
        meta["w_star"] = [float(v) for v in w_star]
    with open(path + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    return meta


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("empty file") from None
        rows = [row for row in reader if row]
    return [h.strip() for h in header], rows


def ingest_csv(path, label_column: str = "label", task: Task = Task.LINEAR) -> Dataset:
    """Load a CSV into the model's input domain.

    Numeric columns are min-max normalized to [-1, 1] (constant columns go
    to 0 with a warning); non-numeric columns are one-hot encoded; rows with
    missing values are dropped.  Linear labels are normalized to [-1, 1] and
    logistic labels mapped onto {0, 1}.  A sidecar written by `save_csv`
    marks data as already in-domain, in which case values are validated but
    not renormalized, so generated files round-trip unchanged.
    """
    path = str(path)
    header, rows = _read_rows(path)
    if label_column not in header:
        raise IngestError(f"label column {label_column!r} not found in header {header}")
    label_pos = header.index(label_column)

    prenormalized = False
    try:
        with open(path + ".meta.json") as fh:
            prenormalized = json.load(fh).get("domain") == "pm1"
    except (OSError, ValueError):
        pass

    # Column typing: numeric if every non-missing cell parses as a float.
    ncols = len(header)
    numeric = [True] * ncols
    kept_rows = []
    for ridx, row in enumerate(rows):
        if len(row) != ncols:
            raise IngestError(f"row {ridx + 2} has {len(row)} cells, expected {ncols}", row=ridx + 2)
        cells = [c.strip() for c in row]
        if any(c.lower() in MISSING_TOKENS for c in cells):
            continue
        kept_rows.append(cells)
        for cidx, cell in enumerate(cells):
            if numeric[cidx]:
                try:
                    float(cell)
                except ValueError:
                    numeric[cidx] = False
    if not kept_rows:
        raise IngestError("no complete rows to ingest")
    if not numeric[label_pos] and task is Task.LINEAR:
        raise IngestError(f"label column {label_column!r} is not numeric", column=label_column)

    feature_names = []
    feature_cols = []
    encoding = {}
    dropped = len(rows) - len(kept_rows)
    for cidx in range(ncols):
        name = header[cidx]
        raw = [r[cidx] for r in kept_rows]
        if cidx == label_pos:
            continue
        if numeric[cidx]:
            col = np.array([float(v) for v in raw])
            if prenormalized:
                if np.any(np.abs(col) > 1.0):
                    raise IngestError(f"column {name!r} outside [-1, 1] despite domain marker", column=name)
                encoding[name] = {"kind": "numeric", "min": -1.0, "max": 1.0}
            else:
                lo, hi = float(col.min()), float(col.max())
                if lo == hi:
                    warnings.warn(f"column {name!r} is constant; normalized to 0")
                    col = np.zeros_like(col)
                else:
                    col = 2.0 * (col - lo) / (hi - lo) - 1.0
                encoding[name] = {"kind": "numeric", "min": lo, "max": hi}
            feature_names.append(name)
            feature_cols.append(col)
        else:
            cats = sorted(set(raw))
            if len(cats) > MAX_CATEGORIES:
                first_bad = next(i for i, r in enumerate(kept_rows) if r[cidx] == cats[-1])
                raise IngestError(
                    f"column {name!r} has {len(cats)} categories (limit {MAX_CATEGORIES})",
                    row=first_bad + 2,
                    column=name,
                )
            encoding[name] = {"kind": "categorical", "categories": cats}
            for cat in cats:
                feature_names.append(f"{name}={cat}")
                feature_cols.append(
                    np.array([1.0 if v == cat else -1.0 for v in raw])
                )

    X = np.column_stack(feature_cols) if feature_cols else np.zeros((len(kept_rows), 0))
    raw_label = [r[label_pos] for r in kept_rows]
    if task is Task.LINEAR:
        yv = np.array([float(v) for v in raw_label])
        if prenormalized:
            label_info = {"kind": "numeric", "min": -1.0, "max": 1.0}
        else:
            lo, hi = float(yv.min()), float(yv.max())
            if lo == hi:
                warnings.warn(f"label column {label_column!r} is constant; normalized to 0")
                yv = np.zeros_like(yv)
            else:
                yv = 2.0 * (yv - lo) / (hi - lo) - 1.0
            label_info = {"kind": "numeric", "min": lo, "max": hi}
    else:
        values = sorted(set(raw_label))
        if values == ["0", "1"] or values in (["0"], ["1"]):
            yv = np.array([float(v) for v in raw_label])
            label_info = {"kind": "binary", "categories": values}
        elif len(values) == 2:
            yv = np.array([float(values.index(v)) for v in raw_label])
            label_info = {"kind": "binary", "categories": values}
        else:
            raise IngestError(
                f"logistic label column {label_column!r} has {len(values)} distinct values, need 2",
                column=label_column,
            )

    meta = {
        "source": path,
        "n": len(kept_rows),
        "d": X.shape[1],
        "dropped_rows": dropped,
        "label_column": label_column,
        "label": label_info,
        "encoding": encoding,
    }
    return Dataset(X, yv, task, source_meta=meta)


def vsplit(d, K: int, scheme: str = "even", explicit=None) -> VerticalPartition:
    """Assign features to K parties; party 1 gets the first block and the label."""
    d = int(d)
    if not 1 <= K <= d:
        raise ValueError(f"need 1 <= K <= d, got K={K}, d={d}")
    if scheme == "even":
        blocks = np.array_split(np.arange(d), K)
        return VerticalPartition({k + 1: tuple(b.tolist()) for k, b in enumerate(blocks)})
    if scheme == "explicit":
        if explicit is None or len(explicit) != K:
            raise ValueError("explicit scheme needs one feature set per party")
        return VerticalPartition({k + 1: tuple(feats) for k, feats in enumerate(explicit)})
    raise ValueError(f"unknown split scheme {scheme!r}")


def split_train_test(dataset: Dataset, ratio: float = 0.8, seed: int = 0):
    if dataset.n < 5:
        raise ValueError("need at least 5 records to split")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    rng = NoiseStream(seed).substream(DOMAIN_SPLIT)._gen
    perm = rng.permutation(dataset.n)
    cut = int(dataset.n * ratio)
    return dataset.subset(perm[:cut]), dataset.subset(perm[cut:])


def partition_columns(dataset: Dataset, partition: VerticalPartition) -> dict:
    """Per-party views: contiguous copies of each party's feature columns."""
    if partition.d != dataset.d:
        raise ValueError("partition dimension does not match dataset")
    return {
        k: np.ascontiguousarray(dataset.X[:, list(feats)])
        for k, feats in partition.party_features.items()
    }
