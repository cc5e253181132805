"""Domain types for survival cohorts, donor weights and survival curves.

Cohorts are stored column-wise (numpy arrays) because every downstream
computation is vectorised; ``Cohort.subjects`` materialises the per-row
``Subject`` view when one is needed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

SUPPORT_EPSILON = 1e-6
SIMPLEX_TOL = 1e-8


class SchemaError(ValueError):
    """A required column is missing from the input file."""


class CohortParseError(ValueError):
    """A cell could not be parsed as a number."""


class CohortValidationError(ValueError):
    """Parsed values violate a cohort invariant (e.g. negative time)."""


@dataclass(frozen=True)
class Subject:
    id: str
    covariates: np.ndarray
    time: float
    event: bool
    treated: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.time) and self.time >= 0):
            raise CohortValidationError(f"subject {self.id}: time must be finite and >= 0, got {self.time}")
        if np.any(~np.isfinite(self.covariates)):
            raise CohortValidationError(f"subject {self.id}: missing covariate values")


@dataclass(frozen=True)
class Normalization:
    """Per-feature (mean, sd) pairs fitted on a reference pool."""

    mean: np.ndarray
    sd: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.sd

    def invert(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.sd + self.mean


@dataclass(frozen=True, eq=False)
class Cohort:
    """Immutable, validated collection of subjects sharing one covariate schema."""

    ids: tuple
    X: np.ndarray
    time: np.ndarray
    event: np.ndarray
    treated: np.ndarray
    feature_names: tuple
    normalization: Normalization | None = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        n = len(self.ids)
        if X.shape[0] != n and n == 0:
            X = X.reshape(0, len(self.feature_names))
        time = np.asarray(self.time, dtype=float).reshape(-1)
        event = np.asarray(self.event, dtype=bool).reshape(-1)
        treated = np.asarray(self.treated, dtype=bool).reshape(-1)
        if not (X.shape[0] == time.size == event.size == treated.size == n):
            raise CohortValidationError("cohort columns have inconsistent lengths")
        if X.shape[1] != len(self.feature_names):
            raise CohortValidationError(
                f"covariate dimension {X.shape[1]} != {len(self.feature_names)} feature names"
            )
        if not np.all(np.isfinite(X)):
            raise CohortValidationError("covariates contain missing or non-finite values")
        bad = np.flatnonzero(~np.isfinite(time) | (time < 0))
        if bad.size:
            raise CohortValidationError(f"subject {self.ids[bad[0]]}: time must be finite and >= 0")
        for arr in (X, time, event, treated):
            arr.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "treated", treated)

    @classmethod
    def from_subjects(cls, subjects: Sequence[Subject], feature_names: Sequence[str]) -> "Cohort":
        d = len(feature_names)
        for s in subjects:
            if len(s.covariates) != d:
                raise CohortValidationError(f"subject {s.id} has {len(s.covariates)} covariates, expected {d}")
        X = np.array([s.covariates for s in subjects], dtype=float).reshape(len(subjects), d)
        return cls(
            ids=tuple(s.id for s in subjects),
            X=X,
            time=[s.time for s in subjects],
            event=[s.event for s in subjects],
            treated=[s.treated for s in subjects],
            feature_names=tuple(feature_names),
        )

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def subjects(self) -> list[Subject]:
        return [
            Subject(self.ids[i], self.X[i].copy(), float(self.time[i]), bool(self.event[i]), bool(self.treated[i]))
            for i in range(len(self))
        ]

    def subset(self, mask_or_index) -> "Cohort":
        idx = np.asarray(mask_or_index)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Cohort(
            ids=tuple(self.ids[i] for i in idx),
            X=self.X[idx],
            time=self.time[idx],
            event=self.event[idx],
            treated=self.treated[idx],
            feature_names=self.feature_names,
            normalization=self.normalization,
        )

    def with_covariates(self, X: np.ndarray, normalization: Normalization | None) -> "Cohort":
        return Cohort(self.ids, X, self.time, self.event, self.treated, self.feature_names, normalization)


def _column_stats(X: np.ndarray) -> tuple[Normalization, np.ndarray]:
    mean = X.mean(axis=0)
    sd = X.std(axis=0)  # population SD (ddof=0)
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(mean))
    return Normalization(mean=mean, sd=np.where(const, 1.0, sd)), const


def normalize_covariates(cohort: Cohort, reference: Cohort | None = None) -> Cohort:
    """Z-score covariates with population-SD statistics.

    Statistics are fitted on ``reference`` (default: the cohort itself), so a
    treated group can be scaled with control-pool statistics. Constant columns
    map to zero and record SD = 1.
    """
    ref = cohort if reference is None else reference
    if len(ref) == 0:
        raise ValueError("cannot normalize an empty cohort")
    if ref.feature_names != cohort.feature_names:
        raise CohortValidationError("reference cohort has a different covariate schema")
    stats, const = _column_stats(ref.X)
    Z = stats.apply(cohort.X)
    Z[:, const] = 0.0
    return cohort.with_covariates(Z, stats)


def normalize_pair(controls: Cohort, treated: Cohort) -> tuple[Cohort, Cohort]:
    """Normalize both groups with statistics fitted on ``controls`` only."""
    return normalize_covariates(controls), normalize_covariates(treated, reference=controls)


def pairwise_distance(a, b) -> float:
    """Mean squared coordinate difference between two covariate vectors."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size != b.size:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("vectors must have dimension >= 1")
    return float(np.mean((a - b) ** 2))


def pairwise_distance_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``pairwise_distance`` for every row pair; shape (len(A), len(B))."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    diff = A[:, None, :] - B[None, :, :]
    return np.mean(diff * diff, axis=2)


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Simplex-constrained donor weights for one target.

    ``converged``/``iterations``/``objective`` are solver diagnostics; they are
    left at their defaults for weights built by hand.
    """

    weights: np.ndarray
    donor_ids: tuple = ()
    converged: bool = True
    iterations: int = 0
    objective: float = float("nan")
    l2_sq: float = field(init=False)
    support: np.ndarray = field(init=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        m = w.size
        if m == 0:
            raise ValueError("weight vector is empty")
        if not self.donor_ids:
            object.__setattr__(self, "donor_ids", tuple(range(m)))
        elif len(self.donor_ids) != m:
            raise ValueError("donor_ids length does not match weights")
        else:
            object.__setattr__(self, "donor_ids", tuple(self.donor_ids))
        if np.any(~np.isfinite(w)) or w.min() < -SIMPLEX_TOL or w.max() > 1 + SIMPLEX_TOL:
            raise ValueError("weights must lie in [0, 1]")
        if abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"weights must sum to 1 (got {w.sum():.12g})")
        w = np.clip(w, 0.0, 1.0)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "l2_sq", float(w @ w))
        support = np.flatnonzero(w > SUPPORT_EPSILON)
        support.setflags(write=False)
        object.__setattr__(self, "support", support)

    def __len__(self) -> int:
        return self.weights.size

    @classmethod
    def one_hot(cls, m: int, k: int, donor_ids: Sequence = ()) -> "WeightVector":
        w = np.zeros(m)
        w[k] = 1.0
        return cls(w, tuple(donor_ids))

    @classmethod
    def uniform(cls, m: int, donor_ids: Sequence = ()) -> "WeightVector":
        return cls(np.full(m, 1.0 / m), tuple(donor_ids))

    def top(self, k: int) -> list[tuple]:
        """The ``k`` largest weights as (donor_id, weight), ties by donor index."""
        order = np.lexsort((np.arange(len(self)), -self.weights))[:k]
        return [(self.donor_ids[i], float(self.weights[i])) for i in order if self.weights[i] > 0]


@dataclass(frozen=True)
class SyntheticUnit:
    target_id: object
    time: float
    event: bool
    scale: str
    weights: WeightVector
    match_distance: float

    def __post_init__(self):
        if self.scale not in ("natural", "log"):
            raise ValueError(f"unknown scale {self.scale!r}")
        if not self.time >= 0:
            raise ValueError("synthetic time must be >= 0")
        if not self.match_distance >= 0:
            raise ValueError("match distance must be >= 0")


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    """Right-continuous step function; ``survival[i]`` holds on [times[i], times[i+1])."""

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.survival, dtype=float)
        r = np.asarray(self.at_risk, dtype=int)
        e = np.asarray(self.events, dtype=int)
        if not (t.size == s.size == r.size == e.size):
            raise ValueError("survival curve arrays must have equal length")
        if t.size and (np.any(np.diff(t) <= 0) or t[0] < 0):
            raise ValueError("times must be strictly increasing and non-negative")
        if s.size and (s[0] > 1 + 1e-12 or np.any(np.diff(s) > 1e-12) or s.min() < -1e-12):
            raise ValueError("survival must be non-increasing within [0, 1]")
        for name, arr in (("times", t), ("survival", s), ("at_risk", r), ("events", e)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __call__(self, t) -> np.ndarray:
        """Evaluate S(t); S = 1 before the first time point."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        padded = np.concatenate([[1.0], self.survival])
        return padded[idx + 1]

    def to_rows(self) -> list[tuple]:
        return [
            (float(t), float(s), int(r), int(e))
            for t, s, r, e in zip(self.times, self.survival, self.at_risk, self.events)
        ]


# --- CSV ingestion ---------------------------------------------------------

TRUE_STRINGS = {"1", "true", "t", "yes", "y", "1.0"}
FALSE_STRINGS = {"0", "false", "f", "no", "n", "0.0"}


@dataclass(frozen=True)
class CsvSchema:
    """Name-based column mapping for cohort CSV files.

    ``time_scale`` multiplies the raw time column (e.g. 1/30.4375 converts days
    to months). ``treatment`` may be None for files without a treatment flag.
    """

    covariates: tuple
    time: str = "time"
    event: str = "event"
    treatment: str | None = "treat"
    id: str | None = None
    time_scale: float = 1.0

    @classmethod
    def from_mapping(cls, m: Mapping) -> "CsvSchema":
        return cls(
            covariates=tuple(m["covariates"]),
            time=m.get("time", "time"),
            event=m.get("event", "event"),
            treatment=m.get("treatment", "treat"),
            id=m.get("id"),
            time_scale=float(m.get("time_scale", 1.0)),
        )

    def to_mapping(self) -> dict:
        return {
            "covariates": list(self.covariates),
            "time": self.time,
            "event": self.event,
            "treatment": self.treatment,
            "id": self.id,
            "time_scale": self.time_scale,
        }


# Rotterdam tumour-bank columns as exported from R `survival`; `size` is a
# factor there and must be encoded numerically before it can be added.
ROTTERDAM_SCHEMA = CsvSchema(
    covariates=("age", "meno", "grade", "nodes", "pgr", "er"),
    time="dtime",
    event="death",
    treatment="chemo",
    id="pid",
    time_scale=12.0 / 365.25,
)


def _parse_bool(raw: str, column: str, row: int) -> bool:
    v = raw.strip().lower()
    if v in TRUE_STRINGS:
        return True
    if v in FALSE_STRINGS:
        return False
    raise CohortParseError(f"row {row}: column {column!r} is not a 0/1 flag: {raw!r}")


def _parse_float(raw: str, column: str, row: int) -> float:
    v = raw.strip()
    if v == "" or v.lower() in ("na", "nan"):
        raise CohortParseError(f"row {row}: missing value in column {column!r}")
    try:
        x = float(v)
    except ValueError:
        raise CohortParseError(f"row {row}: non-numeric value {raw!r} in column {column!r}") from None
    if not math.isfinite(x):
        raise CohortParseError(f"row {row}: non-finite value in column {column!r}")
    return x


def load_cohort_csv(path, schema: CsvSchema | Mapping) -> Cohort:
    """Parse a header-first CSV into a Cohort.

    Row numbers in error messages count the header as row 1.
    """
    if not isinstance(schema, CsvSchema):
        schema = CsvSchema.from_mapping(schema)
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = list(schema.covariates) + [schema.time, schema.event]
        if schema.treatment is not None:
            needed.append(schema.treatment)
        if schema.id is not None:
            needed.append(schema.id)
        missing = [c for c in needed if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")

        ids, X, times, events, treated = [], [], [], [], []
        for i, rec in enumerate(reader):
            row = i + 2
            X.append([_parse_float(rec[c], c, row) for c in schema.covariates])
            t = _parse_float(rec[schema.time], schema.time, row) * schema.time_scale
            if t < 0:
                raise CohortValidationError(f"row {row}: negative time {t}")
            times.append(t)
            events.append(_parse_bool(rec[schema.event], schema.event, row))
            treated.append(
                _parse_bool(rec[schema.treatment], schema.treatment, row) if schema.treatment else False
            )
            ids.append(rec[schema.id].strip() if schema.id else str(i))

    d = len(schema.covariates)
    return Cohort(
        ids=tuple(ids),
        X=np.array(X, dtype=float).reshape(len(ids), d),
        time=times,
        event=events,
        treated=treated,
        feature_names=schema.covariates,
    )


def write_cohort_csv(cohort: Cohort, path, schema: CsvSchema | None = None) -> None:
    schema = schema or CsvSchema(covariates=cohort.feature_names, id="id")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ([schema.id] if schema.id else []) + list(schema.covariates) + [schema.time, schema.event]
        if schema.treatment:
            cols.append(schema.treatment)
        w.writerow(cols)
        for i in range(len(cohort)):
            row = ([cohort.ids[i]] if schema.id else []) + [repr(float(v)) for v in cohort.X[i]]
            row += [repr(float(cohort.time[i]) / schema.time_scale), int(cohort.event[i])]
            if schema.treatment:
                row.append(int(cohort.treated[i]))
            w.writerow(row)
