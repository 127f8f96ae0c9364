"""Cohort ingestion: cell matrices, clinical manifests, covariate
binarization, fixed-size cell subsampling and stratified splits.

File formats
------------
cells CSV: header row of marker names, one row per cell, decimal floats.
manifest CSV: columns ``sample_id,cells_path,outcome,<covariate...>`` with
outcome in {0,1}. Covariate columns whose values are all 0/1 are typed
binary, anything else continuous. ``cells_path`` is resolved relative to
the manifest's directory and is only opened when the cohort is assembled,
so a manifest with a missing path still parses.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError
from .seeding import STREAM_SPLIT, derive_seed


@dataclass(frozen=True)
class CellMatrix:
    """One sample's cells x markers expression matrix."""

    sample_id: str
    markers: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise DataError(f"{self.sample_id}: cell matrix must be 2-D")
        m, n = vals.shape
        if m < 1 or n < 1:
            raise DataError(f"{self.sample_id}: cell matrix must be at least 1x1")
        if n != len(self.markers):
            raise DataError(
                f"{self.sample_id}: {n} columns but {len(self.markers)} marker names"
            )
        if len(set(self.markers)) != len(self.markers):
            raise DataError(f"{self.sample_id}: duplicate marker names")
        if not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(vals))[0]
            raise DataError(
                f"{self.sample_id}: non-finite value at cell row {bad[0] + 1}, "
                f"column {bad[1] + 1}"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "markers", tuple(self.markers))

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    @property
    def n_markers(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CovariateValue:
    """A per-sample covariate, binary as measured or binarized from a rule."""

    kind: str  # "binary" | "continuous"
    raw: float
    binarized: int | None = None
    rule: str | None = None

    def __post_init__(self):
        if self.kind not in ("binary", "continuous"):
            raise DataError(f"unknown covariate kind {self.kind!r}")
        if self.kind == "binary":
            if self.raw not in (0.0, 1.0):
                raise DataError(f"binary covariate has raw value {self.raw!r}")
            object.__setattr__(self, "binarized", int(self.raw))
        if self.binarized is not None and self.binarized not in (0, 1):
            raise DataError(f"binarized value must be 0/1, got {self.binarized!r}")


@dataclass(frozen=True)
class SampleRecord:
    """Clinical metadata for one sample."""

    sample_id: str
    outcome: int
    covariates: dict[str, CovariateValue] = field(default_factory=dict)
    cells_path: str | None = None

    def __post_init__(self):
        if self.outcome not in (0, 1):
            raise DataError(
                f"{self.sample_id}: outcome must be 0 or 1, got {self.outcome!r}"
            )


@dataclass(frozen=True)
class CohortDataset:
    """Aligned cell matrices and sample records sharing one marker panel."""

    samples: tuple[tuple[CellMatrix, SampleRecord], ...]
    marker_panel: tuple[str, ...]

    def __post_init__(self):
        ids = [rec.sample_id for _, rec in self.samples]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate sample_id in cohort")
        for mat, rec in self.samples:
            if mat.sample_id != rec.sample_id:
                raise DataError(
                    f"matrix/record id mismatch: {mat.sample_id} vs {rec.sample_id}"
                )
            if mat.markers != tuple(self.marker_panel):
                raise DataError(f"{mat.sample_id}: marker panel mismatch")
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "marker_panel", tuple(self.marker_panel))

    @property
    def sample_ids(self) -> tuple[str, ...]:
        return tuple(rec.sample_id for _, rec in self.samples)

    def record(self, sample_id: str) -> SampleRecord:
        for _, rec in self.samples:
            if rec.sample_id == sample_id:
                return rec
        raise KeyError(sample_id)

    def matrix(self, sample_id: str) -> CellMatrix:
        for mat, _ in self.samples:
            if mat.sample_id == sample_id:
                return mat
        raise KeyError(sample_id)

    def restrict(self, ids) -> "CohortDataset":
        keep = set(ids)
        pairs = tuple(p for p in self.samples if p[1].sample_id in keep)
        if len(pairs) != len(keep):
            missing = keep - {p[1].sample_id for p in pairs}
            raise DataError(f"unknown sample ids: {sorted(missing)}")
        return CohortDataset(pairs, self.marker_panel)


@dataclass(frozen=True)
class SplitPlan:
    """One train/test partition of a cohort."""

    trial_id: int
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int

    def __post_init__(self):
        if set(self.train_ids) & set(self.test_ids):
            raise DataError(f"trial {self.trial_id}: train/test overlap")
        object.__setattr__(self, "train_ids", tuple(self.train_ids))
        object.__setattr__(self, "test_ids", tuple(self.test_ids))


def load_cell_matrix(path, sample_id: str) -> CellMatrix:
    """Parse a cells CSV into a CellMatrix, reporting row/column locations."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"cells file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        markers = [h.strip() for h in header]
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(markers):
                raise DataError(
                    f"{path}: row {line_no} has {len(row)} fields, "
                    f"expected {len(markers)}"
                )
            parsed = []
            for col, tok in enumerate(row, start=1):
                try:
                    val = float(tok)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {tok!r} at row {line_no}, "
                        f"column {col}"
                    ) from None
                if not math.isfinite(val):
                    raise DataError(
                        f"{path}: non-finite value at row {line_no}, column {col}"
                    )
                parsed.append(val)
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: empty body (header only)")
    return CellMatrix(sample_id, tuple(markers), np.array(rows, dtype=np.float64))


def write_cell_matrix(matrix: CellMatrix, path) -> None:
    """Write a cells CSV at full precision (round-trips bit-exactly)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(matrix.markers)
        for row in matrix.values:
            writer.writerow([repr(float(v)) for v in row])


def load_manifest(path) -> list[SampleRecord]:
    """Parse a manifest CSV into SampleRecords (cell files are not opened)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for required in ("sample_id", "cells_path", "outcome"):
            if required not in cols:
                raise DataError(f"{path}: missing column {required!r}")
        cov_names = [c for c in cols if c not in ("sample_id", "cells_path", "outcome")]
        raw_rows = list(reader)
    if not raw_rows:
        raise DataError(f"{path}: manifest has no rows")

    seen = set()
    parsed = []
    for line_no, row in enumerate(raw_rows, start=2):
        sid = row["sample_id"].strip()
        if sid in seen:
            raise DataError(f"{path}: duplicate sample_id {sid!r} at row {line_no}")
        seen.add(sid)
        try:
            outcome = float(row["outcome"])
        except (TypeError, ValueError):
            raise DataError(
                f"{path}: non-numeric outcome {row['outcome']!r} at row {line_no}"
            ) from None
        if outcome not in (0.0, 1.0):
            raise DataError(
                f"{path}: outcome must be 0 or 1, got {row['outcome']!r} "
                f"at row {line_no}"
            )
        covs = {}
        for name in cov_names:
            try:
                covs[name] = float(row[name])
            except (TypeError, ValueError):
                raise DataError(
                    f"{path}: non-numeric covariate {name!r}={row[name]!r} "
                    f"at row {line_no}"
                ) from None
        parsed.append((sid, row["cells_path"].strip(), int(outcome), covs))

    # type each covariate column over the whole cohort
    kinds = {}
    for name in cov_names:
        vals = {covs[name] for _, _, _, covs in parsed}
        kinds[name] = "binary" if vals <= {0.0, 1.0} else "continuous"

    records = []
    for sid, cells_path, outcome, covs in parsed:
        cov_values = {
            name: CovariateValue(kind=kinds[name], raw=covs[name])
            for name in cov_names
        }
        records.append(
            SampleRecord(sid, outcome, cov_values, cells_path=cells_path)
        )
    return records


def load_cohort(manifest_path) -> CohortDataset:
    """Load a manifest plus every referenced cells file into a cohort."""
    manifest_path = Path(manifest_path)
    records = load_manifest(manifest_path)
    base = manifest_path.parent
    pairs = []
    panel = None
    for rec in records:
        if not rec.cells_path:
            raise DataError(f"{rec.sample_id}: manifest row has empty cells_path")
        cells = Path(rec.cells_path)
        if not cells.is_absolute():
            cells = base / cells
        mat = load_cell_matrix(cells, rec.sample_id)
        if panel is None:
            panel = mat.markers
        elif mat.markers != panel:
            raise DataError(
                f"{rec.sample_id}: marker panel differs from first sample"
            )
        pairs.append((mat, rec))
    return CohortDataset(tuple(pairs), panel)


def write_manifest(cohort: CohortDataset, path, cells_paths: dict[str, str]) -> None:
    """Write a manifest CSV; covariates are emitted as raw values."""
    path = Path(path)
    cov_names = sorted(
        {name for _, rec in cohort.samples for name in rec.covariates}
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "cells_path", "outcome", *cov_names])
        for _, rec in cohort.samples:
            row = [rec.sample_id, cells_paths[rec.sample_id], rec.outcome]
            for name in cov_names:
                cov = rec.covariates[name]
                raw = cov.raw
                row.append(int(raw) if raw == int(raw) else repr(raw))
            writer.writerow(row)


def _median(values) -> float:
    return float(np.median(np.asarray(values, dtype=np.float64)))


def binarize_covariate(cohort: CohortDataset, name: str, rule) -> CohortDataset:
    """Binarize a continuous covariate: 1 if raw > threshold else 0.

    ``rule`` is either the string ``"median"`` (threshold = cohort median of
    the raw values) or a numeric threshold. Binary covariates pass through
    unchanged. Ties go to class 0 (strict >). Missing covariates are a hard
    error; there is no imputation.
    """
    for _, rec in cohort.samples:
        if name not in rec.covariates:
            raise DataError(f"covariate {name!r} missing on sample {rec.sample_id}")

    kinds = {rec.covariates[name].kind for _, rec in cohort.samples}
    if kinds == {"binary"}:
        return cohort

    if rule == "median":
        threshold = _median([rec.covariates[name].raw for _, rec in cohort.samples])
        rule_desc = f"median>{threshold!r}"
    else:
        threshold = float(rule)
        rule_desc = f"threshold>{threshold!r}"

    new_pairs = []
    for mat, rec in cohort.samples:
        cov = rec.covariates[name]
        new_cov = CovariateValue(
            kind="continuous",
            raw=cov.raw,
            binarized=1 if cov.raw > threshold else 0,
            rule=rule_desc,
        )
        covs = dict(rec.covariates)
        covs[name] = new_cov
        new_pairs.append((mat, replace(rec, covariates=covs)))
    return CohortDataset(tuple(new_pairs), cohort.marker_panel)


def ensure_binarized(cohort: CohortDataset, name: str, rule=None) -> CohortDataset:
    """Binary covariates pass through; continuous ones require an explicit
    rule ('median' or a numeric threshold) and are binarized with it."""
    kinds = set()
    for _, rec in cohort.samples:
        if name not in rec.covariates:
            raise DataError(f"covariate {name!r} missing on {rec.sample_id}")
        kinds.add(rec.covariates[name].kind)
    if kinds == {"binary"}:
        return cohort
    if rule is None:
        raise DataError(
            f"covariate {name!r} is continuous; a binarization rule "
            f"('median' or a numeric threshold) is required"
        )
    parsed = rule if rule == "median" else float(rule)
    return binarize_covariate(cohort, name, parsed)


def binarized_value(record: SampleRecord, name: str) -> int:
    """The 0/1 value of a covariate, requiring explicit prior binarization."""
    if name not in record.covariates:
        raise DataError(f"covariate {name!r} missing on sample {record.sample_id}")
    cov = record.covariates[name]
    if cov.binarized is None:
        raise DataError(
            f"covariate {name!r} is continuous and not binarized; apply "
            f"binarize_covariate first"
        )
    return cov.binarized


def subsample_set(matrix: CellMatrix, set_size: int, seed: int) -> CellMatrix:
    """Draw a fixed-size cell set: without replacement when enough cells
    exist, with replacement otherwise. Deterministic given the seed."""
    if set_size < 1:
        raise DataError(f"set_size must be >= 1, got {set_size}")
    rng = np.random.default_rng(seed)
    m = matrix.n_cells
    idx = rng.choice(m, size=set_size, replace=m < set_size)
    return CellMatrix(matrix.sample_id, matrix.markers, matrix.values[idx])


def stratified_splits(
    cohort: CohortDataset, n_trials: int, test_fraction: float, seed: int
) -> list[SplitPlan]:
    """Randomized train/test partitions preserving outcome proportions.

    Each trial draws its own seed from the base seed; the per-class test
    count is round(test_fraction * class size) clamped so both sides keep
    at least one sample of each class.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test_fraction must be in (0,1), got {test_fraction}")
    if n_trials < 1:
        raise DataError(f"n_trials must be >= 1, got {n_trials}")
    by_class: dict[int, list[str]] = {0: [], 1: []}
    for _, rec in cohort.samples:
        by_class[rec.outcome].append(rec.sample_id)
    for label, ids in by_class.items():
        if len(ids) < 2:
            raise DataError(
                f"outcome class {label} has {len(ids)} sample(s); need >= 2"
            )

    plans = []
    for trial in range(n_trials):
        trial_seed = derive_seed(seed, STREAM_SPLIT, trial)
        rng = np.random.default_rng(trial_seed)
        train, test = [], []
        for label in (0, 1):
            ids = sorted(by_class[label])
            n_test = int(round(test_fraction * len(ids)))
            n_test = min(max(n_test, 1), len(ids) - 1)
            order = rng.permutation(len(ids))
            test.extend(ids[i] for i in order[:n_test])
            train.extend(ids[i] for i in order[n_test:])
        plans.append(
            SplitPlan(
                trial_id=trial,
                train_ids=tuple(sorted(train)),
                test_ids=tuple(sorted(test)),
                seed=trial_seed,
            )
        )
    return plans
