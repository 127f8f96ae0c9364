"""Random Fourier Feature encodings and pooled per-sample signatures.

Cells are projected with a shared Gaussian random matrix, mapped through
cos/sin and pooled column-wise (median or max) into one d-dimensional
signature per sample. Inner products of the per-cell features approximate a
Gaussian kernel, which the tests exploit as an independent oracle. One
projection is shared across a cohort so signature distances are comparable
between samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .data import CellMatrix, CohortDataset
from .errors import DataError
from .seeding import STREAM_PROJECTION, rng_for


@dataclass(frozen=True)
class RffConfig:
    d: int = 2048
    gamma: float = 1.0
    pooling: str = "median"
    seed: int = 0

    def __post_init__(self):
        if self.d < 2 or self.d % 2 != 0:
            raise DataError(f"signature dimension d must be even and >= 2, got {self.d}")
        if self.gamma <= 0:
            raise DataError(f"gamma must be positive, got {self.gamma}")
        if self.pooling not in ("median", "max"):
            raise DataError(f"pooling must be 'median' or 'max', got {self.pooling!r}")


@dataclass(frozen=True)
class RffProjection:
    P: np.ndarray  # (n, d/2)
    gamma: float
    seed: int

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def n_markers(self) -> int:
        return self.P.shape[0]

    @property
    def d(self) -> int:
        return 2 * self.P.shape[1]


@dataclass(frozen=True)
class SampleSignature:
    sample_id: str
    S: np.ndarray  # (d,)

    def __post_init__(self):
        S = np.asarray(self.S, dtype=np.float64)
        S.setflags(write=False)
        object.__setattr__(self, "S", S)


def make_projection(n: int, cfg: RffConfig) -> RffProjection:
    """Draw the shared n x d/2 projection, entries Normal(0, 1/gamma)."""
    if n < 1:
        raise DataError(f"need at least one marker, got n={n}")
    rng = rng_for(cfg.seed, STREAM_PROJECTION)
    P = rng.normal(0.0, np.sqrt(1.0 / cfg.gamma), size=(n, cfg.d // 2))
    return RffProjection(P=P, gamma=cfg.gamma, seed=cfg.seed)


def transform_cells(matrix: CellMatrix, proj: RffProjection) -> np.ndarray:
    """Per-cell feature rows sqrt(2/K)*[cos, sin] of the projected cells."""
    if matrix.n_markers != proj.n_markers:
        raise DataError(
            f"{matrix.sample_id}: {matrix.n_markers} markers but projection "
            f"expects {proj.n_markers}"
        )
    return backend.kernels().rff_map(matrix.values, proj.P)


def pool_signature(Z: np.ndarray, pooling: str, sample_id: str) -> SampleSignature:
    """Collapse per-cell features to one vector by column median or max."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 1:
        raise DataError(f"{sample_id}: need a non-empty 2-D feature matrix")
    if pooling == "median":
        S = np.median(Z, axis=0)
    elif pooling == "max":
        S = np.max(Z, axis=0)
    else:
        raise DataError(f"pooling must be 'median' or 'max', got {pooling!r}")
    return SampleSignature(sample_id=sample_id, S=S)


def signature_distance(a: SampleSignature, b: SampleSignature) -> float:
    """Euclidean distance between two signatures."""
    if a.S.shape != b.S.shape:
        raise DataError(
            f"signature length mismatch: {a.S.shape[0]} vs {b.S.shape[0]}"
        )
    return float(np.sqrt(np.sum((a.S - b.S) ** 2)))


def compute_signatures(cohort: CohortDataset, cfg: RffConfig) -> list[SampleSignature]:
    """Signatures for every sample under one shared projection."""
    proj = make_projection(len(cohort.marker_panel), cfg)
    return [
        pool_signature(transform_cells(mat, proj), cfg.pooling, mat.sample_id)
        for mat, _ in cohort.samples
    ]


def write_signatures(sigs: list[SampleSignature], path) -> None:
    import csv
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = sigs[0].S.shape[0] if sigs else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", *[f"s{i}" for i in range(d)]])
        for sig in sigs:
            writer.writerow([sig.sample_id, *[repr(float(v)) for v in sig.S]])


def read_signatures(path) -> list[SampleSignature]:
    import csv
    from pathlib import Path

    path = Path(path)
    if not path.is_file():
        raise DataError(f"signatures file not found: {path}")
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "sample_id":
            raise DataError(f"{path}: expected a signatures CSV header")
        for row in reader:
            out.append(
                SampleSignature(row[0], np.array([float(v) for v in row[1:]]))
            )
    return out
