"""Synthetic multi-sample cohorts with known ground truth.

Outcome-0 samples draw every cell from a standard normal; outcome-1 samples
draw a configurable fraction of cells from a normal shifted by effect_size
along the first ceil(n_markers/4) markers, mimicking an outcome-associated
subpopulation. A binary covariate agrees with the outcome with probability
phi, so the covariate-outcome dependency is controllable. Cohorts can be
written as standard cells/manifest CSVs and flow through the same pipeline
as real data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    CellMatrix,
    CohortDataset,
    CovariateValue,
    SampleRecord,
    write_cell_matrix,
    write_manifest,
)
from .errors import DataError
from .seeding import STREAM_SYNTH, derive_seed


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 40
    cells_per_sample: int = 500
    n_markers: int = 10
    effect_size: float = 1.0
    signal_fraction: float = 0.5
    covariate_alignment: float = 0.9  # P(covariate == outcome)
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 2 or self.cells_per_sample < 1 or self.n_markers < 1:
            raise DataError("counts must be positive (and n_samples >= 2)")
        if not 0.0 <= self.signal_fraction <= 1.0:
            raise DataError("signal_fraction must be in [0,1]")
        if not 0.0 <= self.covariate_alignment <= 1.0:
            raise DataError("covariate_alignment must be in [0,1]")


def _sample_cells(rng, m, n, effect_size, signal_fraction, shifted_markers):
    cells = rng.standard_normal((m, n))
    n_signal = math.ceil(signal_fraction * m)
    if n_signal > 0 and effect_size != 0.0:
        cells[:n_signal, :shifted_markers] += effect_size
    return cells


def generate_cohort(cfg: SynthConfig, covariate_name: str = "cov") -> CohortDataset:
    """Balanced two-class cohort with one alignment-controlled covariate."""
    n1 = cfg.n_samples // 2
    outcomes = [0] * (cfg.n_samples - n1) + [1] * n1
    shifted = math.ceil(cfg.n_markers / 4)
    markers = tuple(f"m{i:02d}" for i in range(cfg.n_markers))

    pairs = []
    width = len(str(cfg.n_samples - 1))
    for idx, y in enumerate(outcomes):
        sid = f"synth{idx:0{width}d}"
        rng = np.random.default_rng(derive_seed(cfg.seed, STREAM_SYNTH, idx))
        cells = _sample_cells(
            rng,
            cfg.cells_per_sample,
            cfg.n_markers,
            cfg.effect_size if y == 1 else 0.0,
            cfg.signal_fraction if y == 1 else 0.0,
            shifted,
        )
        mat = CellMatrix(sid, markers, cells)
        rec = SampleRecord(sid, y, {})
        pairs.append((mat, rec))
    cohort = CohortDataset(tuple(pairs), markers)
    return attach_covariate(
        cohort, covariate_name, cfg.covariate_alignment, cfg.seed
    )


def attach_covariate(
    cohort: CohortDataset, name: str, alignment: float, seed: int
) -> CohortDataset:
    """Add a binary covariate equal to the outcome with probability
    ``alignment``, flipped otherwise. Cells are untouched, so cohorts with
    covariates of different alignment are directly comparable."""
    # the stream is keyed by the covariate name so different covariates on
    # one cohort draw independent agreement coins
    name_key = sum(ord(c) for c in name) + 1000 * len(name)
    pairs = []
    for idx, (mat, rec) in enumerate(cohort.samples):
        rng = np.random.default_rng(derive_seed(seed, STREAM_SYNTH, name_key, idx))
        agree = rng.random() < alignment
        value = rec.outcome if agree else 1 - rec.outcome
        covs = dict(rec.covariates)
        covs[name] = CovariateValue(kind="binary", raw=float(value))
        pairs.append((mat, SampleRecord(rec.sample_id, rec.outcome, covs,
                                        cells_path=rec.cells_path)))
    return CohortDataset(tuple(pairs), cohort.marker_panel)


def verify_dependency(cohort: CohortDataset, covariate: str) -> float:
    """Brute-force recount of the covariate dependency statistic.

    Independent of evaluation.covariate_dependency: walks the samples with
    plain integer counters.
    """
    d0 = d1 = d2 = d3 = 0
    for _, rec in cohort.samples:
        cov = rec.covariates[covariate]
        c = cov.binarized
        if c is None:
            raise DataError(f"covariate {covariate!r} not binarized")
        if rec.outcome == 0 and c == 0:
            d0 += 1
        elif rec.outcome == 0 and c == 1:
            d1 += 1
        elif rec.outcome == 1 and c == 0:
            d2 += 1
        else:
            d3 += 1
    return float(abs((d1 + d2) - (d0 + d3)))


def write_cohort(cohort: CohortDataset, out_dir) -> Path:
    """Write cells CSVs plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    cells_dir = out_dir / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    rel_paths = {}
    for mat, rec in cohort.samples:
        rel = f"cells/{rec.sample_id}.csv"
        write_cell_matrix(mat, out_dir / rel)
        rel_paths[rec.sample_id] = rel
    manifest = out_dir / "manifest.csv"
    write_manifest(cohort, manifest, rel_paths)
    return manifest
