"""Covariate-consistent triplet mining over RFF signature distances.

A triplet is (reference, different, same): the reference shares the
binarized covariate value with "same" and differs from "different". Two
quantile thresholds control admission:

* the same-side cutoff keeps (reference, same) pairs whose distance is at
  most the H_s-th percentile of all same-covariate pair distances, and
* the margin cutoff keeps candidates whose margin D(ref, diff) -
  D(ref, same) is at least the (100 - H_d)-th percentile of all candidate
  margins, so a lower H_d keeps only the largest-margin (most stringent)
  triplets and the admissible set grows monotonically with both knobs.

Both thresholds are quantiles of the distances being filtered, so a global
rescaling of the signatures leaves the selection unchanged. Thresholds must
be computed on the training split only; callers pass a train-restricted
cohort.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import CohortDataset, binarized_value
from .errors import DataError
from .rff import SampleSignature

logger = logging.getLogger(__name__)

QUANTILE_GRID = (20, 40, 60, 80)


@dataclass(frozen=True)
class TripletConfig:
    covariate: str
    h_s: int = 60
    h_d: int = 60
    max_per_reference: int = 1

    def __post_init__(self):
        if self.h_s not in QUANTILE_GRID or self.h_d not in QUANTILE_GRID:
            raise DataError(
                f"H_s/H_d must be drawn from {QUANTILE_GRID}, "
                f"got ({self.h_s}, {self.h_d})"
            )
        if self.max_per_reference < 1:
            raise DataError("max_per_reference must be >= 1")


@dataclass(frozen=True)
class Triplet:
    ref_id: str
    diff_id: str
    same_id: str
    d_same: float
    d_diff: float

    def __post_init__(self):
        if len({self.ref_id, self.diff_id, self.same_id}) != 3:
            raise DataError(
                f"triplet ids must be distinct: "
                f"({self.ref_id}, {self.diff_id}, {self.same_id})"
            )


@dataclass(frozen=True)
class DistanceMatrix:
    ids: tuple[str, ...]
    D: np.ndarray

    def __post_init__(self):
        D = np.asarray(self.D, dtype=np.float64)
        D.setflags(write=False)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "ids", tuple(self.ids))

    def distance(self, a: str, b: str) -> float:
        ia, ib = self.ids.index(a), self.ids.index(b)
        return float(self.D[ia, ib])


def pairwise_distances(sigs: list[SampleSignature]) -> DistanceMatrix:
    """Full symmetric Euclidean distance matrix over the signatures."""
    if len(sigs) < 2:
        raise DataError("need at least 2 signatures")
    d = sigs[0].S.shape[0]
    for s in sigs:
        if s.S.shape[0] != d:
            raise DataError(
                f"signature length mismatch: {s.sample_id} has {s.S.shape[0]}, "
                f"expected {d}"
            )
    n = len(sigs)
    D = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            dist = float(np.sqrt(np.sum((sigs[i].S - sigs[j].S) ** 2)))
            D[i, j] = D[j, i] = dist
    return DistanceMatrix(ids=tuple(s.sample_id for s in sigs), D=D)


def quantile_threshold(values, q: float) -> float:
    """Linear-interpolation quantile of the values at q percent."""
    vals = np.asarray(list(values), dtype=np.float64)
    if vals.size == 0:
        raise DataError("cannot take a quantile of an empty list")
    if not 0.0 < q < 100.0:
        raise DataError(f"quantile must be in (0, 100), got {q}")
    return float(np.quantile(vals, q / 100.0))


def select_triplets(
    cohort: CohortDataset,
    sigs: list[SampleSignature],
    cfg: TripletConfig,
) -> list[Triplet]:
    """Mine up to max_per_reference triplets per reference sample.

    Candidates per reference prefer the smallest same-distance, then the
    largest diff-distance, with lexicographic id order breaking ties, so the
    output is a pure function of the inputs.
    """
    ids = sorted(cohort.sample_ids)
    sig_by_id = {s.sample_id: s for s in sigs}
    missing = [i for i in ids if i not in sig_by_id]
    if missing:
        raise DataError(f"missing signatures for samples: {missing}")

    cov = {i: binarized_value(cohort.record(i), cfg.covariate) for i in ids}
    groups = {0: [i for i in ids if cov[i] == 0], 1: [i for i in ids if cov[i] == 1]}
    for value, members in groups.items():
        if not members:
            raise DataError(
                f"covariate group empty: no sample with {cfg.covariate}={value}"
            )

    dm = pairwise_distances([sig_by_id[i] for i in ids])
    index = {i: k for k, i in enumerate(dm.ids)}

    def dist(a, b):
        return float(dm.D[index[a], index[b]])

    same_pair_dists = [
        dist(a, b)
        for k, a in enumerate(ids)
        for b in ids[k + 1:]
        if cov[a] == cov[b]
    ]
    if not same_pair_dists:
        logger.warning("no same-covariate pairs; no triplets can be mined")
        return []
    t_s = quantile_threshold(same_pair_dists, cfg.h_s)

    # candidate margins over all covariate-admissible (ref, same, diff)
    # combinations; keeping this pool independent of H_s makes the
    # admissible set exactly monotone in each knob separately
    margins = []
    candidates: dict[str, list[tuple[float, float, str, str]]] = {i: [] for i in ids}
    for ref in ids:
        sames = [k for k in groups[cov[ref]] if k != ref]
        diffs = groups[1 - cov[ref]]
        for k in sames:
            d_same = dist(ref, k)
            for j in diffs:
                d_diff = dist(ref, j)
                margins.append(d_diff - d_same)
                candidates[ref].append((d_same, d_diff, k, j))
    if not margins:
        logger.warning("no covariate-admissible triplet candidates")
        return []
    t_d = quantile_threshold(margins, 100 - cfg.h_d)

    out = []
    for ref in ids:
        admissible = [
            (d_same, d_diff, k, j)
            for d_same, d_diff, k, j in candidates[ref]
            if d_same <= t_s and (d_diff - d_same) >= t_d
        ]
        if not admissible:
            continue
        admissible.sort(key=lambda c: (c[0], -c[1], c[2], c[3]))
        for d_same, d_diff, k, j in admissible[: cfg.max_per_reference]:
            out.append(
                Triplet(ref_id=ref, diff_id=j, same_id=k, d_same=d_same, d_diff=d_diff)
            )
    if not out:
        logger.warning("no admissible triplet for any reference")
    return out


def write_triplets(triplets: list[Triplet], path) -> None:
    import csv
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ref_id", "diff_id", "same_id", "d_same", "d_diff"])
        for t in triplets:
            writer.writerow([t.ref_id, t.diff_id, t.same_id, repr(t.d_same), repr(t.d_diff)])


def read_triplets(path) -> list[Triplet]:
    import csv
    from pathlib import Path

    path = Path(path)
    if not path.is_file():
        raise DataError(f"triplets file not found: {path}")
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                Triplet(
                    ref_id=row["ref_id"],
                    diff_id=row["diff_id"],
                    same_id=row["same_id"],
                    d_same=float(row["d_same"]),
                    d_diff=float(row["d_diff"]),
                )
            )
    return out
