"""Metrics and analyses: rank-based AUC, precision/recall/F1, the
covariate-outcome dependency statistic, embedding-covariate alignment,
hyperparameter sweeps and 2-D PCA projection of embeddings.

AUC uses average ranks (Mann-Whitney), counting ties as half, which the
tests cross-check against brute-force pair counting. The dependency
statistic counts the 2x2 covariate x outcome table with quadrants D0 (row
outcome=0, col covariate=0), D1 (0,1), D2 (1,0), D3 (1,1) and reports
|(D1 + D2) - (D0 + D3)|: large when covariate and outcome line up on either
diagonal, zero when the table is balanced.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .data import (
    CohortDataset,
    SplitPlan,
    binarized_value,
    ensure_binarized,
    stratified_splits,
    subsample_set,
)
from .errors import DataError
from .rff import RffConfig, compute_signatures
from .seeding import STREAM_ALIGN, STREAM_EVAL, derive_seed, rng_for
from .setnet import ModelParams, SetEncoderConfig, forward, sigmoid
from .training import LossConfig, TrainConfig, fit
from .triplets import TripletConfig, select_triplets

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricsReport:
    auc: float
    precision: float
    recall: float
    f1: float
    trial_id: int
    n_test: int

    def as_dict(self) -> dict:
        return {
            "auc": self.auc,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "trial_id": self.trial_id,
            "n_test": self.n_test,
        }


@dataclass(frozen=True)
class ContingencyTable:
    d0: int
    d1: int
    d2: int
    d3: int

    @property
    def total(self) -> int:
        return self.d0 + self.d1 + self.d2 + self.d3


@dataclass(frozen=True)
class EmbeddingDistanceSummary:
    same_pair_distances: list[float]
    diff_pair_distances: list[float]
    delta: str
    pairs: list[tuple[str, str, str, float]]  # (id_a, id_b, group, distance)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1; tied values share the average of their ranks."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = 0.5 * (i + j) + 1.0
        ranks[order[i : j + 1]] = avg
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """Rank-based AUC: P(score_pos > score_neg) + 0.5 * P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataError("scores and labels must be equal-length 1-D")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes present")
    ranks = _average_ranks(scores)
    pos_rank_sum = float(np.sum(ranks[labels == 1]))
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def precision_recall_f1(scores, labels, threshold: float = 0.5) -> tuple[float, float, float]:
    """Precision/recall/F1 at the threshold (predict 1 when score >= t)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if int(np.sum(labels == 1)) == 0 or int(np.sum(labels == 0)) == 0:
        raise DataError("metrics need both classes present")
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    if tp + fp == 0:
        warnings.warn("no positive predictions; precision set to 0", stacklevel=2)
        precision = 0.0
    else:
        precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    denom = precision + recall
    f1 = 2.0 * precision * recall / denom if denom > 0 else 0.0
    return precision, recall, f1


def covariate_dependency(cohort: CohortDataset, covariate: str) -> tuple[ContingencyTable, float]:
    """2x2 covariate x outcome counts and |(D1 + D2) - (D0 + D3)|."""
    counts = [[0, 0], [0, 0]]
    for _, rec in cohort.samples:
        c = binarized_value(rec, covariate)
        counts[rec.outcome][c] += 1
    table = ContingencyTable(
        d0=counts[0][0], d1=counts[0][1], d2=counts[1][0], d3=counts[1][1]
    )
    stat = float(abs((table.d1 + table.d2) - (table.d0 + table.d3)))
    return table, stat


def score_samples(
    params: ModelParams,
    cohort: CohortDataset,
    ids,
    set_size: int,
    n_subsets: int,
    seed: int,
) -> dict[str, float]:
    """Mean predicted probability over independent subsampled sets."""
    if n_subsets < 1:
        raise DataError(f"n_subsets must be >= 1, got {n_subsets}")
    ordered = sorted(ids)
    out = {}
    for pos, sid in enumerate(ordered):
        mat = cohort.matrix(sid)
        probs = []
        for j in range(n_subsets):
            sub = subsample_set(mat, set_size, derive_seed(seed, STREAM_EVAL, pos, j))
            logit, _, _ = forward(params, sub.values)
            probs.append(float(sigmoid(np.array([logit]))[0]))
        out[sid] = float(np.mean(probs))
    return out


def embed_samples(params: ModelParams, cohort: CohortDataset, ids=None) -> dict[str, np.ndarray]:
    """Per-sample embedding from the full (unsubsampled) cell matrix."""
    ids = sorted(cohort.sample_ids if ids is None else ids)
    out = {}
    for sid in ids:
        _, emb, _ = forward(params, cohort.matrix(sid).values)
        out[sid] = emb
    return out


def evaluate_split(
    params: ModelParams,
    cohort: CohortDataset,
    split: SplitPlan,
    set_size: int,
    n_subsets: int,
    seed: int,
) -> tuple[MetricsReport, dict[str, float]]:
    """Score the split's test samples and compute the metric bundle."""
    scores_by_id = score_samples(params, cohort, split.test_ids, set_size, n_subsets, seed)
    ordered = sorted(split.test_ids)
    scores = np.array([scores_by_id[i] for i in ordered])
    labels = np.array([cohort.record(i).outcome for i in ordered])
    auc = roc_auc(scores, labels)
    precision, recall, f1 = precision_recall_f1(scores, labels)
    report = MetricsReport(
        auc=auc,
        precision=precision,
        recall=recall,
        f1=f1,
        trial_id=split.trial_id,
        n_test=len(ordered),
    )
    return report, scores_by_id


def embedding_alignment(
    params: ModelParams,
    cohort: CohortDataset,
    covariate: str,
    delta: float,
    n_pairs: int,
    seed: int,
) -> EmbeddingDistanceSummary:
    """Embedding distances for random Same- vs Diff-covariate sample pairs.

    Binary covariates compare by equality; continuous ones are Same when the
    raw gap is <= delta and Diff otherwise.
    """
    ids = sorted(cohort.sample_ids)
    if len(ids) < 2:
        raise DataError("need at least 2 samples for alignment analysis")
    all_pairs = [(a, b) for k, a in enumerate(ids) for b in ids[k + 1 :]]
    if n_pairs < len(all_pairs):
        rng = rng_for(seed, STREAM_ALIGN)
        chosen = rng.choice(len(all_pairs), size=n_pairs, replace=False)
        pairs = [all_pairs[i] for i in sorted(chosen)]
    else:
        pairs = all_pairs

    embeddings = embed_samples(params, cohort, {i for p in pairs for i in p})

    def is_same(a: str, b: str) -> bool:
        ca = cohort.record(a).covariates.get(covariate)
        cb = cohort.record(b).covariates.get(covariate)
        if ca is None or cb is None:
            raise DataError(f"covariate {covariate!r} missing on {a} or {b}")
        if ca.kind == "binary" and cb.kind == "binary":
            return ca.raw == cb.raw
        return abs(ca.raw - cb.raw) <= delta

    same, diff, rows = [], [], []
    for a, b in pairs:
        dist = float(np.sqrt(np.sum((embeddings[a] - embeddings[b]) ** 2)))
        if is_same(a, b):
            group = "Same"
            same.append(dist)
        else:
            group = "Diff"
            diff.append(dist)
        rows.append((a, b, group, dist))
    if not same or not diff:
        logger.warning(
            "alignment analysis produced an empty group (same=%d, diff=%d)",
            len(same), len(diff),
        )
    rule = f"|raw gap| <= {delta!r} (binary: equality)"
    return EmbeddingDistanceSummary(same, diff, rule, rows)


def pca_project(embeddings) -> tuple[np.ndarray, np.ndarray]:
    """Mean-centered projection onto the top-2 principal axes.

    Returns (coords (n, 2), explained (2,)) where explained holds each
    axis's share of the total variance. Sign convention: the first nonzero
    loading of each axis is positive.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("need at least 2 embedding vectors")
    if X.shape[1] < 2:
        raise DataError("embedding dimension must be >= 2")
    Xc = X - X.mean(axis=0)
    cov = (Xc.T @ Xc) / (X.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    top = eigvecs[:, order[:2]].copy()
    for k in range(2):
        col = top[:, k]
        nonzero = np.nonzero(col)[0]
        if nonzero.size and col[nonzero[0]] < 0:
            top[:, k] = -col
    total = float(np.sum(np.maximum(eigvals, 0.0)))
    explained = (
        np.maximum(eigvals[order[:2]], 0.0) / total
        if total > 0
        else np.zeros(2)
    )
    return Xc @ top, explained


@dataclass(frozen=True)
class SweepCell:
    h_s: int
    h_d: int
    alpha: float
    mean_auc: float
    std_auc: float
    argmax_count: int
    aucs: tuple[float, ...]


def sweep(
    cohort: CohortDataset,
    covariate: str,
    h_s_grid,
    h_d_grid,
    alpha_grid,
    trials: int,
    rff_cfg: RffConfig,
    net_cfg: SetEncoderConfig,
    train_cfg: TrainConfig,
    margin: float,
    test_fraction: float,
    n_subsets: int,
    binarize_rule=None,
) -> list[SweepCell]:
    """Mean/stddev AUC per (H_s, H_d, alpha) cell plus per-trial argmax counts.

    Splits and signatures are shared across cells within a trial so cells
    differ only in the mining thresholds and the loss trade-off. Continuous
    covariates are binarized per training split (like the repeated-trials
    protocol) so test samples never influence the cutoff.
    """
    h_s_grid, h_d_grid = list(h_s_grid), list(h_d_grid)
    alpha_grid = list(alpha_grid)
    if not h_s_grid or not h_d_grid or not alpha_grid:
        raise DataError("sweep grid must be non-empty")
    splits = stratified_splits(cohort, trials, test_fraction, train_cfg.seed)
    cells = [(hs, hd, a) for a in alpha_grid for hs in h_s_grid for hd in h_d_grid]
    aucs: dict[tuple, list[float]] = {c: [] for c in cells}

    for split in splits:
        train_cohort = cohort.restrict(split.train_ids)
        if any(alpha < 1.0 for _, _, alpha in cells):
            train_cohort = ensure_binarized(train_cohort, covariate, binarize_rule)
        sigs = compute_signatures(train_cohort, rff_cfg)
        for hs, hd, alpha in cells:
            if alpha < 1.0:
                trip_cfg = TripletConfig(covariate=covariate, h_s=hs, h_d=hd)
                trips = select_triplets(train_cohort, sigs, trip_cfg)
            else:
                trips = []
            params, _ = fit(
                cohort, split, trips, net_cfg,
                LossConfig(alpha=alpha, margin=margin), train_cfg,
            )
            report, _ = evaluate_split(
                params, cohort, split, train_cfg.set_size, n_subsets, train_cfg.seed
            )
            aucs[(hs, hd, alpha)].append(report.auc)

    argmax_counts = {c: 0 for c in cells}
    for t in range(trials):
        best = max(aucs[c][t] for c in cells)
        for c in cells:
            if aucs[c][t] == best:
                argmax_counts[c] += 1

    out = []
    for hs, hd, alpha in cells:
        values = aucs[(hs, hd, alpha)]
        out.append(
            SweepCell(
                h_s=hs,
                h_d=hd,
                alpha=alpha,
                mean_auc=float(np.mean(values)),
                std_auc=float(np.std(values)),
                argmax_count=argmax_counts[(hs, hd, alpha)],
                aucs=tuple(values),
            )
        )
    return out


def spearman(x, y) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise DataError("need two equal-length 1-D arrays with >= 2 entries")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = np.sqrt(np.sum(rx**2) * np.sum(ry**2))
    if denom == 0.0:
        return 0.0
    return float(np.sum(rx * ry) / denom)
