"""Composite loss and the optimization loop.

The loss is alpha * mean(BCE over the batch) + (1 - alpha) * mean(triplet
margin terms over the batch's bound triplets). Batches are fixed-size cell
set instances sampled with replacement from the training samples (cohorts
are far smaller than the batch size of 200 the defaults use). When an
instance's sample is a triplet reference, one of its triplets is bound to
the instance round-robin and the diff/same partners are encoded from fresh
subsampled sets in the same step; the margin term compares the learned
embeddings of the three samples.

All randomness is drawn from per-purpose streams keyed by (seed, step,
slot), so turning the triplet branch off (alpha=1, or no triplets) leaves
the instance stream untouched and the parameter trajectory bit-identical.
Updates are plain gradient descent at the configured learning rate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CohortDataset, SplitPlan, subsample_set
from .errors import DataError, NumericError
from .setnet import (
    ModelParams,
    SetEncoderConfig,
    backward_batch,
    forward_batch,
    init_params,
    sgd_step,
    sigmoid,
)
from .seeding import (
    STREAM_BATCH,
    STREAM_PARTNER,
    STREAM_SUBSAMPLE,
    derive_seed,
    rng_for,
)
from .triplets import Triplet

PROB_CLAMP = 1e-7

# partner roles inside the per-purpose seed derivation
_ROLE_DIFF = 1
_ROLE_SAME = 2


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.5
    margin: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"alpha must be in [0,1], got {self.alpha}")
        if self.margin < 0.0:
            raise DataError(f"margin must be >= 0, got {self.margin}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0001
    batch_size: int = 200
    epochs: int = 30
    set_size: int = 200
    seed: int = 0
    steps_per_epoch: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise DataError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise DataError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise DataError(f"epochs must be >= 1, got {self.epochs}")
        if self.set_size < 1:
            raise DataError(f"set_size must be >= 1, got {self.set_size}")
        if self.steps_per_epoch < 1:
            raise DataError(f"steps_per_epoch must be >= 1, got {self.steps_per_epoch}")


@dataclass(frozen=True)
class TripletBinding:
    """A triplet attached to one batch slot, with partner cell sets."""

    slot: int
    triplet: Triplet
    diff_set: np.ndarray
    same_set: np.ndarray


@dataclass
class Batch:
    sample_ids: list[str]
    X: np.ndarray  # (B, set_size, n)
    y: np.ndarray  # (B,)
    bindings: list[TripletBinding] = field(default_factory=list)


def bce_loss(p: float, y: int) -> float:
    """Binary cross-entropy with the probability clamped away from {0,1}."""
    p = min(max(float(p), PROB_CLAMP), 1.0 - PROB_CLAMP)
    return -(y * np.log(p) + (1 - y) * np.log(1.0 - p))


def triplet_term(e_ref, e_diff, e_same, margin: float) -> float:
    """Margin ranking penalty max(0, d(ref,same) - d(ref,diff) + margin)."""
    e_ref = np.asarray(e_ref, dtype=np.float64)
    e_diff = np.asarray(e_diff, dtype=np.float64)
    e_same = np.asarray(e_same, dtype=np.float64)
    if not (e_ref.shape == e_diff.shape == e_same.shape):
        raise DataError(
            f"embedding length mismatch: {e_ref.shape}, {e_diff.shape}, {e_same.shape}"
        )
    d_same = float(np.sqrt(np.sum((e_ref - e_same) ** 2)))
    d_diff = float(np.sqrt(np.sum((e_ref - e_diff) ** 2)))
    return max(0.0, d_same - d_diff + margin)


def total_loss(bce_values, triplet_values, cfg: LossConfig) -> float:
    """alpha * mean BCE + (1 - alpha) * mean triplet term (0 when unbound)."""
    bce_values = list(bce_values)
    if not bce_values:
        raise DataError("need at least one instance in the batch")
    bce_mean = float(np.mean(bce_values))
    triplet_values = list(triplet_values)
    trip_mean = float(np.mean(triplet_values)) if triplet_values else 0.0
    return cfg.alpha * bce_mean + (1.0 - cfg.alpha) * trip_mean


def make_batch(
    train_cohort: CohortDataset,
    triplets_by_ref: dict[str, list[Triplet]],
    cfg: TrainConfig,
    step: int,
    rr_counters: dict[str, int] | None = None,
) -> Batch:
    """Draw one batch of set instances plus triplet bindings.

    Sample ids are drawn uniformly with replacement; each slot gets a fresh
    subsampled cell set. Slots whose sample is a triplet reference bind one
    of its triplets (round-robin via rr_counters, advanced in place) along
    with freshly subsampled partner sets.
    """
    ids = sorted(train_cohort.sample_ids)
    if not ids:
        raise DataError("training cohort is empty")
    rng = rng_for(cfg.seed, STREAM_BATCH, step)
    chosen = [ids[i] for i in rng.integers(0, len(ids), size=cfg.batch_size)]

    sets, labels = [], []
    for slot, sid in enumerate(chosen):
        sub = subsample_set(
            train_cohort.matrix(sid),
            cfg.set_size,
            derive_seed(cfg.seed, STREAM_SUBSAMPLE, step, slot),
        )
        sets.append(sub.values)
        labels.append(train_cohort.record(sid).outcome)

    bindings = []
    if triplets_by_ref:
        if rr_counters is None:
            rr_counters = {}
        for slot, sid in enumerate(chosen):
            pool = triplets_by_ref.get(sid)
            if not pool:
                continue
            k = rr_counters.get(sid, 0)
            rr_counters[sid] = k + 1
            trip = pool[k % len(pool)]
            diff_sub = subsample_set(
                train_cohort.matrix(trip.diff_id),
                cfg.set_size,
                derive_seed(cfg.seed, STREAM_PARTNER, step, slot, _ROLE_DIFF),
            )
            same_sub = subsample_set(
                train_cohort.matrix(trip.same_id),
                cfg.set_size,
                derive_seed(cfg.seed, STREAM_PARTNER, step, slot, _ROLE_SAME),
            )
            bindings.append(
                TripletBinding(slot, trip, diff_sub.values, same_sub.values)
            )

    return Batch(
        sample_ids=chosen,
        X=np.stack(sets),
        y=np.asarray(labels, dtype=np.float64),
        bindings=bindings,
    )


@dataclass
class TrainingLog:
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)

    def append(self, step: int, bce: float, trip: float, total: float) -> None:
        self.rows.append((step, bce, trip, total))

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "bce_component", "triplet_component", "total"])
            for step, bce, trip, total in self.rows:
                writer.writerow([step, repr(bce), repr(trip), repr(total)])


def step_gradients(
    params: ModelParams,
    batch: Batch,
    loss_cfg: LossConfig,
):
    """Forward/backward for one batch.

    Returns (grads, bce_component, triplet_component, total). Components are
    the alpha-weighted contributions, so total is their sum and the triplet
    component is identically zero when no binding is active. At alpha=1 the
    triplet branch is skipped entirely (it could only multiply by zero).
    """
    B = batch.X.shape[0]
    use_triplets = loss_cfg.alpha < 1.0 and bool(batch.bindings)

    if use_triplets:
        nb = len(batch.bindings)
        stack = np.concatenate(
            [
                batch.X,
                np.stack([b.diff_set for b in batch.bindings]),
                np.stack([b.same_set for b in batch.bindings]),
            ]
        )
    else:
        nb = 0
        stack = batch.X

    logits, embeds, trace = forward_batch(params, stack)
    p = sigmoid(logits[:B])
    bce_values = [bce_loss(p[i], batch.y[i]) for i in range(B)]
    bce_mean = float(np.mean(bce_values))

    dlogit = np.zeros(stack.shape[0], dtype=np.float64)
    # clamp affects the reported value only; the gradient uses the exact
    # sigmoid-BCE form so saturated probabilities still receive pressure
    dlogit[:B] = (loss_cfg.alpha / B) * (p - batch.y)

    trip_mean = 0.0
    dembed = None
    if use_triplets:
        dembed = np.zeros_like(embeds)
        trip_values = []
        w = (1.0 - loss_cfg.alpha) / nb
        for i, binding in enumerate(batch.bindings):
            r, d, s = binding.slot, B + i, B + nb + i
            delta_s = embeds[r] - embeds[s]
            delta_d = embeds[r] - embeds[d]
            dist_s = float(np.sqrt(np.sum(delta_s**2)))
            dist_d = float(np.sqrt(np.sum(delta_d**2)))
            term = dist_s - dist_d + loss_cfg.margin
            trip_values.append(max(0.0, term))
            if term > 0.0:
                u = delta_s / dist_s if dist_s > 0.0 else np.zeros_like(delta_s)
                v = delta_d / dist_d if dist_d > 0.0 else np.zeros_like(delta_d)
                dembed[r] += w * (u - v)
                dembed[s] -= w * u
                dembed[d] += w * v
        trip_mean = float(np.mean(trip_values))

    grads = backward_batch(params, trace, dlogit, dembed)
    bce_component = loss_cfg.alpha * bce_mean
    triplet_component = (1.0 - loss_cfg.alpha) * trip_mean if use_triplets else 0.0
    return grads, bce_component, triplet_component, bce_component + triplet_component


def fit(
    cohort: CohortDataset,
    split: SplitPlan,
    triplets: list[Triplet],
    net_cfg: SetEncoderConfig,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
) -> tuple[ModelParams, TrainingLog]:
    """Train the encoder on the split's training samples."""
    train_cohort = cohort.restrict(split.train_ids)
    train_ids = set(split.train_ids)
    for t in triplets:
        if not {t.ref_id, t.diff_id, t.same_id} <= train_ids:
            raise DataError(
                f"triplet ({t.ref_id}, {t.diff_id}, {t.same_id}) refers to "
                f"samples outside the training split"
            )
    if net_cfg.input_dim != len(cohort.marker_panel):
        raise DataError(
            f"encoder input_dim {net_cfg.input_dim} does not match "
            f"{len(cohort.marker_panel)} markers"
        )

    triplets_by_ref: dict[str, list[Triplet]] = {}
    if loss_cfg.alpha < 1.0:
        for t in triplets:
            triplets_by_ref.setdefault(t.ref_id, []).append(t)

    params = init_params(net_cfg)
    log = TrainingLog()
    rr_counters: dict[str, int] = {}
    n_steps = train_cfg.epochs * train_cfg.steps_per_epoch
    for step in range(n_steps):
        batch = make_batch(train_cohort, triplets_by_ref, train_cfg, step, rr_counters)
        grads, bce_c, trip_c, total = step_gradients(params, batch, loss_cfg)
        if not np.isfinite(total):
            raise NumericError(f"non-finite loss at step {step}: {total}")
        sgd_step(params, grads, train_cfg.learning_rate)
        log.append(step, bce_c, trip_c, total)
    return params, log
