"""Deterministic per-purpose seed derivation.

Every source of randomness in the pipeline draws from its own child seed,
derived from one base seed plus a purpose tag (and optional indices such as
trial, step or batch slot). Purposes are isolated streams: consuming draws
for one purpose can never shift the draws of another, which is what makes
e.g. a triplet-free training run bit-identical to an alpha=1 run.
"""

from __future__ import annotations

import numpy as np

# Purpose tags. Values are part of the on-disk reproducibility contract:
# changing them changes every derived stream.
STREAM_SPLIT = 1
STREAM_PROJECTION = 2
STREAM_INIT = 3
STREAM_BATCH = 4
STREAM_SUBSAMPLE = 5
STREAM_PARTNER = 6
STREAM_EVAL = 7
STREAM_SYNTH = 8
STREAM_ALIGN = 9


def derive_seed(base_seed: int, *keys: int) -> int:
    """Derive a child integer seed from a base seed and purpose keys."""
    seq = np.random.SeedSequence([int(base_seed), *[int(k) for k in keys]])
    return int(seq.generate_state(1, np.uint64)[0])


def rng_for(base_seed: int, *keys: int) -> np.random.Generator:
    """Generator seeded by ``derive_seed(base_seed, *keys)``."""
    return np.random.default_rng(derive_seed(base_seed, *keys))
