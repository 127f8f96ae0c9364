"""Permutation-invariant set encoder with exact manual gradients.

Architecture: per-cell affine+ReLU blocks, a column-wise max pool over
cells, an affine+ReLU head producing the per-sample embedding (the
second-to-last activation, used both for analysis and for the triplet
penalty) and an affine output producing a single logit.

Forward and backward dispatch to the active kernel backend; both are pure
functions of their inputs. Max pooling makes the outputs exactly invariant
to any permutation of the input rows, and the backward pass routes gradient
only through the argmax cell of each pooled feature (first index on ties).
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import backend
from .errors import DataError, NumericError
from .seeding import STREAM_INIT, rng_for

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SetEncoderConfig:
    input_dim: int
    block_widths: tuple[int, ...] = (64, 64)
    embed_dim: int = 32
    set_size: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "block_widths", tuple(self.block_widths))
        if self.input_dim < 1 or self.embed_dim < 1 or self.set_size < 1:
            raise DataError("input_dim, embed_dim and set_size must be >= 1")
        if not self.block_widths or any(w < 1 for w in self.block_widths):
            raise DataError("block_widths must be non-empty positive ints")


@dataclass
class ModelParams:
    """All weights/biases; weight shape is (fan_in, fan_out)."""

    block_ws: list[np.ndarray]
    block_bs: list[np.ndarray]
    head_w: np.ndarray
    head_b: np.ndarray
    out_w: np.ndarray  # (embed_dim,)
    out_b: float

    def copy(self) -> "ModelParams":
        return ModelParams(
            block_ws=[w.copy() for w in self.block_ws],
            block_bs=[b.copy() for b in self.block_bs],
            head_w=self.head_w.copy(),
            head_b=self.head_b.copy(),
            out_w=self.out_w.copy(),
            out_b=float(self.out_b),
        )

    def flat_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for i, (w, b) in enumerate(zip(self.block_ws, self.block_bs)):
            arrays[f"block{i}_w"] = w
            arrays[f"block{i}_b"] = b
        arrays["head_w"] = self.head_w
        arrays["head_b"] = self.head_b
        arrays["out_w"] = self.out_w
        arrays["out_b"] = np.array([self.out_b], dtype=np.float64)
        return arrays


@dataclass
class ParamGrads:
    block_ws: list[np.ndarray]
    block_bs: list[np.ndarray]
    head_w: np.ndarray
    head_b: np.ndarray
    out_w: np.ndarray
    out_b: float

    def add_(self, other: "ParamGrads") -> None:
        for a, b in zip(self.block_ws, other.block_ws):
            a += b
        for a, b in zip(self.block_bs, other.block_bs):
            a += b
        self.head_w += other.head_w
        self.head_b += other.head_b
        self.out_w += other.out_w
        self.out_b = self.out_b + other.out_b


@dataclass
class ForwardTrace:
    """Retained activations from one forward_batch call."""

    X: np.ndarray
    block_acts: list[np.ndarray]
    pooled: np.ndarray
    argmax: np.ndarray
    emb: np.ndarray


def init_params(cfg: SetEncoderConfig) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = rng_for(cfg.seed, STREAM_INIT)

    def layer(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    widths = [cfg.input_dim, *cfg.block_widths]
    block_ws = [layer(widths[i], widths[i + 1]) for i in range(len(cfg.block_widths))]
    block_bs = [np.zeros(w, dtype=np.float64) for w in cfg.block_widths]
    head_w = layer(cfg.block_widths[-1], cfg.embed_dim)
    head_b = np.zeros(cfg.embed_dim, dtype=np.float64)
    out_w = layer(cfg.embed_dim, 1)[:, 0]
    return ModelParams(block_ws, block_bs, head_w, head_b, out_w, 0.0)


def forward_batch(params: ModelParams, X: np.ndarray):
    """Encode a (B, set_size, n) stack; returns (logits, embeds, trace)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != params.block_ws[0].shape[0]:
        raise DataError(
            f"expected (B, s, {params.block_ws[0].shape[0]}) input, got {X.shape}"
        )
    logits, embeds, raw = backend.kernels().forward_batch(
        X, params.block_ws, params.block_bs,
        params.head_w, params.head_b, params.out_w, params.out_b,
    )
    if not (np.all(np.isfinite(logits)) and np.all(np.isfinite(embeds))):
        raise NumericError("non-finite activation in forward pass")
    block_acts, pooled, argmax, emb = raw
    return logits, embeds, ForwardTrace(X, block_acts, pooled, argmax, emb)


def forward(params: ModelParams, X: np.ndarray):
    """Single-instance forward: (logit, embedding, trace)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"expected a 2-D cell set, got shape {X.shape}")
    logits, embeds, trace = forward_batch(params, X[None, :, :])
    return float(logits[0]), embeds[0], trace


def backward_batch(
    params: ModelParams,
    trace: ForwardTrace,
    dlogit: np.ndarray,
    dembed: np.ndarray | None = None,
) -> ParamGrads:
    """Exact gradients of sum(dlogit*logit) + sum(dembed.emb) w.r.t. params."""
    dlogit = np.ascontiguousarray(dlogit, dtype=np.float64)
    if dlogit.shape != (trace.X.shape[0],):
        raise DataError(
            f"dlogit shape {dlogit.shape} does not match batch {trace.X.shape[0]}"
        )
    if dembed is not None and dembed.shape != trace.emb.shape:
        raise DataError(
            f"dembed shape {dembed.shape} does not match embeddings {trace.emb.shape}"
        )
    raw_trace = (trace.block_acts, trace.pooled, trace.argmax, trace.emb)
    d_ws, d_bs, d_head_w, d_head_b, d_out_w, d_out_b = backend.kernels().backward_batch(
        trace.X, params.block_ws, params.block_bs,
        params.head_w, params.head_b, params.out_w, params.out_b,
        raw_trace, dlogit, dembed,
    )
    return ParamGrads(list(d_ws), list(d_bs), d_head_w, d_head_b, d_out_w, float(d_out_b))


_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(z):
    """Numerically stable logistic; output stays inside (0, 1) even where
    exp() under/overflows."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, _SIG_LO, _SIG_HI)


def zero_grads(params: ModelParams) -> ParamGrads:
    return ParamGrads(
        block_ws=[np.zeros_like(w) for w in params.block_ws],
        block_bs=[np.zeros_like(b) for b in params.block_bs],
        head_w=np.zeros_like(params.head_w),
        head_b=np.zeros_like(params.head_b),
        out_w=np.zeros_like(params.out_w),
        out_b=0.0,
    )


def sgd_step(params: ModelParams, grads: ParamGrads, lr: float) -> None:
    for w, g in zip(params.block_ws, grads.block_ws):
        w -= lr * g
    for b, g in zip(params.block_bs, grads.block_bs):
        b -= lr * g
    params.head_w -= lr * grads.head_w
    params.head_b -= lr * grads.head_b
    params.out_w -= lr * grads.out_w
    params.out_b = params.out_b - lr * grads.out_b


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype=np.float64)
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def _decode_array(d: dict) -> np.ndarray:
    buf = base64.b64decode(d["data"])
    return np.frombuffer(buf, dtype=np.float64).reshape(d["shape"]).copy()


def save_checkpoint(path, params: ModelParams, config_echo: dict) -> None:
    """Write a versioned checkpoint; round-trips parameters bit-exactly."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config_echo,
        "n_blocks": len(params.block_ws),
        "arrays": {k: _encode_array(v) for k, v in params.flat_arrays().items()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise DataError(
            f"unsupported checkpoint format version {version!r} "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    arrays = {k: _decode_array(v) for k, v in payload["arrays"].items()}
    n_blocks = payload["n_blocks"]
    params = ModelParams(
        block_ws=[arrays[f"block{i}_w"] for i in range(n_blocks)],
        block_bs=[arrays[f"block{i}_b"] for i in range(n_blocks)],
        head_w=arrays["head_w"],
        head_b=arrays["head_b"],
        out_w=arrays["out_w"],
        out_b=float(arrays["out_b"][0]),
    )
    return params, payload["config"]
