"""Toy dual encoder over a shared unit-norm embedding space, with exact gradients.

Text side: hashed bag of unigrams plus bag of adjacent-pair bigrams (mean
pooled), then tanh-affine, affine, L2 normalization.  The bigram table is
what lets "not guitar" embed differently from "guitar" without any built-in
negation handling.  Audio side: tanh-affine, affine, L2 normalization over
the clip feature vector.

All arithmetic is float64; checkpoints store float32 payloads.  Backward
passes are hand-derived and validated against central finite differences in
the test suite.
"""

from __future__ import annotations

import json
import math
import string
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import AudioClip, Caption, Vocabulary, render_caption
from .seeding import seeded_rng

CHECKPOINT_FORMAT = "negclap-ckpt"
CHECKPOINT_VERSION = 1

LOG_TEMPERATURE_INIT = math.log(14.3)
LOG_TEMPERATURE_MIN = 0.0
LOG_TEMPERATURE_MAX = math.log(100.0)
# 0.02 puts pre-normalization outputs near 1e-3; the 1/||o|| factor in the
# normalization backward then makes the first SGD step collapse every
# embedding onto the output bias.  0.1 keeps ||o|| near 1.
DEFAULT_INIT_SCALE = 0.1
DEFAULT_TABLE_SCALE = 0.1

# Fixed multiplicative string hash (FNV offset basis, Knuth multiplier);
# deliberately not configurable so checkpoints stay portable.
_HASH_OFFSET = 0x811C9DC5
_HASH_MULTIPLIER = 2654435761


@dataclass(frozen=True)
class ModelDims:
    d_t: int = 64
    d_h: int = 64
    d: int = 32
    d_a: int = 64
    hash_buckets: int = 4096


PARAM_FIELDS = (
    "unigram_table",
    "bigram_table",
    "text_hidden_w",
    "text_hidden_b",
    "text_out_w",
    "text_out_b",
    "audio_hidden_w",
    "audio_hidden_b",
    "audio_out_w",
    "audio_out_b",
    "log_temperature",
)


@dataclass
class ModelParams:
    dims: ModelDims
    seed: int
    unigram_table: np.ndarray
    bigram_table: np.ndarray
    text_hidden_w: np.ndarray
    text_hidden_b: np.ndarray
    text_out_w: np.ndarray
    text_out_b: np.ndarray
    audio_hidden_w: np.ndarray
    audio_hidden_b: np.ndarray
    audio_out_w: np.ndarray
    audio_out_b: np.ndarray
    log_temperature: np.ndarray  # shape ()

    def items(self):
        for name in PARAM_FIELDS:
            yield name, getattr(self, name)

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.dims, self.seed, *(getattr(self, n).copy() for n in PARAM_FIELDS)
        )


@dataclass
class ParamGrads:
    unigram_table: np.ndarray
    bigram_table: np.ndarray
    text_hidden_w: np.ndarray
    text_hidden_b: np.ndarray
    text_out_w: np.ndarray
    text_out_b: np.ndarray
    audio_hidden_w: np.ndarray
    audio_hidden_b: np.ndarray
    audio_out_w: np.ndarray
    audio_out_b: np.ndarray
    log_temperature: np.ndarray  # shape ()
    # rows of the tables that carry nonzero gradient, when the producer knows
    # them; lets optimizers touch only those rows
    touched_unigram_rows: np.ndarray | None = None
    touched_bigram_rows: np.ndarray | None = None

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "ParamGrads":
        return cls(*(np.zeros_like(getattr(params, n)) for n in PARAM_FIELDS))

    def items(self):
        for name in PARAM_FIELDS:
            yield name, getattr(self, name)

    def add_scaled(self, other: "ParamGrads", scale: float = 1.0) -> "ParamGrads":
        for name in PARAM_FIELDS:
            getattr(self, name).__iadd__(scale * getattr(other, name))
        return self


def init_params(dims: ModelDims, seed: int, init_scale: float = DEFAULT_INIT_SCALE,
                table_scale: float | None = None) -> ModelParams:
    """Gaussian weights and tables, zero biases, ln(14.3) temperature.

    table_scale (default DEFAULT_TABLE_SCALE) controls the embedding tables
    separately from the affine weights: rows the corpus never touches keep
    their init magnitude forever, and their size is what an untrained model
    "hears" when a caption gains unseen tokens.
    """
    if table_scale is None:
        table_scale = DEFAULT_TABLE_SCALE
    rng = seeded_rng(seed, 0)

    def table(*shape):
        return rng.normal(0.0, table_scale, size=shape)

    def gauss(*shape):
        return rng.normal(0.0, init_scale, size=shape)

    return ModelParams(
        dims=dims,
        seed=seed,
        unigram_table=table(dims.hash_buckets, dims.d_t),
        bigram_table=table(dims.hash_buckets, dims.d_t),
        text_hidden_w=gauss(dims.d_t, dims.d_h),
        text_hidden_b=np.zeros(dims.d_h),
        text_out_w=gauss(dims.d_h, dims.d),
        text_out_b=np.zeros(dims.d),
        audio_hidden_w=gauss(dims.d_a, dims.d_h),
        audio_hidden_b=np.zeros(dims.d_h),
        audio_out_w=gauss(dims.d_h, dims.d),
        audio_out_b=np.zeros(dims.d),
        log_temperature=np.array(LOG_TEMPERATURE_INIT),
    )


def tokenize(rendered: str) -> list[str]:
    """Lowercase whitespace tokens with surrounding punctuation stripped."""
    tokens = []
    for raw in rendered.lower().split():
        tok = raw.strip(string.punctuation)
        if tok:
            tokens.append(tok)
    return tokens


@lru_cache(maxsize=1 << 16)
def hash_bucket(token: str, n_buckets: int) -> int:
    h = _HASH_OFFSET
    for byte in token.encode("utf-8"):
        h = ((h ^ byte) * _HASH_MULTIPLIER) & 0xFFFFFFFF
    return h % n_buckets


@dataclass
class TextBatchCache:
    uni_rows: np.ndarray
    uni_idx: np.ndarray
    uni_counts: np.ndarray
    bi_rows: np.ndarray
    bi_idx: np.ndarray
    bi_counts: np.ndarray
    x: np.ndarray
    h: np.ndarray
    o: np.ndarray
    norms: np.ndarray
    emb: np.ndarray


@dataclass
class AudioBatchCache:
    feats: np.ndarray
    h: np.ndarray
    o: np.ndarray
    norms: np.ndarray
    emb: np.ndarray


def _mlp_forward(x, w1, b1, w2, b2):
    h = np.tanh(x @ w1 + b1)
    o = h @ w2 + b2
    norms = np.linalg.norm(o, axis=1, keepdims=True)
    emb = o / norms
    return h, o, norms, emb


def _mlp_backward(x, h, o, norms, emb, d_emb, w1, w2):
    # normalization: d_o = (d_emb - (d_emb . emb) emb) / ||o||
    proj = np.sum(d_emb * emb, axis=1, keepdims=True)
    d_o = (d_emb - proj * emb) / norms
    d_w2 = h.T @ d_o
    d_b2 = d_o.sum(axis=0)
    d_h = d_o @ w2.T
    d_pre = d_h * (1.0 - h * h)
    d_w1 = x.T @ d_pre
    d_b1 = d_pre.sum(axis=0)
    d_x = d_pre @ w1.T
    return d_x, d_w1, d_b1, d_w2, d_b2


def encode_token_lists(params: ModelParams,
                       token_lists: Sequence[Sequence[str]]) -> tuple[np.ndarray, TextBatchCache]:
    """Batch text forward over pre-tokenized inputs."""
    dims = params.dims
    B = len(token_lists)
    if B == 0:
        raise ValueError("empty batch")
    uni_rows: list[int] = []
    uni_idx: list[int] = []
    bi_rows: list[int] = []
    bi_idx: list[int] = []
    uni_counts = np.zeros(B)
    bi_counts = np.zeros(B)
    for r, toks in enumerate(token_lists):
        if not toks:
            raise ValueError(f"item {r}: caption renders to no tokens")
        for t in toks:
            uni_idx.append(hash_bucket(t, dims.hash_buckets))
            uni_rows.append(r)
        uni_counts[r] = len(toks)
        for t1, t2 in zip(toks, toks[1:]):
            bi_idx.append(hash_bucket(t1 + " " + t2, dims.hash_buckets))
            bi_rows.append(r)
        bi_counts[r] = max(len(toks) - 1, 0)

    uni_rows_a = np.asarray(uni_rows, dtype=np.intp)
    uni_idx_a = np.asarray(uni_idx, dtype=np.intp)
    bi_rows_a = np.asarray(bi_rows, dtype=np.intp)
    bi_idx_a = np.asarray(bi_idx, dtype=np.intp)

    x = np.zeros((B, dims.d_t))
    np.add.at(x, uni_rows_a, params.unigram_table[uni_idx_a])
    x /= uni_counts[:, None]
    if len(bi_idx_a):
        x_bi = np.zeros((B, dims.d_t))
        np.add.at(x_bi, bi_rows_a, params.bigram_table[bi_idx_a])
        safe = np.maximum(bi_counts, 1.0)
        x += x_bi / safe[:, None]

    h, o, norms, emb = _mlp_forward(
        x, params.text_hidden_w, params.text_hidden_b, params.text_out_w, params.text_out_b
    )
    cache = TextBatchCache(uni_rows_a, uni_idx_a, uni_counts, bi_rows_a, bi_idx_a,
                           bi_counts, x, h, o, norms, emb)
    return emb, cache


def encode_text_batch(params: ModelParams, captions: Sequence[Caption],
                      vocab: Vocabulary) -> tuple[np.ndarray, TextBatchCache]:
    token_lists = [tokenize(render_caption(c, vocab)) for c in captions]
    return encode_token_lists(params, token_lists)


def encode_audio_batch(params: ModelParams,
                       features: np.ndarray) -> tuple[np.ndarray, AudioBatchCache]:
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != params.dims.d_a:
        raise ValueError(f"audio features must be (B, {params.dims.d_a}), got {feats.shape}")
    h, o, norms, emb = _mlp_forward(
        feats, params.audio_hidden_w, params.audio_hidden_b,
        params.audio_out_w, params.audio_out_b,
    )
    return emb, AudioBatchCache(feats, h, o, norms, emb)


def encode_text(params: ModelParams, caption: Caption, vocab: Vocabulary) -> np.ndarray:
    """Unit-norm embedding of one caption."""
    emb, _ = encode_text_batch(params, [caption], vocab)
    return emb[0]


def encode_audio(params: ModelParams, clip: AudioClip | np.ndarray) -> np.ndarray:
    """Unit-norm embedding of one clip (or raw feature vector)."""
    feats = clip.features if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    if feats.ndim != 1 or feats.shape[0] != params.dims.d_a:
        raise ValueError(f"audio features must have dimension {params.dims.d_a}, got {feats.shape}")
    emb, _ = encode_audio_batch(params, feats[None, :])
    return emb[0]


def similarity(e1: np.ndarray, e2: np.ndarray) -> float:
    """Cosine similarity of two unit-norm embeddings (plain dot product)."""
    return float(np.dot(e1, e2))


def model_backward(
    params: ModelParams,
    text_passes: Sequence[tuple[TextBatchCache, np.ndarray]] = (),
    audio_passes: Sequence[tuple[AudioBatchCache, np.ndarray]] = (),
) -> ParamGrads:
    """Exact parameter gradients for any number of forward passes.

    Each pass pairs a forward cache with the upstream gradient on its
    embeddings.  Accumulation order is fixed (text passes in order, then
    audio passes) for bitwise reproducibility.  log_temperature is not on
    any encoder path and keeps a zero entry here.
    """
    grads = ParamGrads.zeros_like(params)
    uni_rows_seen: list[np.ndarray] = []
    bi_rows_seen: list[np.ndarray] = []
    for cache, d_emb in text_passes:
        d_emb = np.asarray(d_emb, dtype=np.float64)
        if d_emb.shape != cache.emb.shape:
            raise ValueError(f"upstream gradient shape {d_emb.shape} != {cache.emb.shape}")
        d_x, d_w1, d_b1, d_w2, d_b2 = _mlp_backward(
            cache.x, cache.h, cache.o, cache.norms, cache.emb, d_emb,
            params.text_hidden_w, params.text_out_w,
        )
        grads.text_hidden_w += d_w1
        grads.text_hidden_b += d_b1
        grads.text_out_w += d_w2
        grads.text_out_b += d_b2
        d_uni = d_x / cache.uni_counts[:, None]
        np.add.at(grads.unigram_table, cache.uni_idx, d_uni[cache.uni_rows])
        uni_rows_seen.append(cache.uni_idx)
        if len(cache.bi_idx):
            safe = np.maximum(cache.bi_counts, 1.0)
            d_bi = d_x / safe[:, None]
            np.add.at(grads.bigram_table, cache.bi_idx, d_bi[cache.bi_rows])
            bi_rows_seen.append(cache.bi_idx)
    grads.touched_unigram_rows = (
        np.unique(np.concatenate(uni_rows_seen)) if uni_rows_seen else np.empty(0, np.intp)
    )
    grads.touched_bigram_rows = (
        np.unique(np.concatenate(bi_rows_seen)) if bi_rows_seen else np.empty(0, np.intp)
    )
    for cache, d_emb in audio_passes:
        d_emb = np.asarray(d_emb, dtype=np.float64)
        if d_emb.shape != cache.emb.shape:
            raise ValueError(f"upstream gradient shape {d_emb.shape} != {cache.emb.shape}")
        _, d_w1, d_b1, d_w2, d_b2 = _mlp_backward(
            cache.feats, cache.h, cache.o, cache.norms, cache.emb, d_emb,
            params.audio_hidden_w, params.audio_out_w,
        )
        grads.audio_hidden_w += d_w1
        grads.audio_hidden_b += d_b1
        grads.audio_out_w += d_w2
        grads.audio_out_b += d_b2
    return grads


def sgd_update(params: ModelParams, grads: ParamGrads, learning_rate: float) -> None:
    """In-place SGD step; log_temperature is clamped to [ln 1, ln 100] afterwards."""
    for name in PARAM_FIELDS:
        arr = getattr(params, name)
        arr -= learning_rate * getattr(grads, name)
    np.clip(params.log_temperature, LOG_TEMPERATURE_MIN, LOG_TEMPERATURE_MAX,
            out=params.log_temperature)


def save_checkpoint(path: str | Path, params: ModelParams) -> None:
    """Header line, then per-parameter JSON meta + float32 little-endian payload."""
    dims = params.dims
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": {"d_t": dims.d_t, "d_h": dims.d_h, "d": dims.d, "d_a": dims.d_a},
        "hash_buckets": dims.hash_buckets,
        "seed": params.seed,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8") + b"\n")
        for name, arr in params.items():
            arr = np.asarray(arr, dtype=np.float64)
            meta = {"name": name, "shape": list(arr.shape)}
            f.write(json.dumps(meta).encode("utf-8") + b"\n")
            f.write(arr.astype("<f4").tobytes(order="C"))
            f.write(b"\n")


def load_checkpoint(path: str | Path) -> ModelParams:
    with open(path, "rb") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ValueError(f"bad checkpoint header: {e}") from e
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"bad checkpoint format marker {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
        d = header["dims"]
        dims = ModelDims(d_t=int(d["d_t"]), d_h=int(d["d_h"]), d=int(d["d"]),
                         d_a=int(d["d_a"]), hash_buckets=int(header["hash_buckets"]))
        arrays = {}
        for name in PARAM_FIELDS:
            meta_line = f.readline()
            if not meta_line:
                raise ValueError(f"truncated checkpoint: missing block for {name!r}")
            meta = json.loads(meta_line.decode("utf-8"))
            if meta.get("name") != name:
                raise ValueError(f"expected block {name!r}, found {meta.get('name')!r}")
            shape = tuple(int(s) for s in meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            payload = f.read(count * 4)
            if len(payload) != count * 4:
                raise ValueError(f"truncated payload for {name!r}")
            arr = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)
            arrays[name] = arr
            if f.read(1) != b"\n":
                raise ValueError(f"missing block terminator after {name!r}")
    return ModelParams(dims=dims, seed=int(header["seed"]), **arrays)
