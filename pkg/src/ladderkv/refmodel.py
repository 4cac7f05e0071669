"""Deterministic toy multi-layer attention decoder.

This is the numeric oracle for compaction correctness: the same decoder can
run (a) over a budgeted, compacting cache and (b) over the full uncompacted
history with evicted entries suppressed by -inf attention logits.  If
compaction removes exactly the masked entries and nothing else, both paths
compute attention over identical retained sets and agree to summation-order
precision.

The architecture is attention plus residual only, with rotary position
encoding applied to queries and keys at attention time (cached keys are
stored unrotated so position modes can be switched per decode).  Weights and
token embeddings are generated from a single SplitMix64 stream -- layer-major,
matrix order q, k, v, o, row-major, then embeddings token by token -- so a
model is bit-reproducible from (seed, config).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kvcache import KVCache, PositionMode
from .rng import SplitMix64, splitmix64_next

__all__ = [
    "ToyModelConfig",
    "ToyModel",
    "build_model",
    "token_embeddings",
    "decode_step",
    "DecodeHistory",
    "masked_full_decode",
    "splitmix64_next",
]

ROTARY_BASE = 10000.0


@dataclass(frozen=True)
class ToyModelConfig:
    layers: int
    heads: int = 2
    head_dim: int = 16
    seed: int = 0
    position_mode: PositionMode = PositionMode.ABSOLUTE_ORIGINAL

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if self.head_dim < 2 or self.head_dim % 2:
            raise ValueError("head_dim must be even and >= 2 (rotary pairs)")

    @property
    def width(self) -> int:
        return self.heads * self.head_dim


class ToyModel:
    """Per-layer q/k/v/o projection matrices plus the embedding stream head."""

    def __init__(self, cfg: ToyModelConfig, weights: list[dict[str, np.ndarray]],
                 embed_state: int):
        self.cfg = cfg
        self.weights = weights
        self._embed_state = embed_state

    @property
    def width(self) -> int:
        return self.cfg.width

    @property
    def layers(self) -> int:
        return self.cfg.layers


def build_model(cfg: ToyModelConfig) -> ToyModel:
    """Generate a model from its seed.

    Each weight is (u - 0.5) * 2 / sqrt(width) with u the next stream output
    mapped to [0, 1); the scale keeps attention logits O(1) at any width.
    """
    rng = SplitMix64(cfg.seed)
    dim = cfg.width
    scale = 2.0 / np.sqrt(dim)
    weights = []
    for _ in range(cfg.layers):
        per_layer = {}
        for name in ("q", "k", "v", "o"):
            u = rng.uniform_array(dim * dim).reshape(dim, dim)
            per_layer[name] = (u - 0.5) * scale
        weights.append(per_layer)
    return ToyModel(cfg, weights, rng.state)


def token_embeddings(model: ToyModel, count: int) -> np.ndarray:
    """Input vectors for tokens 0..count-1, drawn from the stream after weights."""
    rng = SplitMix64(0)
    rng.state = model._embed_state
    dim = model.width
    u = rng.uniform_array(count * dim).reshape(count, dim)
    return (u - 0.5) * 2.0 / np.sqrt(dim)


def _rotary(vectors: np.ndarray, positions: np.ndarray, heads: int, head_dim: int) -> np.ndarray:
    """Rotate (n, heads*head_dim) vectors by their positions.

    Pair i of each head turns by angle p * ROTARY_BASE**(-2i/head_dim); pairs
    are the interleaved components (2i, 2i+1).
    """
    n = vectors.shape[0]
    half = head_dim // 2
    inv_freq = ROTARY_BASE ** (-2.0 * np.arange(half) / head_dim)
    angles = positions[:, None].astype(np.float64) * inv_freq[None, :]  # (n, half)
    cos, sin = np.cos(angles), np.sin(angles)
    x = vectors.reshape(n, heads, half, 2)
    even, odd = x[..., 0], x[..., 1]
    out = np.empty_like(x)
    out[..., 0] = even * cos[:, None, :] - odd * sin[:, None, :]
    out[..., 1] = even * sin[:, None, :] + odd * cos[:, None, :]
    return out.reshape(n, heads * head_dim)


def _attend(q: np.ndarray, K: np.ndarray, V: np.ndarray, positions: np.ndarray,
            q_position: int, heads: int, head_dim: int,
            masked: np.ndarray | None = None,
            apply_rotary: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Multi-head attention of one query over a cached K/V block.

    ``masked`` marks entries whose logits are forced to -inf before softmax.
    Returns (concatenated head outputs, per-head weights); the weights row for
    each head sums to 1.
    """
    n = K.shape[0]
    if apply_rotary:
        q = _rotary(q[None, :], np.array([q_position]), heads, head_dim)[0]
        K = _rotary(K, positions, heads, head_dim)
    qh = q.reshape(heads, head_dim)
    Kh = K.reshape(n, heads, head_dim)
    Vh = V.reshape(n, heads, head_dim)
    logits = np.einsum("nhd,hd->hn", Kh, qh) / np.sqrt(head_dim)
    if masked is not None and masked.any():
        logits[:, masked] = -np.inf
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    out = np.einsum("hn,nhd->hd", w, Vh)
    return out.reshape(heads * head_dim), w


def decode_step(model: ToyModel, cache: KVCache, x: np.ndarray, token_id: int) -> np.ndarray:
    """One decode step over a (possibly compacting) cache.

    Per layer: project q/k/v from the running residual, append (k, v) through
    the cache's append path (which may compact first), attend over everything
    the layer still retains, and add the output projection back into the
    residual.  Returns the final residual.
    """
    cfg = model.cfg
    if cache.layers != cfg.layers:
        raise ValueError(f"cache has {cache.layers} layers, model has {cfg.layers}")
    if cache.kv_width != cfg.width:
        raise ValueError(f"cache kv_width {cache.kv_width} != model width {cfg.width}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cfg.width,):
        raise ValueError(f"input must have shape ({cfg.width},), got {x.shape}")

    mode = cfg.position_mode
    cache.begin_append(token_id)
    for layer in range(cfg.layers):
        w = model.weights[layer]
        q = w["q"] @ x
        k = w["k"] @ x
        v = w["v"] @ x
        cache.append_layer(layer, k, v)
        K, V = cache.layer_kv(layer)
        positions = cache.positions(layer, mode)
        q_pos = int(positions[-1])
        out, _ = _attend(q, K, V, positions, q_pos, cfg.heads, cfg.head_dim,
                         apply_rotary=mode is not PositionMode.NONE)
        x = x + w["o"] @ out
    cache.finish_append()
    return x


class DecodeHistory:
    """Every KV entry a masked-full run has ever produced, per layer."""

    def __init__(self, layers: int):
        self.token_ids: list[list[int]] = [[] for _ in range(layers)]
        self.keys: list[list[np.ndarray]] = [[] for _ in range(layers)]
        self.values: list[list[np.ndarray]] = [[] for _ in range(layers)]

    def append(self, layer: int, token_id: int, key: np.ndarray, value: np.ndarray) -> None:
        self.token_ids[layer].append(token_id)
        self.keys[layer].append(key)
        self.values[layer].append(value)

    def layer(self, layer: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (np.array(self.keys[layer]), np.array(self.values[layer]),
                np.array(self.token_ids[layer], dtype=np.int64))


def masked_full_decode(model: ToyModel, history: DecodeHistory,
                       evicted: set[tuple[int, int]], x: np.ndarray,
                       token_id: int) -> np.ndarray:
    """Decode over the full history, suppressing evicted (layer, token_id) entries.

    The computation mirrors :func:`decode_step` exactly, with additive -inf
    logits standing in for eviction.  Only absolute-original positions are
    supported: cache-relative indices differ between the compacted and the
    masked views, so equivalence holds only in absolute mode.
    """
    cfg = model.cfg
    if cfg.position_mode is not PositionMode.ABSOLUTE_ORIGINAL:
        raise ValueError(
            "masked_full_decode supports PositionMode.ABSOLUTE_ORIGINAL only"
        )
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cfg.width,):
        raise ValueError(f"input must have shape ({cfg.width},), got {x.shape}")

    for layer in range(cfg.layers):
        w = model.weights[layer]
        q = w["q"] @ x
        k = w["k"] @ x
        v = w["v"] @ x
        history.append(layer, token_id, k, v)
        K, V, ids = history.layer(layer)
        masked = None
        if evicted:
            masked = np.fromiter(((layer, int(t)) in evicted for t in ids),
                                 dtype=bool, count=len(ids))
            if masked.all():
                raise ValueError(f"all entries of layer {layer} evicted")
        out, _ = _attend(q, K, V, ids, token_id, cfg.heads, cfg.head_dim, masked=masked)
        x = x + w["o"] @ out
    return x
