"""Retention geometries for memory-bounded KV caches.

A retention pattern decides, for every (layer, slot) cell of a cache, whether
the cached entry survives compaction.  Four families are provided:

* ``full``      -- keep everything (no eviction; the memory-unbounded baseline).
* ``streaming`` -- per layer, keep the leading sink slots plus a fixed-length
  window of the most recent slots (recency-based baseline).
* ``ladder``    -- slots are grouped into width-W segments and each segment is
  retained by a span of S consecutive layers; consecutive segments shift their
  layer span upward by S - O, cycling through the layer stack.  Under a fixed
  per-layer budget this spreads retained tokens across layers, so the cache
  covers a much longer stretch of the stream than a recency window.
* ``random``    -- per layer, a seeded uniform sample of non-overlapping
  width-W segments (used as the comparison population for pattern search).

Patterns are immutable value objects; masks are materialized as boolean
layer x slot grids.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .rng import SplitMix64

__all__ = [
    "GeometryError",
    "LadderConfig",
    "LayerWindow",
    "PatternKind",
    "RetentionMask",
    "segment_window",
    "is_retained",
    "materialize",
    "random_pattern",
]


class GeometryError(ValueError):
    """Raised when a pattern configuration or request is geometrically invalid."""


@dataclass(frozen=True)
class LadderConfig:
    """Geometry of the ladder retention pattern.

    Attributes:
        layers: number of decoder layers (rows of the retention grid).
        span: number of consecutive layers retaining each token segment.
        overlap: layers shared by the spans of consecutive segments.
        budget: maximum cached slots per layer; the compaction trigger.
        segment_width: tokens per segment (granularity of retention decisions).
        sinks: leading slots retained by every layer, always.
        recent_exempt: trailing slots retained by every layer, always.
    """

    layers: int
    span: int
    overlap: int
    budget: int
    segment_width: int = 16
    sinks: int = 0
    recent_exempt: int | None = None

    def __post_init__(self):
        if self.recent_exempt is None:
            # Default: exempt one full segment so the newest tokens stay
            # visible to all layers between compactions.
            object.__setattr__(self, "recent_exempt", self.segment_width)
        if self.layers < 1:
            raise GeometryError(f"layers must be >= 1, got {self.layers}")
        if not 1 <= self.span <= self.layers:
            raise GeometryError(
                f"span must satisfy 1 <= span <= layers, got span={self.span} layers={self.layers}"
            )
        if not 0 <= self.overlap < self.span:
            raise GeometryError(
                f"overlap must satisfy 0 <= overlap < span, got {self.overlap}"
            )
        if self.segment_width < 1:
            raise GeometryError(f"segment_width must be >= 1, got {self.segment_width}")
        if self.sinks < 0 or self.recent_exempt < 0:
            raise GeometryError("sinks and recent_exempt must be >= 0")
        if self.budget < self.sinks + self.recent_exempt + self.segment_width:
            raise GeometryError(
                f"budget {self.budget} below sinks + recent_exempt + segment_width "
                f"= {self.sinks + self.recent_exempt + self.segment_width}"
            )

    @property
    def step(self) -> int:
        """Layer shift between the spans of consecutive segments."""
        return self.span - self.overlap


@dataclass(frozen=True)
class LayerWindow:
    """Half-open interval of layers retaining one token segment.

    The interval lives on the layer cycle: ``end`` may exceed the layer count,
    in which case the window wraps around to layer 0.  ``covers`` implements
    the cyclic membership test.
    """

    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start

    def covers(self, layer: int, n_layers: int) -> bool:
        return (layer - self.start) % n_layers < self.length

    def layer_set(self, n_layers: int) -> frozenset[int]:
        return frozenset((self.start + i) % n_layers for i in range(self.length))


@dataclass(frozen=True)
class PatternKind:
    """Selector for a retention policy family.

    ``seed`` and ``ratio`` apply to random patterns only.  ``window`` applies
    to streaming only: the number of trailing non-sink slots the live eviction
    keeps.  When unset it defaults to budget - sinks, which makes standalone
    compaction at exactly the budget a no-op (and therefore an error); live
    stream drivers pass a smaller window so eviction can make progress.
    """

    kind: str
    seed: int = 0
    ratio: float | None = None
    window: int | None = None

    _KINDS = ("full", "streaming", "ladder", "random")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise GeometryError(f"unknown pattern kind {self.kind!r}")

    @classmethod
    def full(cls) -> "PatternKind":
        return cls("full")

    @classmethod
    def streaming(cls, window: int | None = None) -> "PatternKind":
        return cls("streaming", window=window)

    @classmethod
    def ladder(cls) -> "PatternKind":
        return cls("ladder")

    @classmethod
    def random(cls, seed: int, ratio: float | None = None) -> "PatternKind":
        return cls("random", seed=seed & 0xFFFFFFFFFFFFFFFF, ratio=ratio)

    def __str__(self) -> str:
        if self.kind == "random":
            return f"random[seed={self.seed:#x}]"
        return self.kind


class RetentionMask:
    """Materialized (layer x slot) retention grid.

    ``bits[l, s]`` is True when layer ``l`` retains slot ``s``.  Sink slots and
    recency-exempt slots are set in every layer by construction.
    """

    def __init__(self, bits: np.ndarray):
        if bits.ndim != 2 or bits.dtype != bool:
            raise GeometryError("mask bits must be a 2-D boolean array")
        self.bits = bits

    @property
    def layers(self) -> int:
        return self.bits.shape[0]

    @property
    def slots(self) -> int:
        return self.bits.shape[1]

    def per_layer_popcount(self) -> np.ndarray:
        return self.bits.sum(axis=1)

    def per_slot_layers(self) -> np.ndarray:
        return self.bits.sum(axis=0)

    def total_cells(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other) -> bool:
        return isinstance(other, RetentionMask) and np.array_equal(self.bits, other.bits)


def segment_window(j: int, cfg: LadderConfig) -> LayerWindow:
    """Layer window retaining token segment ``j``.

    Segment 0 starts at layer 0; each subsequent segment shifts its window up
    by ``cfg.step`` layers, wrapping around the layer cycle.  Every window has
    length exactly min(span, layers), so per-layer coverage stays balanced no
    matter how long the pattern extends -- in the worst case the most important
    tokens land on the least-covered layer, so balance is what keeps the
    retention floor up.
    """
    if j < 0:
        raise GeometryError(f"segment index must be >= 0, got {j}")
    start = (j * cfg.step) % cfg.layers
    return LayerWindow(start, start + min(cfg.span, cfg.layers))


def is_retained(cfg: LadderConfig, layer: int, slot: int, n_slots: int) -> bool:
    """Ladder retention predicate for a single (layer, slot) cell.

    True when the slot is a sink, falls in the recency exemption, or the
    layer lies in the window of the slot's segment.
    """
    if not 0 <= layer < cfg.layers:
        raise GeometryError(f"layer {layer} out of range [0, {cfg.layers})")
    if not 0 <= slot < n_slots:
        raise GeometryError(f"slot {slot} out of range [0, {n_slots})")
    if slot < cfg.sinks or slot >= n_slots - cfg.recent_exempt:
        return True
    j = (slot - cfg.sinks) // cfg.segment_width
    return segment_window(j, cfg).covers(layer, cfg.layers)


@lru_cache(maxsize=4096)
def _ladder_bits(cfg: LadderConfig, n_slots: int) -> np.ndarray:
    """Vectorized ladder mask; cached because compaction re-derives it often."""
    L = cfg.layers
    bits = np.zeros((L, n_slots), dtype=bool)
    bits[:, : min(cfg.sinks, n_slots)] = True
    bits[:, max(0, n_slots - cfg.recent_exempt):] = True
    lo, hi = cfg.sinks, n_slots - cfg.recent_exempt
    if lo < hi:
        slots = np.arange(lo, hi)
        starts = (((slots - cfg.sinks) // cfg.segment_width) * cfg.step) % L
        length = min(cfg.span, L)
        lay = np.arange(L)[:, None]
        bits[:, lo:hi] |= (lay - starts[None, :]) % L < length
    return bits


def materialize(kind: PatternKind, cfg: LadderConfig, n_slots: int) -> RetentionMask:
    """Materialize a retention mask over ``n_slots`` slots.

    Deterministic and idempotent per (kind, cfg, n_slots).
    """
    if n_slots < cfg.sinks + cfg.recent_exempt:
        raise GeometryError(
            f"n_slots {n_slots} smaller than sinks + recent_exempt "
            f"= {cfg.sinks + cfg.recent_exempt}"
        )
    L = cfg.layers
    if kind.kind == "full":
        bits = np.ones((L, n_slots), dtype=bool)
    elif kind.kind == "streaming":
        bits = np.zeros((L, n_slots), dtype=bool)
        bits[:, : cfg.sinks] = True
        window = cfg.budget - cfg.sinks
        bits[:, max(cfg.sinks, n_slots - window):] = True
    elif kind.kind == "ladder":
        bits = _ladder_bits(cfg, n_slots).copy()
    elif kind.kind == "random":
        ratio = kind.ratio if kind.ratio is not None else cfg.span / cfg.layers
        return random_pattern(kind.seed, cfg, n_slots, ratio)
    else:  # pragma: no cover - PatternKind validates
        raise GeometryError(f"unknown pattern kind {kind.kind!r}")
    return RetentionMask(bits)


def random_pattern(seed: int, cfg: LadderConfig, n_slots: int, ratio: float) -> RetentionMask:
    """Seeded random retention mask, budget-comparable with the ladder.

    Per layer, retains sinks and the recency exemption, then picks
    floor((n_slots - sinks - recent_exempt) * ratio / segment_width)
    aligned width-W segments uniformly without replacement.  Selection draws a
    64-bit key per candidate segment from a single SplitMix64 stream (layer by
    layer, in order) and keeps the segments with the smallest keys, so the
    mask is a pure function of the seed.
    """
    if not 0 < ratio <= 1:
        raise GeometryError(f"ratio must be in (0, 1], got {ratio}")
    if n_slots < cfg.sinks + cfg.recent_exempt:
        raise GeometryError("n_slots smaller than exempt region")
    L, W = cfg.layers, cfg.segment_width
    lo, hi = cfg.sinks, n_slots - cfg.recent_exempt
    width = hi - lo
    bits = np.zeros((L, n_slots), dtype=bool)
    bits[:, :lo] = True
    bits[:, hi:] = True
    if width <= 0:
        return RetentionMask(bits)
    n_segments = -(-width // W)
    n_pick = min(int(width * ratio) // W, n_segments)
    rng = SplitMix64(seed)
    for layer in range(L):
        keys = rng.next_array(n_segments)
        if n_pick == 0:
            continue
        order = np.argsort(keys, kind="stable")
        for j in order[:n_pick]:
            s0 = lo + int(j) * W
            bits[layer, s0 : min(s0 + W, hi)] = True
    return RetentionMask(bits)
