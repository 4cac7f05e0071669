"""Budgeted per-layer KV store with iterative ladder compaction.

The cache holds one ordered entry sequence per decoder layer under a fixed
per-layer slot budget.  When any layer reaches the budget, the retention
pattern is applied to the *current slot positions* of every layer and unset
slots are dropped.  Because surviving entries re-pack into fresh slots, each
successive compaction re-masks what earlier ones kept: old content compounds
toward a span/layers fraction per pass while recent content stays dense, and
the cache never exceeds its budget no matter how long the stream runs.

Entries record the original stream index (``token_id``) and the number of
compactions the cache had survived when they were appended
(``birth_compaction``), which is what the decay metrics consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .pattern import GeometryError, LadderConfig, PatternKind
from .pattern import _ladder_bits

__all__ = [
    "BudgetExhaustedError",
    "NoProgressError",
    "PositionMode",
    "KVEntry",
    "CompactionEvent",
    "KVCache",
    "new_cache",
]


class BudgetExhaustedError(RuntimeError):
    """A full-cache policy hit its budget: the out-of-memory analog."""


class NoProgressError(RuntimeError):
    """Compaction could not free any space."""


class PositionMode(Enum):
    """How retained entries are position-indexed after eviction."""

    ABSOLUTE_ORIGINAL = "absolute"
    CACHE_RELATIVE = "relative"
    NONE = "none"


@dataclass(frozen=True)
class KVEntry:
    """One cached key/value pair with its provenance."""

    token_id: int
    key: np.ndarray
    value: np.ndarray
    birth_compaction: int


@dataclass(frozen=True)
class CompactionEvent:
    """Occupancy bookkeeping for one compaction."""

    step: int
    before: tuple[int, ...]
    after: tuple[int, ...]
    freed: int
    survivors: tuple[np.ndarray, ...] | None = field(default=None, compare=False)


class KVCache:
    """Per-layer KV sequences under a slot budget.

    Single-writer: mutating calls require exclusive access.  Construct via
    :func:`new_cache`.

    Appends between compactions hit every layer with the same token, so in
    structural mode (``kv_width == 0``) they are tracked as a shared pending
    tail and only materialized per layer when a compaction or an inspection
    needs them.  That keeps million-step budget-safety runs cheap.
    """

    def __init__(self, cfg: LadderConfig, policy: PatternKind, kv_width: int,
                 capture_survivors: bool = False):
        self.cfg = cfg
        self.policy = policy
        self.kv_width = kv_width
        self.capture_survivors = capture_survivors
        self.n_compactions = 0
        self.step = 0
        self.last_event: CompactionEvent | None = None
        L = cfg.layers
        self._ids = [np.empty(0, dtype=np.int64) for _ in range(L)]
        self._births = [np.empty(0, dtype=np.int64) for _ in range(L)]
        self._keys = [[] for _ in range(L)] if kv_width else None
        self._vals = [[] for _ in range(L)] if kv_width else None
        self._pending = 0          # tokens appended to all layers since last flush
        self._max_stored = 0       # max per-layer stored length, cached for the trigger
        self._append_open = False
        self._append_filled = 0

    # -- inspection ---------------------------------------------------------

    @property
    def layers(self) -> int:
        return self.cfg.layers

    def occupancy(self, layer: int) -> int:
        self._check_layer(layer)
        return len(self._ids[layer]) + self._pending

    def occupancies(self) -> tuple[int, ...]:
        return tuple(len(ids) + self._pending for ids in self._ids)

    def needs_compaction(self) -> bool:
        return self._max_stored + self._pending >= self.cfg.budget

    def retained_token_ids(self, layer: int) -> np.ndarray:
        """Strictly increasing token_ids currently cached at ``layer``."""
        self._check_layer(layer)
        if not self._pending:
            return self._ids[layer].copy()
        tail = np.arange(self.step - self._pending, self.step, dtype=np.int64)
        return np.concatenate([self._ids[layer], tail])

    def birth_compactions(self, layer: int) -> np.ndarray:
        self._check_layer(layer)
        if not self._pending:
            return self._births[layer].copy()
        tail = np.full(self._pending, self.n_compactions, dtype=np.int64)
        return np.concatenate([self._births[layer], tail])

    def positions(self, layer: int, mode: PositionMode) -> np.ndarray:
        """Position indices for the retained entries of ``layer``."""
        n = self.occupancy(layer)
        if mode is PositionMode.ABSOLUTE_ORIGINAL:
            return self.retained_token_ids(layer)
        if mode is PositionMode.CACHE_RELATIVE:
            return np.arange(n, dtype=np.int64)
        return np.zeros(n, dtype=np.int64)

    def entries(self, layer: int) -> list[KVEntry]:
        ids = self.retained_token_ids(layer)
        births = self.birth_compactions(layer)
        if self.kv_width:
            K, V = self.layer_kv(layer)
        else:
            empty = np.empty(0)
            K = V = [empty] * len(ids)
        return [KVEntry(int(t), K[i], V[i], int(births[i])) for i, t in enumerate(ids)]

    def layer_kv(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (occupancy, kv_width) key and value matrices for one layer."""
        self._check_layer(layer)
        if not self.kv_width:
            n = self.occupancy(layer)
            return np.empty((n, 0)), np.empty((n, 0))
        K = np.array(self._keys[layer]) if self._keys[layer] else np.empty((0, self.kv_width))
        V = np.array(self._vals[layer]) if self._vals[layer] else np.empty((0, self.kv_width))
        return K, V

    # -- mutation -----------------------------------------------------------

    def append(self, token_id: int, per_layer_kv=None) -> CompactionEvent | None:
        """Append one token's KV entries to every layer.

        Runs a compaction first when any layer sits at the budget, and returns
        that compaction's event.  ``per_layer_kv`` is a sequence of (key,
        value) pairs, one per layer; structural caches (kv_width 0) may pass
        None.
        """
        event = self.begin_append(token_id)
        if self.kv_width:
            if per_layer_kv is None or len(per_layer_kv) != self.layers:
                raise ValueError("per_layer_kv must supply one (key, value) pair per layer")
            for layer, (k, v) in enumerate(per_layer_kv):
                self.append_layer(layer, k, v)
        self.finish_append()
        return event

    def begin_append(self, token_id: int) -> CompactionEvent | None:
        """Open an append: validates order and compacts if the budget is hit."""
        if self._append_open:
            raise RuntimeError("previous append not finished")
        if token_id != self.step:
            raise ValueError(
                f"out-of-order append: expected token_id {self.step}, got {token_id}"
            )
        event = None
        if self.needs_compaction():
            if self.policy.kind == "full":
                raise BudgetExhaustedError(
                    f"full cache at per-layer budget {self.cfg.budget} on step {self.step}"
                )
            event = self.compact()
        self._append_open = True
        self._append_filled = 0
        return event

    def append_layer(self, layer: int, key: np.ndarray, value: np.ndarray) -> None:
        """Append the (key, value) pair for one layer of the open append."""
        if not self._append_open:
            raise RuntimeError("append_layer outside an open append")
        self._check_layer(layer)
        if not self.kv_width:
            raise RuntimeError("structural cache takes no per-layer payloads")
        key = np.asarray(key, dtype=np.float64)
        value = np.asarray(value, dtype=np.float64)
        if key.shape != (self.kv_width,) or value.shape != (self.kv_width,):
            raise ValueError(
                f"key/value must have shape ({self.kv_width},), got {key.shape}/{value.shape}"
            )
        self._keys[layer].append(key)
        self._vals[layer].append(value)
        # materialize id/birth immediately so mid-append inspection (the
        # decoder attends right after filling a layer) sees this token
        self._ids[layer] = np.append(self._ids[layer], self.step)
        self._births[layer] = np.append(self._births[layer], self.n_compactions)
        self._append_filled += 1

    def finish_append(self) -> None:
        if not self._append_open:
            raise RuntimeError("finish_append without begin_append")
        if self.kv_width and self._append_filled != self.layers:
            raise RuntimeError(
                f"append filled {self._append_filled} of {self.layers} layers"
            )
        self._append_open = False
        self.step += 1
        if self.kv_width:
            self._max_stored += 1   # ids were materialized in append_layer
        else:
            self._pending += 1

    def compact(self) -> CompactionEvent:
        """Apply the retention policy to current slot positions of every layer.

        Ladder: drop slots outside the materialized mask for the layer's
        occupancy (sinks and the trailing exempt slots always survive).
        Streaming: keep sinks plus the trailing window.  Dropped entries are
        never reinstated.
        """
        if self.policy.kind == "full":
            raise NoProgressError("full caches do not compact")
        self._flush_pending()
        before = tuple(len(ids) for ids in self._ids)
        if max(before, default=0) == 0:
            raise NoProgressError("nothing to compact: cache is empty")

        for layer in range(self.layers):
            n = len(self._ids[layer])
            if n == 0:
                continue
            keep = self._keep_indices(layer, n)
            if len(keep) == n:
                continue
            self._ids[layer] = self._ids[layer][keep]
            self._births[layer] = self._births[layer][keep]
            if self.kv_width:
                self._keys[layer] = [self._keys[layer][i] for i in keep]
                self._vals[layer] = [self._vals[layer][i] for i in keep]

        after = tuple(len(ids) for ids in self._ids)
        freed = sum(b - a for b, a in zip(before, after))
        if freed == 0:
            raise NoProgressError(
                "compaction freed nothing (cache fully exempt under this policy)"
            )
        self._max_stored = max(after)
        self.n_compactions += 1
        survivors = None
        if self.capture_survivors:
            survivors = tuple(ids.copy() for ids in self._ids)
        self.last_event = CompactionEvent(self.step, before, after, freed, survivors)
        return self.last_event

    # -- internals ----------------------------------------------------------

    def _keep_indices(self, layer: int, n: int) -> np.ndarray:
        cfg = self.cfg
        if self.policy.kind == "ladder":
            if n <= cfg.sinks + cfg.recent_exempt:
                return np.arange(n)
            # row view of the cached mask; cheaper than materializing per layer
            return np.flatnonzero(_ladder_bits(cfg, n)[layer])
        # streaming: sinks plus the trailing window
        window = self.policy.window if self.policy.window is not None else cfg.budget - cfg.sinks
        if window < cfg.recent_exempt:
            raise GeometryError(
                f"streaming window {window} smaller than recent_exempt {cfg.recent_exempt}"
            )
        keep = np.zeros(n, dtype=bool)
        keep[: cfg.sinks] = True
        keep[max(cfg.sinks, n - window):] = True
        return np.flatnonzero(keep)

    def _flush_pending(self) -> None:
        if not self._pending:
            return
        tail = np.arange(self.step - self._pending, self.step, dtype=np.int64)
        births = np.full(self._pending, self.n_compactions, dtype=np.int64)
        for layer in range(self.layers):
            self._ids[layer] = np.concatenate([self._ids[layer], tail])
            self._births[layer] = np.concatenate([self._births[layer], births])
        self._max_stored += self._pending
        self._pending = 0

    def _check_layer(self, layer: int) -> None:
        if not 0 <= layer < self.layers:
            raise IndexError(f"layer {layer} out of range [0, {self.layers})")


def new_cache(cfg: LadderConfig, policy: PatternKind, kv_width: int = 0,
              capture_survivors: bool = False) -> KVCache:
    """Create an empty cache, validating that the policy can make progress.

    A ladder whose span equals the layer count retains every cell, so it can
    never free space as an eviction policy; such configs are analysis-only.
    """
    if kv_width < 0:
        raise ValueError("kv_width must be >= 0")
    if policy.kind == "ladder" and cfg.span >= cfg.layers:
        raise NoProgressError(
            f"ladder with span {cfg.span} == layers {cfg.layers} can never free space"
        )
    return KVCache(cfg, policy, kv_width, capture_survivors=capture_survivors)
