"""Token-stream driver, evaluation protocols, and the random-pattern sweep.

Runs are structural by default: payloads are zero-width and only retention
bookkeeping happens, so multi-hundred-thousand-step budget checks finish in
seconds.  Supplying a model config switches to numeric mode, where the toy
decoder produces real KV payloads through the same cache; retention decisions
never read payloads, so both modes produce identical traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .kvcache import BudgetExhaustedError, CompactionEvent, new_cache
from .metrics import CoverageReport, ParetoPoint, coverage_report, pareto_front
from .pattern import LadderConfig, PatternKind, RetentionMask, materialize
from .refmodel import ToyModelConfig, build_model, decode_step, token_embeddings
from .rng import SplitMix64

__all__ = [
    "SimConfig",
    "TraceRow",
    "Trace",
    "run_stream",
    "sliding_window_run",
    "SweepResult",
    "sweep",
    "history_mask",
    "streaming_run_kind",
]

PROTOCOL_TOKEN = "token"
PROTOCOL_WINDOW = "window"


def streaming_run_kind(cfg: LadderConfig) -> PatternKind:
    """Streaming policy sized for live runs.

    The analysis window (budget - sinks) would free nothing when the trigger
    fires at exactly the budget, so live streams shrink it by one segment
    width: eviction then frees segment_width slots per compaction and
    occupancy rides within one segment of the budget.
    """
    return PatternKind.streaming(window=cfg.budget - cfg.sinks - cfg.segment_width)


@dataclass(frozen=True)
class SimConfig:
    cache: LadderConfig
    policy: PatternKind
    steps: int
    model: ToyModelConfig | None = None
    protocol: str = PROTOCOL_TOKEN
    window: int = 256
    snapshot_every: int = 256
    record_survival: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.protocol not in (PROTOCOL_TOKEN, PROTOCOL_WINDOW):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.protocol == PROTOCOL_WINDOW and self.window < 1:
            raise ValueError("window must be >= 1")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")


class TraceRow(NamedTuple):
    step: int
    event: str          # append | compact | snapshot
    layer: int
    occupancy: int
    n_compactions: int


@dataclass
class Trace:
    rows: list[TraceRow]
    events: list[CompactionEvent]
    survivors: list[tuple[np.ndarray, ...]] | None
    budget_exhausted_step: int | None
    steps_completed: int
    coverage: CoverageReport
    final_retained: RetentionMask

    def max_occupancy(self) -> int:
        return max((r.occupancy for r in self.rows), default=0)

    def retention_signature(self):
        """Everything retention-related, for trace-equality comparisons."""
        surv = None
        if self.survivors is not None:
            surv = [[ids.tolist() for ids in per_layer] for per_layer in self.survivors]
        return (self.rows, self.events, surv, self.budget_exhausted_step,
                self.steps_completed)


def history_mask(cache, steps: int) -> RetentionMask:
    """Layer x token grid of what the cache still retains of a ``steps``-long stream."""
    bits = np.zeros((cache.layers, steps), dtype=bool)
    for layer in range(cache.layers):
        ids = cache.retained_token_ids(layer)
        bits[layer, ids[ids < steps]] = True
    return RetentionMask(bits)


def _chunks(total: int, size: int):
    start = 0
    while start < total:
        end = min(start + size, total)
        yield start, end
        start = end


def run_stream(cfg: SimConfig) -> Trace:
    """Drive ``cfg.steps`` tokens through the policy and record the trace.

    Rows are emitted at the snapshot cadence, after every compaction, and for
    the append that follows one; a full-cache policy hitting its budget ends
    the run early with the exhaustion step recorded (the out-of-memory
    analog), returning the partial trace.
    """
    return _drive(cfg, cfg.steps if cfg.protocol == PROTOCOL_TOKEN else cfg.window)


def sliding_window_run(cfg: SimConfig) -> Trace:
    """Window-protocol run: tokens are processed in consecutive chunks.

    The compacted cache persists across chunks and appends happen token by
    token inside each chunk, so retention decisions are identical to
    token-by-token processing of the same stream.
    """
    if cfg.protocol != PROTOCOL_WINDOW:
        raise ValueError("sliding_window_run requires the window protocol")
    return _drive(cfg, cfg.window)


def _drive(cfg: SimConfig, chunk_size: int) -> Trace:
    policy = cfg.policy
    if policy.kind == "streaming" and policy.window is None:
        policy = streaming_run_kind(cfg.cache)
    numeric = cfg.model is not None
    model = build_model(cfg.model) if numeric else None
    if numeric and cfg.model.layers != cfg.cache.layers:
        raise ValueError("model and cache layer counts differ")
    cache = new_cache(cfg.cache, policy,
                      kv_width=model.width if numeric else 0,
                      capture_survivors=cfg.record_survival)
    embeds = token_embeddings(model, cfg.steps) if numeric else None

    rows: list[TraceRow] = []
    events: list[CompactionEvent] = []
    survivors: list[tuple[np.ndarray, ...]] | None = [] if cfg.record_survival else None
    exhausted: int | None = None

    def emit(step: int, kind: str):
        for layer, occ in enumerate(cache.occupancies()):
            rows.append(TraceRow(step, kind, layer, occ, cache.n_compactions))

    done = 0
    for lo, hi in _chunks(cfg.steps, chunk_size):
        for t in range(lo, hi):
            try:
                if numeric:
                    before = cache.n_compactions
                    decode_step(model, cache, embeds[t], t)
                    event = cache.last_event if cache.n_compactions > before else None
                else:
                    event = cache.append(t)
            except BudgetExhaustedError:
                exhausted = t
                break
            if event is not None:
                events.append(event)
                if survivors is not None:
                    survivors.append(event.survivors)
                for layer, occ in enumerate(event.after):
                    rows.append(TraceRow(t, "compact", layer, occ, cache.n_compactions))
                emit(t, "append")
            done = t + 1
            if done % cfg.snapshot_every == 0:
                emit(t, "snapshot")
        if exhausted is not None:
            break
    if done and done % cfg.snapshot_every != 0:
        emit(done - 1, "snapshot")

    grid = history_mask(cache, max(done, 1))
    return Trace(
        rows=rows,
        events=events,
        survivors=survivors,
        budget_exhausted_step=exhausted,
        steps_completed=done,
        coverage=coverage_report(grid, cfg.cache),
        final_retained=grid,
    )


@dataclass(frozen=True)
class SweepResult:
    points: list[ParetoPoint]
    front: list[ParetoPoint]
    seed: int
    n_random: int


DEFAULT_SWEEP_RATIOS = (0.125, 0.25, 0.375, 0.5)


def sweep(seed: int, n: int, cfg: LadderConfig, n_slots: int,
          ratios: tuple[float, ...] = DEFAULT_SWEEP_RATIOS) -> SweepResult:
    """Score ``n`` random retention patterns against the ladder and streaming.

    Pattern i gets a sub-seed from a SplitMix64 stream over ``seed`` and the
    ratio ``ratios[i % len(ratios)]``; every pattern is scored by
    (total_cells, min_coverage).  Deterministic per seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    points: list[ParetoPoint] = []

    def score(mask: RetentionMask, label: str) -> ParetoPoint:
        rep = coverage_report(mask, cfg)
        return ParetoPoint(rep.total_cells, rep.min_coverage, label)

    points.append(score(materialize(PatternKind.ladder(), cfg, n_slots), "ladder"))
    points.append(score(materialize(PatternKind.streaming(), cfg, n_slots), "streaming"))
    rng = SplitMix64(seed)
    for i in range(n):
        sub_seed = rng.next()
        ratio = ratios[i % len(ratios)]
        kind = PatternKind.random(sub_seed, ratio)
        points.append(score(materialize(kind, cfg, n_slots), f"random-{i:04d}"))
    return SweepResult(points=points, front=pareto_front(points), seed=seed, n_random=n)
