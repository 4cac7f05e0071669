"""Retention-quality metrics and Pareto analysis.

Coverage counts how many layers retain each token slot.  The minimum over
non-exempt slots is the retention floor: the worst case is that the tokens a
task needs land on the least-covered slots, so the floor -- not the mean -- is
what a pattern should maximize under a given cell budget.  The Pareto front
over (cache_cells, min_coverage) compares pattern families on exactly that
trade-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pattern import GeometryError, LadderConfig, RetentionMask

__all__ = [
    "CoverageReport",
    "ParetoPoint",
    "coverage_report",
    "survival_profile",
    "pareto_front",
]


@dataclass(frozen=True)
class CoverageReport:
    per_token_layers: np.ndarray      # retaining-layer count per slot
    min_coverage: int                 # floor over non-exempt slots
    mean_coverage: float              # mean over all slots
    distinct_tokens: int              # slots retained by at least one layer
    per_layer_occupancy: np.ndarray
    total_cells: int


def coverage_report(mask: RetentionMask, cfg: LadderConfig) -> CoverageReport:
    """Coverage statistics of a mask.

    Sinks and recency-exempt slots are pinned to full coverage by
    construction, so they are excluded from the minimum.
    """
    if mask.layers != cfg.layers:
        raise GeometryError(
            f"mask has {mask.layers} layers, config has {cfg.layers}"
        )
    per_slot = mask.per_slot_layers()
    lo, hi = cfg.sinks, mask.slots - cfg.recent_exempt
    inner = per_slot[lo:hi] if hi > lo else per_slot
    return CoverageReport(
        per_token_layers=per_slot,
        min_coverage=int(inner.min()) if inner.size else 0,
        mean_coverage=float(per_slot.mean()) if per_slot.size else 0.0,
        distinct_tokens=int((per_slot > 0).sum()),
        per_layer_occupancy=mask.per_layer_popcount(),
        total_cells=mask.total_cells(),
    )


def survival_profile(trace) -> np.ndarray:
    """Per-token retaining-layer counts at each compaction of a trace.

    Returns an (n_events, n_tokens) int array: entry [e, t] is the number of
    layers retaining token t right after compaction e, or -1 if the token had
    not been appended yet.  Counts are non-increasing down each column once a
    token exists.  Memory grows with events x tokens, so profile short runs.
    """
    if trace.survivors is None:
        raise ValueError("trace carries no survival records")
    n_events = len(trace.survivors)
    n_tokens = trace.steps_completed
    profile = np.full((n_events, n_tokens), -1, dtype=np.int32)
    for e, per_layer in enumerate(trace.survivors):
        step = trace.events[e].step
        counts = np.zeros(n_tokens, dtype=np.int32)
        for ids in per_layer:
            counts[ids] += 1
        profile[e, :step] = counts[:step]
    return profile


@dataclass(frozen=True)
class ParetoPoint:
    cache_cells: int
    min_coverage: float
    label: str


def pareto_front(points: list[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated subset under (minimize cache_cells, maximize min_coverage).

    A point is dominated when some other point has cells <= and coverage >=
    with at least one strict.  Points equal on both axes are all kept.  Output
    is ordered by cache_cells, preserving input order within ties.
    """
    if not points:
        return []
    order = sorted(range(len(points)), key=lambda i: points[i].cache_cells)
    front: list[int] = []
    best_cov = -np.inf  # best coverage among strictly cheaper points
    i = 0
    while i < len(order):
        # group of equal cache_cells
        j = i
        cells = points[order[i]].cache_cells
        while j < len(order) and points[order[j]].cache_cells == cells:
            j += 1
        group = order[i:j]
        group_max = max(points[g].min_coverage for g in group)
        if group_max > best_cov:
            front.extend(g for g in group if points[g].min_coverage == group_max)
            best_cov = group_max
        i = j
    front.sort()  # restore input order; cells ordering is preserved by dominance
    return sorted((points[g] for g in front), key=lambda p: p.cache_cells)
