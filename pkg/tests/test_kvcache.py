"""KV cache behavior: triggers, compaction, budget safety, decay.

``replay_stream`` is an independent slot-by-slot re-implementation of the
retention rules (plain loops, no library calls); the decay and replay tests
compare the library's survival sets against it entry for entry.
"""

import numpy as np
import pytest

from ladderkv import (
    BudgetExhaustedError,
    GeometryError,
    LadderConfig,
    NoProgressError,
    PatternKind,
    PositionMode,
    new_cache,
)


def cfg(L, S, O, B, W=1, A=0, R=0):
    return LadderConfig(layers=L, span=S, overlap=O, budget=B,
                        segment_width=W, sinks=A, recent_exempt=R)


# -- independent replay (no library imports beyond the config values) --------

def replay_stream(L, S, O, B, W, A, R, T):
    """Slot-by-slot re-derivation of ladder retention over a T-token stream.

    Returns the list of per-compaction survival sets: one list per event, one
    id-list per layer.
    """
    step = S - O
    ids = [[] for _ in range(L)]
    survival = []
    for t in range(T):
        if max(len(x) for x in ids) >= B:
            for layer in range(L):
                n = len(ids[layer])
                kept = []
                for slot in range(n):
                    if slot < A or slot >= n - R:
                        kept.append(ids[layer][slot])
                        continue
                    start = (((slot - A) // W) * step) % L
                    if (layer - start) % L < S:
                        kept.append(ids[layer][slot])
                ids[layer] = kept
            survival.append([list(x) for x in ids])
        for layer in range(L):
            ids[layer].append(t)
    return survival, ids


def run_cache(c, policy, T, capture=True):
    cache = new_cache(c, policy, capture_survivors=capture)
    events = []
    for t in range(T):
        ev = cache.append(t)
        if ev:
            events.append(ev)
    return cache, events


class TestNewCache:
    def test_reference_config_valid(self):
        c = cfg(32, 8, 4, 512, W=16, A=4, R=16)
        cache = new_cache(c, PatternKind.ladder())
        assert cache.step == 0 and cache.n_compactions == 0
        assert cache.occupancies() == (0,) * 32

    def test_full_span_ladder_rejected(self):
        with pytest.raises(NoProgressError):
            new_cache(cfg(4, 4, 0, 32), PatternKind.ladder())

    def test_full_policy_never_compacts_until_budget(self):
        cache = new_cache(cfg(4, 2, 0, 8), PatternKind.full())
        for t in range(8):
            assert cache.append(t) is None
        with pytest.raises(BudgetExhaustedError):
            cache.append(8)


class TestAppend:
    def test_trigger_point_forced_by_budget(self):
        cache = new_cache(cfg(4, 2, 0, 8, A=1, R=1), PatternKind.ladder())
        for t in range(8):
            assert cache.append(t) is None
        assert cache.needs_compaction()
        event = cache.append(8)
        assert event is not None and event.step == 8

    def test_freed_per_layer_hand_enumeration(self):
        cache, events = run_cache(cfg(4, 2, 0, 8, A=1, R=1), PatternKind.ladder(), 9)
        assert len(events) == 1
        assert events[0].before == (8, 8, 8, 8)
        assert events[0].after == (5, 5, 5, 5)
        assert events[0].freed == 12

    def test_out_of_order_rejected(self):
        cache = new_cache(cfg(4, 2, 0, 8), PatternKind.ladder())
        cache.append(0)
        with pytest.raises(ValueError, match="out-of-order"):
            cache.append(2)

    def test_shape_mismatch_rejected(self):
        cache = new_cache(cfg(2, 1, 0, 8), PatternKind.ladder(), kv_width=4)
        bad = [(np.zeros(3), np.zeros(4)), (np.zeros(4), np.zeros(4))]
        with pytest.raises(ValueError):
            cache.append(0, bad)

    def test_occupancy_bounded_on_return(self):
        cache = new_cache(cfg(4, 2, 0, 8, A=1, R=1), PatternKind.ladder())
        for t in range(64):
            cache.append(t)
            assert max(cache.occupancies()) <= 8


class TestCompact:
    def test_hand_enumerated_survivors(self):
        cache, _ = run_cache(cfg(4, 2, 0, 8, A=1, R=1), PatternKind.ladder(), 9)
        # layer 0 kept slots {0,1,3,5,7} of the 8 pre-append slots, then got token 8
        assert cache.retained_token_ids(0).tolist() == [0, 1, 3, 5, 7, 8]

    def test_streaming_default_window_is_noop_at_budget(self):
        c = cfg(4, 2, 0, 8, A=4, W=1, R=1)
        cache = new_cache(c, PatternKind.streaming())
        for t in range(8):
            cache.append(t)
        with pytest.raises(NoProgressError):
            cache.compact()

    def test_streaming_smaller_window_makes_progress(self):
        c = cfg(4, 2, 0, 8, A=4, W=1, R=1)
        cache = new_cache(c, PatternKind.streaming(window=3))
        for t in range(16):
            cache.append(t)
        ids = cache.retained_token_ids(0)
        assert ids[:4].tolist() == [0, 1, 2, 3]        # sinks pinned
        assert max(cache.occupancies()) <= 8

    def test_streaming_window_below_exemption_rejected(self):
        c = cfg(4, 2, 0, 8, A=2, W=1, R=2)
        cache = new_cache(c, PatternKind.streaming(window=1))
        for t in range(8):
            cache.append(t)
        with pytest.raises(GeometryError):
            cache.append(8)

    def test_empty_cache_rejected(self):
        cache = new_cache(cfg(4, 2, 0, 8), PatternKind.ladder())
        with pytest.raises(NoProgressError):
            cache.compact()

    def test_second_compaction_remasks_oldest(self):
        c = cfg(8, 2, 0, 64, W=4, A=2, R=4)
        cache, events = run_cache(c, PatternKind.ladder(), 400)
        assert len(events) >= 2
        births = cache.birth_compactions(0)
        # entries born before the last compaction sit ahead of newer ones
        assert all(np.diff(births) >= 0)


class TestNeedsCompaction:
    def test_thresholds(self):
        cache = new_cache(cfg(4, 2, 0, 8), PatternKind.ladder())
        assert not cache.needs_compaction()
        for t in range(7):
            cache.append(t)
        assert not cache.needs_compaction()
        cache.append(7)
        assert cache.needs_compaction()


class TestInspection:
    def test_fresh_cache_identity(self):
        cache = new_cache(cfg(4, 2, 0, 8), PatternKind.ladder())
        for t in range(5):
            cache.append(t)
        for layer in range(4):
            assert cache.retained_token_ids(layer).tolist() == [0, 1, 2, 3, 4]

    def test_sinks_always_a_prefix(self):
        cache, _ = run_cache(cfg(4, 2, 0, 8, A=2, R=1), PatternKind.ladder(), 50)
        for layer in range(4):
            assert cache.retained_token_ids(layer)[:2].tolist() == [0, 1]

    def test_bad_layer_index(self):
        cache = new_cache(cfg(4, 2, 0, 8), PatternKind.ladder())
        with pytest.raises(IndexError):
            cache.retained_token_ids(4)

    def test_positions_modes(self):
        cache, _ = run_cache(cfg(4, 2, 0, 8, A=1, R=1), PatternKind.ladder(), 9)
        ids = cache.retained_token_ids(0)
        assert np.array_equal(cache.positions(0, PositionMode.ABSOLUTE_ORIGINAL), ids)
        assert cache.positions(0, PositionMode.CACHE_RELATIVE).tolist() == list(range(len(ids)))
        assert not cache.positions(0, PositionMode.NONE).any()

    def test_layers_can_disagree_in_absolute_mode(self):
        cache, _ = run_cache(cfg(4, 2, 0, 8, A=1, R=1), PatternKind.ladder(), 9)
        a = cache.positions(0, PositionMode.ABSOLUTE_ORIGINAL)
        b = cache.positions(2, PositionMode.ABSOLUTE_ORIGINAL)
        assert a.tolist() != b.tolist()

    def test_entries_view(self):
        cache = new_cache(cfg(2, 1, 0, 8), PatternKind.ladder(), kv_width=2)
        cache.append(0, [(np.ones(2), np.zeros(2)), (np.zeros(2), np.ones(2))])
        e = cache.entries(0)[0]
        assert e.token_id == 0 and e.birth_compaction == 0
        assert e.key.tolist() == [1.0, 1.0]


class TestInvariants:
    def test_budget_safety_long_run(self):
        c = cfg(8, 2, 0, 64, W=4, A=2, R=4)
        cache = new_cache(c, PatternKind.ladder())
        for t in range(20000):
            cache.append(t)
            assert max(cache.occupancies()) <= 64

    def test_eviction_monotonic_never_reappears(self):
        c = cfg(8, 2, 0, 64, W=4, A=2, R=4)
        cache = new_cache(c, PatternKind.ladder())
        present_before = [set() for _ in range(8)]
        for t in range(3000):
            ev = cache.append(t)
            if ev:
                for layer in range(8):
                    now = set(cache.retained_token_ids(layer).tolist())
                    dropped = present_before[layer] - now
                    assert not (dropped & now)
                    present_before[layer] = now

    def test_sink_permanence(self):
        c = cfg(8, 2, 0, 64, W=4, A=2, R=4)
        cache, events = run_cache(c, PatternKind.ladder(), 5000)
        assert len(events) > 10
        for layer in range(8):
            assert cache.retained_token_ids(layer)[:2].tolist() == [0, 1]

    def test_progress_lower_bound(self):
        c = cfg(8, 2, 0, 64, W=4, A=2, R=4)
        cache = new_cache(c, PatternKind.ladder())
        for t in range(3000):
            ev = cache.append(t)
            if ev:
                for layer in range(8):
                    n = ev.before[layer]
                    floor = (n - c.sinks - c.recent_exempt) * (1 - c.span / c.layers)
                    assert ev.before[layer] - ev.after[layer] >= int(floor) - 2 * c.segment_width

    def test_replay_reproduces_survival_sets_exactly(self):
        L, S, O, B, W, A, R, T = 8, 2, 0, 64, 4, 2, 4, 1500
        cache = new_cache(cfg(L, S, O, B, W=W, A=A, R=R), PatternKind.ladder(),
                          capture_survivors=True)
        lib_sets = []
        for t in range(T):
            ev = cache.append(t)
            if ev:
                lib_sets.append([ids.tolist() for ids in ev.survivors])
        ref_sets, _ = replay_stream(L, S, O, B, W, A, R, T)
        assert lib_sets == ref_sets

    def test_older_cohorts_compressed_at_least_as_much(self):
        # pooled fraction of any old-cohort prefix never exceeds the newest
        # cohort's fraction, and each cohort's fraction only falls over time
        c = cfg(8, 2, 0, 64, W=4, A=2, R=4)
        cache = new_cache(c, PatternKind.ladder(), capture_survivors=True)
        boundaries = [0]
        history: list[list[float]] = []
        for t in range(2000):
            ev = cache.append(t)
            if ev:
                boundaries.append(t)
                sizes = [boundaries[i + 1] - boundaries[i] for i in range(len(boundaries) - 1)]
                cells = []
                for i in range(len(sizes)):
                    lo, hi = boundaries[i], boundaries[i + 1]
                    cells.append(sum(
                        int(((ids >= lo) & (ids < hi)).sum()) for ids in ev.survivors
                    ))
                fracs = [cl / (sz * c.layers) for cl, sz in zip(cells, sizes)]
                newest = fracs[-1]
                for k in range(1, len(fracs)):
                    pooled = sum(cells[:-k]) / (sum(sizes[:-k]) * c.layers)
                    assert pooled <= newest + 1e-12
                history.append(fracs)
        # per-cohort decay across compactions
        for i in range(len(history[-1])):
            series = [f[i] for f in history if len(f) > i]
            assert all(a >= b - 1e-12 for a, b in zip(series, series[1:]))
