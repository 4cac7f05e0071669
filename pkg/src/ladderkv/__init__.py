"""Memory-bounded KV-cache retention: ladder patterns, iterative compaction,
a deterministic attention oracle, coverage metrics, and a stream simulator."""

from .pattern import (
    GeometryError,
    LadderConfig,
    LayerWindow,
    PatternKind,
    RetentionMask,
    is_retained,
    materialize,
    random_pattern,
    segment_window,
)
from .kvcache import (
    BudgetExhaustedError,
    CompactionEvent,
    KVCache,
    KVEntry,
    NoProgressError,
    PositionMode,
    new_cache,
)
from .refmodel import (
    DecodeHistory,
    ToyModel,
    ToyModelConfig,
    build_model,
    decode_step,
    masked_full_decode,
    splitmix64_next,
    token_embeddings,
)
from .metrics import CoverageReport, ParetoPoint, coverage_report, pareto_front, survival_profile
from .simulator import (
    SimConfig,
    SweepResult,
    Trace,
    history_mask,
    run_stream,
    sliding_window_run,
    streaming_run_kind,
    sweep,
)
from .rng import SplitMix64

__version__ = "0.1.0"

__all__ = [
    "GeometryError", "LadderConfig", "LayerWindow", "PatternKind", "RetentionMask",
    "is_retained", "materialize", "random_pattern", "segment_window",
    "BudgetExhaustedError", "CompactionEvent", "KVCache", "KVEntry",
    "NoProgressError", "PositionMode", "new_cache",
    "DecodeHistory", "ToyModel", "ToyModelConfig", "build_model", "decode_step",
    "masked_full_decode", "splitmix64_next", "token_embeddings",
    "CoverageReport", "ParetoPoint", "coverage_report", "pareto_front", "survival_profile",
    "SimConfig", "SweepResult", "Trace", "history_mask", "run_stream",
    "sliding_window_run", "streaming_run_kind", "sweep",
    "SplitMix64",
]
