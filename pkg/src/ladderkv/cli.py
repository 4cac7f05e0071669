"""Command-line front end.

Verbs:
    simulate  -- run a token stream, print a summary, optionally write the
                 trace CSV (plus a ``<trace>.survival.csv`` sidecar).
    render    -- draw a retention mask as an SVG grid.
    sweep     -- score random patterns against ladder/streaming, write CSV.
    compare   -- run several policies on the same stream and tabulate them.

Configuration comes from a TOML file with [cache], [model], [sim] and
[output] sections; ``--set section.key=value`` overrides individual entries.
Exit codes: 0 success, 1 configuration error, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import sys

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python < 3.11
    import tomli as tomllib

from .kvcache import PositionMode
from .metrics import coverage_report
from .pattern import GeometryError, LadderConfig, PatternKind, RetentionMask, materialize
from .refmodel import ToyModelConfig
from .simulator import (
    DEFAULT_SWEEP_RATIOS,
    PROTOCOL_TOKEN,
    PROTOCOL_WINDOW,
    SimConfig,
    Trace,
    run_stream,
    sliding_window_run,
    sweep,
)

__all__ = ["main", "build_retention_svg", "write_trace_csv", "write_sweep_csv"]


class ConfigError(ValueError):
    """Invalid or missing configuration."""


_POSITION_MODES = {m.value: m for m in PositionMode}


def load_config(path: str, overrides: list[str] | None = None) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    for item in overrides or []:
        key, _, raw = item.partition("=")
        if not _ or "." not in key:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        section, name = key.split(".", 1)
        data.setdefault(section, {})[name] = _parse_scalar(raw)
    return data


def _parse_scalar(raw: str):
    low = raw.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            continue
    return raw.strip()


def cache_config(data: dict) -> LadderConfig:
    section = data.get("cache")
    if not section:
        raise ConfigError("config is missing the [cache] section")
    try:
        return LadderConfig(
            layers=int(section["layers"]),
            span=int(section["span"]),
            overlap=int(section.get("overlap", 0)),
            budget=int(section["budget"]),
            segment_width=int(section.get("segment_width", 16)),
            sinks=int(section.get("sinks", 0)),
            recent_exempt=(int(section["recent_exempt"])
                           if "recent_exempt" in section else None),
        )
    except KeyError as exc:
        raise ConfigError(f"[cache] is missing required key {exc.args[0]!r}") from exc
    except GeometryError as exc:
        raise ConfigError(f"invalid [cache] geometry: {exc}") from exc


def model_config(data: dict, layers: int) -> ToyModelConfig | None:
    section = data.get("model")
    if not section:
        return None
    mode = str(section.get("position_mode", "absolute"))
    if mode not in _POSITION_MODES:
        raise ConfigError(f"unknown position_mode {mode!r}")
    try:
        return ToyModelConfig(
            layers=layers,
            heads=int(section.get("heads", 2)),
            head_dim=int(section.get("head_dim", 16)),
            seed=int(section.get("seed", 0)),
            position_mode=_POSITION_MODES[mode],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [model] section: {exc}") from exc


def policy_kind(data: dict, cache: LadderConfig) -> PatternKind:
    sim = data.get("sim", {})
    name = str(sim.get("policy", "ladder"))
    if name == "full":
        return PatternKind.full()
    if name == "streaming":
        return PatternKind.streaming()
    if name == "ladder":
        return PatternKind.ladder()
    if name == "random":
        ratio = sim.get("ratio")
        return PatternKind.random(int(sim.get("seed", 0)),
                                  float(ratio) if ratio is not None else None)
    raise ConfigError(f"unknown policy {name!r}")


def sim_config(data: dict) -> SimConfig:
    cache = cache_config(data)
    sim = data.get("sim", {})
    protocol = str(sim.get("protocol", PROTOCOL_TOKEN))
    try:
        return SimConfig(
            cache=cache,
            policy=policy_kind(data, cache),
            steps=int(sim.get("steps", 1024)),
            model=model_config(data, cache.layers),
            protocol=protocol,
            window=int(sim.get("window", 256)),
            snapshot_every=int(sim.get("snapshot_every", 256)),
            record_survival=bool(sim.get("record_survival", True)),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [sim] section: {exc}") from exc


# -- artifact writers --------------------------------------------------------

def write_trace_csv(trace: Trace, path: str) -> None:
    lines = ["step,event,layer,occupancy,n_compactions"]
    lines += [f"{r.step},{r.event},{r.layer},{r.occupancy},{r.n_compactions}"
              for r in trace.rows]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    if trace.survivors is not None:
        side = ["event_index,layer,token_id"]
        for e, per_layer in enumerate(trace.survivors):
            for layer, ids in enumerate(per_layer):
                side += [f"{e},{layer},{t}" for t in ids]
        with open(path + ".survival.csv", "w", newline="") as fh:
            fh.write("\n".join(side) + "\n")


def write_sweep_csv(result, path: str) -> None:
    on_front = {id(p) for p in result.front}
    lines = ["label,cache_cells,min_coverage,on_front"]
    lines += [f"{p.label},{p.cache_cells},{p.min_coverage},"
              f"{'true' if id(p) in on_front else 'false'}"
              for p in result.points]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


_CELL = 8
_SVG_STYLE = (".sink{fill:#7a5195}.pattern{fill:#2f9e44}.recent{fill:#1971c2}"
              ".grid{fill:#f1f3f5}.lbl{font:10px sans-serif;fill:#333}")


def build_retention_svg(mask: RetentionMask, cfg: LadderConfig) -> str:
    """Deterministic SVG of a retention mask.

    One 8x8 rect per retained cell; x is the slot index, y the layer (layer 0
    on top).  Cells are classed sink / pattern / recent so tests and styling
    key on structure rather than colors.
    """
    width = mask.slots * _CELL
    height = mask.layers * _CELL
    legend_y = height + 14
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{legend_y + 14}" shape-rendering="crispEdges">',
        f"<style>{_SVG_STYLE}</style>",
        f'<rect class="grid" x="0" y="0" width="{width}" height="{height}"/>',
    ]
    recent_lo = mask.slots - cfg.recent_exempt
    for layer in range(mask.layers):
        row = mask.bits[layer]
        for slot in range(mask.slots):
            if not row[slot]:
                continue
            cls = ("sink" if slot < cfg.sinks
                   else "recent" if slot >= recent_lo else "pattern")
            parts.append(
                f'<rect class="{cls}" x="{slot * _CELL}" y="{layer * _CELL}" '
                f'width="{_CELL}" height="{_CELL}"/>'
            )
    x = 0
    for cls, label in (("sink", "sink"), ("pattern", "pattern"), ("recent", "recent")):
        parts.append(f'<rect class="{cls}" x="{x}" y="{legend_y}" '
                     f'width="{_CELL}" height="{_CELL}"/>')
        parts.append(f'<text class="lbl" x="{x + _CELL + 3}" y="{legend_y + 8}">{label}</text>')
        x += _CELL + 3 + 7 * len(label) + 10
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# -- subcommands -------------------------------------------------------------

def cmd_simulate(args) -> int:
    data = load_config(args.config, args.set)
    cfg = sim_config(data)
    trace = sliding_window_run(cfg) if cfg.protocol == PROTOCOL_WINDOW else run_stream(cfg)
    trace_path = args.trace or data.get("output", {}).get("trace")
    if trace_path:
        write_trace_csv(trace, trace_path)
    if not args.quiet:
        rep = trace.coverage
        print(f"policy={cfg.policy} protocol={cfg.protocol} steps={trace.steps_completed}")
        print(f"compactions={len(trace.events)} max_occupancy={trace.max_occupancy()}")
        print(f"coverage min={rep.min_coverage} mean={rep.mean_coverage:.3f} "
              f"distinct_tokens={rep.distinct_tokens}")
        if trace.budget_exhausted_step is not None:
            print(f"BUDGET EXHAUSTED at step {trace.budget_exhausted_step} "
                  f"(out-of-memory analog: full cache cannot evict)")
        if trace_path:
            print(f"trace written to {trace_path}")
    return 0


def cmd_render(args) -> int:
    data = load_config(args.config, args.set)
    cache = cache_config(data)
    kind = policy_kind(data, cache)
    try:
        mask = materialize(kind, cache, args.slots)
    except GeometryError as exc:
        raise ConfigError(str(exc)) from exc
    out = args.out or data.get("output", {}).get("svg", "retention.svg")
    svg = build_retention_svg(mask, cache)
    with open(out, "w") as fh:
        fh.write(svg)
    if not args.quiet:
        print(f"{kind} mask over {args.slots} slots: {mask.total_cells()} retained cells")
        print(f"svg written to {out}")
    return 0


def cmd_sweep(args) -> int:
    data = load_config(args.config, args.set)
    cache = cache_config(data)
    sim = data.get("sim", {})
    ratios = tuple(float(r) for r in sim.get("ratios", DEFAULT_SWEEP_RATIOS))
    seed = args.seed if args.seed is not None else int(sim.get("seed", 0xC0FFEE))
    result = sweep(seed, args.n, cache, args.slots, ratios)
    out = args.out or data.get("output", {}).get("sweep", "sweep.csv")
    write_sweep_csv(result, out)
    if not args.quiet:
        front = {p.label for p in result.front}
        print(f"swept {args.n} random patterns (seed={seed:#x}) over {args.slots} slots")
        print(f"front size={len(result.front)} ladder_on_front={'ladder' in front}")
        print(f"csv written to {out}")
    return 0


def cmd_compare(args) -> int:
    data = load_config(args.config, args.set)
    base = sim_config(data)
    names = [p.strip() for p in args.policies.split(",") if p.strip()]
    if not names:
        raise ConfigError("no policies given")
    rows = []
    for name in names:
        data_p = {**data, "sim": {**data.get("sim", {}), "policy": name}}
        cfg = sim_config(data_p)
        cfg = SimConfig(cache=cfg.cache, policy=cfg.policy, steps=base.steps,
                        model=cfg.model, protocol=cfg.protocol, window=cfg.window,
                        snapshot_every=cfg.snapshot_every, record_survival=False)
        trace = sliding_window_run(cfg) if cfg.protocol == PROTOCOL_WINDOW else run_stream(cfg)
        rep = trace.coverage
        oom = (f"exhausted@{trace.budget_exhausted_step}"
               if trace.budget_exhausted_step is not None else "-")
        rows.append((name, len(trace.events), rep.distinct_tokens,
                     rep.min_coverage, f"{rep.mean_coverage:.3f}", oom))
    header = ("policy", "compactions", "distinct", "min_cov", "mean_cov", "budget")
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    for r in [header, *rows]:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ladderkv",
        description="memory-bounded KV-cache retention: simulate, render, sweep, compare",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML config path")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config entry (repeatable)")
        p.add_argument("--quiet", action="store_true", help="suppress the summary")

    p = sub.add_parser("simulate", help="run a token stream under a policy")
    common(p)
    p.add_argument("--trace", help="write the trace CSV here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("render", help="render a retention mask to SVG")
    common(p)
    p.add_argument("--slots", type=int, default=256, help="slots to materialize")
    p.add_argument("--out", help="output SVG path")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("sweep", help="random-pattern sweep with Pareto front")
    common(p)
    p.add_argument("--n", type=int, default=1500, help="number of random patterns")
    p.add_argument("--seed", type=lambda s: int(s, 0), default=None, help="sweep seed")
    p.add_argument("--slots", type=int, default=4096, help="slots per pattern")
    p.add_argument("--out", help="output CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="run several policies on one stream")
    common(p)
    p.add_argument("--policies", default="ladder,streaming,full",
                   help="comma-separated policy names")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
