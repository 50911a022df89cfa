"""``gaseraser`` command line.

Settings are layered: defaults, then ``--config FILE``, then ``--preset``,
then ``--set section.key=value`` overrides, then the dedicated flags.
"""

from __future__ import annotations

import argparse
import sys

from .bench import make_sample, round_context
from .config import PRESETS, InterventionConfig, apply_preset
from .harness import (
    RunConfig,
    cmd_ablate_components,
    cmd_ablate_sources,
    cmd_analyze_trace,
    cmd_bench,
    cmd_layer_sweep,
    cmd_sweep,
    load_config,
    load_intervention,
    override,
    override_intervention,
    to_table,
    write_run_dir,
)
from .heads import GE, LE
from .sinks import FULL_NORM, MONITORED_MAX
from .toy import ToyModel
from .trace import IoFailure, TraceError, export_toy_trace


FRONT_HALF = "front-half"


def parse_layers(text: str):
    if text in ("front-half", "auto"):
        return FRONT_HALF
    try:
        start, stop = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START:STOP or 'front-half', got {text!r}") from None
    return (start, stop)


def parse_dims(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", metavar="FILE", help="run config file (INI sections [run] [intervention] [generator] [model])")
    g.add_argument("--preset", choices=sorted(PRESETS), help="per-model thresholds")
    g.add_argument("--set", dest="sets", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config field, e.g. generator.spike=0")
    g.add_argument("--n", type=int, help="number of benchmark samples")
    g.add_argument("--seed", type=int, help="benchmark seed")
    g.add_argument("--tau", type=float, help="sink threshold")
    g.add_argument("--rho", type=float, help="image-mass threshold for head selection")
    g.add_argument("--alpha", type=float, help="visual-sink ratio threshold for head selection")
    g.add_argument("--p", type=float, help="text-sink retention factor, in (0, 1]")
    g.add_argument("--eps", type=float, help="denominator guard in the visual-sink ratio")
    g.add_argument("--dims", type=parse_dims, help="monitored hidden dims, e.g. 200,231")
    g.add_argument("--layers", type=parse_layers, help="START:STOP (half-open) or 'front-half'")
    g.add_argument("--literal", action="store_true", help="select heads with delta <= rho and xi >= alpha")
    g.add_argument("--delta-direction", choices=(GE, LE))
    g.add_argument("--xi-direction", choices=(GE, LE))
    g.add_argument("--sink-mode", choices=(MONITORED_MAX, FULL_NORM))
    for name, help_ in (
        ("text-sinks", "take the budget from text sinks"),
        ("image-sinks", "zero visual sinks"),
        ("renormalize", "rescale modified rows to sum to one"),
        ("head-selection", "restrict to selected (head, source) rows"),
        ("token-selection", "restrict the budget to detected sinks"),
    ):
        g.add_argument(f"--{name}", action=argparse.BooleanOptionalAction, default=None, help=help_)
    g.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on this)")
    g.add_argument("--out", metavar="DIR", help="run directory for CSV tables and a config snapshot")


FLAG_FIELDS = {
    "tau": "tau", "rho": "rho", "alpha": "alpha", "p": "p", "eps": "eps", "dims": "monitored_dims",
    "layers": "layer_range", "delta_direction": "delta_direction", "xi_direction": "xi_direction",
    "sink_mode": "sink_mode", "text_sinks": "use_text_sinks", "image_sinks": "use_image_sinks",
    "renormalize": "renormalize", "head_selection": "head_selection", "token_selection": "token_selection",
    "seed": "seed",
}


def _flag_changes(args) -> dict:
    changes = {f: getattr(args, a) for a, f in FLAG_FIELDS.items() if getattr(args, a) is not None}
    if changes.get("layer_range") == FRONT_HALF:
        changes["layer_range"] = None
    if args.literal:
        changes.update(delta_direction=LE, xi_direction=GE)
    return changes


def _apply_sets(run: RunConfig, sets: list[str]) -> RunConfig:
    for item in sets:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ValueError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        run = override(run, section.strip(), name.strip(), value)
    return run


def build_run(args) -> RunConfig:
    run = load_config(args.config) if args.config else RunConfig()
    if args.preset:
        run = run.replace(intervention=apply_preset(run.intervention, args.preset))
    run = _apply_sets(run, args.sets)
    if args.n is not None:
        run = run.replace(n=args.n)
    changes = _flag_changes(args)
    if changes:
        run = run.replace(intervention=run.intervention.replace(**changes))
    return run


def build_intervention(args) -> InterventionConfig:
    """Intervention settings for trace analysis; no generator dims are inherited."""
    cfg = load_intervention(args.config) if args.config else InterventionConfig()
    if args.preset:
        cfg = apply_preset(cfg, args.preset)
    for item in args.sets:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or section.strip() != "intervention":
            raise ValueError(f"analyze-trace only takes intervention.KEY=VALUE overrides, got {item!r}")
        cfg = override_intervention(cfg, name.strip(), value)
    changes = _flag_changes(args)
    return cfg.replace(**changes) if changes else cfg


def _emit(title: str, rows: list[dict]) -> None:
    print(title)
    print(to_table(rows))
    print()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="gaseraser", description="Attention reallocation against gaslighting prompts.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_bench = sub.add_parser("bench", help="before/after accuracy on the synthetic benchmark")
    p_src = sub.add_parser("ablate-sources", help="text-sink and image-sink sources on/off")
    p_comp = sub.add_parser("ablate-components", help="head and token selection on/off")
    p_layer = sub.add_parser("layer-sweep", help="accuracy as more front layers are intervened")
    p_layer.add_argument("--granularity", type=int, default=4, help="number of steps between 0 and L layers")
    p_sweep = sub.add_parser("sweep", help="one intervention field over a list of values")
    p_sweep.add_argument("--param", required=True, help="intervention field name, e.g. p or alpha")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_an = sub.add_parser("analyze-trace", help="sink verdicts, head scores and reallocation deltas for a trace")
    p_an.add_argument("trace", help="trace file written by export-trace or an external dumper")
    p_ex = sub.add_parser("export-trace", help="dump a toy-model forward pass as a trace file")
    p_ex.add_argument("path", help="output trace path (sidecar goes to PATH.meta)")
    p_ex.add_argument("--sample", type=int, default=0, help="benchmark sample index")
    p_ex.add_argument("--round", type=int, choices=(1, 2), default=2, help="1: no gaslight block, 2: with it")
    for p in (p_bench, p_src, p_comp, p_layer, p_sweep, p_an, p_ex):
        _config_flags(p)

    args = parser.parse_args(argv)
    try:
        if args.workers < 1:
            raise ValueError("--workers must be >= 1")
        if args.command == "analyze-trace":
            return _analyze(args)
        run = build_run(args)
        if args.command == "export-trace":
            return _export(args, run)
        tables = _run_command(args, run)
    except (TraceError, IoFailure) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return 2
    if args.out:
        write_run_dir(args.out, run, tables)
    return 0


def _run_command(args, run: RunConfig) -> dict[str, list[dict]]:
    w = args.workers
    if args.command == "bench":
        summary, table, episodes = cmd_bench(run, w)
        _emit(f"benchmark: n={run.n} seed={run.seed}", table)
        return {"summary": table, "episodes": episodes}
    if args.command == "ablate-sources":
        rows = cmd_ablate_sources(run, w)
        _emit("budget sources", rows)
        return {"ablate_sources": rows}
    if args.command == "ablate-components":
        rows = cmd_ablate_components(run, w)
        _emit("components", rows)
        return {"ablate_components": rows}
    if args.command == "layer-sweep":
        rows = cmd_layer_sweep(run, args.granularity, w)
        _emit("front-k layer sweep", rows)
        return {"layer_sweep": rows}
    if args.command == "sweep":
        rows = cmd_sweep(run, args.param, args.values.split(","), w)
        _emit(f"sweep over {args.param}", rows)
        return {f"sweep_{args.param}": rows}
    raise AssertionError(args.command)


def _analyze(args) -> int:
    cfg = build_intervention(args)
    fallback = PRESETS[args.preset].monitored_dims if args.preset else ()
    report = cmd_analyze_trace(args.trace, cfg, fallback_dims=fallback)
    print(f"trace: {args.trace}  model: {report.model_name or '?'}  monitored dims: "
          + ", ".join(str(k) for k in report.monitored_dims))
    _emit("per layer", report.summary)
    _emit("sink tokens", report.sinks)
    if args.out:
        write_run_dir(args.out, None, {"layers": report.summary, "sinks": report.sinks,
                                       "heads": report.heads, "deltas": report.deltas})
    return 0


def _export(args, run: RunConfig) -> int:
    model = ToyModel(run.model)
    sample = make_sample(run.seed, args.sample, run.generator)
    ctx = round_context(model, sample, args.round)
    export_toy_trace(model, ctx, args.path, run.generator.monitored_dims)
    print(f"wrote {args.path} ({model.L} layers, {model.H} heads, {ctx.S} tokens)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
