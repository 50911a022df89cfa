"""Benchmark runs, ablations, sweeps and trace analysis behind the CLI.

Every command returns plain row dicts; the CLI prints them as a table and,
when given a run directory, writes them as CSV next to a config snapshot.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import types
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bench import GenParams, baseline_answers, make_sample, run_episode
from .config import InterventionConfig
from .core import TokenContext
from .heads import LITERAL_DIRECTIONS, PROSE_DIRECTIONS, score_heads, select_visual_heads
from .metrics import BenchSummary, summarize
from .realloc import intervene_layer
from .sinks import detect_sinks, norm_scores
from .toy import ModelParams, ToyModel
from .trace import layer_contexts, read_trace

SECTIONS = {"intervention": InterventionConfig, "generator": GenParams, "model": ModelParams}


@dataclass(frozen=True)
class RunConfig:
    """Intervention, generator and model settings plus suite size.

    An intervention without sink dims inherits the generator's.
    """

    intervention: InterventionConfig = field(default_factory=InterventionConfig)
    generator: GenParams = field(default_factory=GenParams)
    model: ModelParams = field(default_factory=ModelParams)
    n: int = 200

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.generator.d != self.model.d:
            raise ValueError(f"generator d={self.generator.d} differs from model d={self.model.d}")
        if self.generator.options != self.model.options:
            raise ValueError("generator and model disagree on the number of options")
        if not self.intervention.monitored_dims:
            object.__setattr__(
                self, "intervention", self.intervention.replace(monitored_dims=self.generator.monitored_dims)
            )
        self.intervention.layers(self.model.layers)  # range check

    @property
    def seed(self) -> int:
        return self.intervention.seed

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


# config file ---------------------------------------------------------------

def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(text: str, hint):
    text = text.strip()
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if text.lower() == "none":
            return None
        return _parse(text, args[0])
    if origin is tuple:
        args = typing.get_args(hint)
        parts = [t for t in text.replace(",", " ").split()]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_parse(t, args[0]) for t in parts)
        if len(parts) != len(args):
            raise ValueError(f"expected {len(args)} values, got {text!r}")
        return tuple(_parse(t, a) for t, a in zip(parts, args))
    if hint is bool:
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    return text


def _section(obj) -> dict[str, str]:
    return {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def _build(cls, values: dict[str, str], where: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"[{where}] unknown keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, text in values.items():
        try:
            kwargs[key] = _parse(text, hints[key])
        except ValueError as e:
            raise ValueError(f"[{where}] {key}: {e}") from None
    return cls(**kwargs)


def dump_config(run: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["run"] = {"n": str(run.n)}
    for name in SECTIONS:
        cp[name] = _section(getattr(run, name))
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Read a run config; missing keys keep the values from ``base``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    base = base or RunConfig()
    unknown = set(cp.sections()) - set(SECTIONS) - {"run"}
    if unknown:
        raise ValueError(f"unknown config sections: {', '.join(sorted(unknown))}")
    parts = {}
    for name, cls in SECTIONS.items():
        values = _section(getattr(base, name))
        if name in cp:
            values.update(cp[name])
        parts[name] = _build(cls, values, name)
    n = int(cp["run"].get("n", base.n)) if "run" in cp else base.n
    return RunConfig(n=n, **parts)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), base)


def load_intervention(path) -> InterventionConfig:
    """Only the ``[intervention]`` section of a run config, without generator defaults."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(Path(path).read_text(encoding="utf-8"))
    values = _section(InterventionConfig())
    if "intervention" in cp:
        values.update(cp["intervention"])
    return _build(InterventionConfig, values, "intervention")


def override_intervention(cfg: InterventionConfig, key: str, text: str) -> InterventionConfig:
    values = _section(cfg)
    values[key] = text
    return _build(InterventionConfig, values, "intervention")


def override(run: RunConfig, section: str, key: str, text: str) -> RunConfig:
    """Apply one ``section.key=value`` override given as text."""
    if section == "run":
        if key != "n":
            raise ValueError(f"[run] has no key {key!r}")
        return run.replace(n=int(text))
    if section not in SECTIONS:
        raise ValueError(f"unknown section {section!r}")
    values = _section(getattr(run, section))
    values[key] = text
    return run.replace(**{section: _build(SECTIONS[section], values, section)})


# evaluation ----------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeRow:
    index: int
    correct: int
    target: int
    answer_before: int
    answer_after_base: int
    answer_after_eraser: int
    modified_rows: int
    budget: float

    @property
    def misled(self) -> bool:
        return self.answer_before == self.correct and self.answer_after_base != self.correct

    @property
    def recovered(self) -> bool:
        return self.misled and self.answer_after_eraser == self.correct


def _chunk(run: RunConfig, configs: tuple[InterventionConfig, ...], indices: list[int]) -> list[list[EpisodeRow]]:
    model = ToyModel(run.model)
    out = [[] for _ in configs]
    for i in indices:
        sample = make_sample(run.seed, i, run.generator)
        baseline = baseline_answers(model, sample)
        for k, cfg in enumerate(configs):
            r = run_episode(model, sample, cfg, baseline)
            rows = sum(rep.modified_rows for rep in r.reports)
            budget = float(sum(rep.total_budget for rep in r.reports))
            out[k].append(EpisodeRow(i, r.correct, r.target, r.answer_before, r.answer_after_base,
                                     r.answer_after_eraser, rows, budget))
    return out


def evaluate(run: RunConfig, configs: list[InterventionConfig], workers: int = 1) -> list[list[EpisodeRow]]:
    """Episode rows for each config, in sample order.

    Samples are split into contiguous blocks across ``workers`` processes;
    each block is rebuilt from the seed, so results do not depend on the split.
    """
    for cfg in configs:
        cfg.layers(run.model.layers)
        cfg.criterion()
    configs = tuple(configs)
    indices = list(range(run.n))
    if workers <= 1:
        return _chunk(run, configs, indices)
    blocks = [b.tolist() for b in np.array_split(indices, min(workers, run.n))]
    out = [[] for _ in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_chunk, [run] * len(blocks), [configs] * len(blocks), blocks):
            for k, rows in enumerate(part):
                out[k].extend(rows)
    return out


def direction_label(cfg: InterventionConfig) -> str:
    if cfg.directions == PROSE_DIRECTIONS:
        return "prose"
    if cfg.directions == LITERAL_DIRECTIONS:
        return "literal"
    return "/".join(cfg.directions)


def _onoff(flag: bool) -> str:
    return "on" if flag else "off"


def _summary_row(label: dict, summary: BenchSummary, cfg: InterventionConfig) -> dict:
    return {**label, **summary.as_row(), "directions": direction_label(cfg)}


def episode_rows(rows: list[EpisodeRow]) -> list[dict]:
    return [
        {
            "index": r.index,
            "correct": r.correct,
            "target": r.target,
            "answer_before": r.answer_before,
            "answer_after_base": r.answer_after_base,
            "answer_after_eraser": r.answer_after_eraser,
            "misled": int(r.misled),
            "recovered": int(r.recovered),
            "modified_rows": r.modified_rows,
            "budget": f"{r.budget:.6f}",
        }
        for r in rows
    ]


def cmd_bench(run: RunConfig, workers: int = 1) -> tuple[BenchSummary, list[dict], list[dict]]:
    """Summary, one-row summary table and per-episode log for one config."""
    (rows,) = evaluate(run, [run.intervention], workers)
    summary = summarize(rows)
    return summary, [_summary_row({"config": "run"}, summary, run.intervention)], episode_rows(rows)


def cmd_ablate_sources(run: RunConfig, workers: int = 1) -> list[dict]:
    """Text-sink and image-sink budget sources switched on and off."""
    grid = [(True, True), (True, False), (False, True), (False, False)]
    cfgs = [run.intervention.replace(use_text_sinks=t, use_image_sinks=i) for t, i in grid]
    results = evaluate(run, cfgs, workers)
    return [
        _summary_row({"text_sinks": _onoff(t), "image_sinks": _onoff(i)}, summarize(rows), cfg)
        for (t, i), cfg, rows in zip(grid, cfgs, results)
    ]


def cmd_ablate_components(run: RunConfig, workers: int = 1) -> list[dict]:
    """Head selection and token selection switched on and off."""
    grid = [(True, True), (True, False), (False, True), (False, False)]
    cfgs = [run.intervention.replace(head_selection=h, token_selection=t) for h, t in grid]
    results = evaluate(run, cfgs, workers)
    return [
        _summary_row({"head_selection": _onoff(h), "token_selection": _onoff(t)}, summarize(rows), cfg)
        for (h, t), cfg, rows in zip(grid, cfgs, results)
    ]


def sweep_points(n_layers: int, granularity: int = 4) -> list[int]:
    if granularity < 1:
        raise ValueError("granularity must be >= 1")
    return sorted({round(j * n_layers / granularity) for j in range(granularity + 1)})


def cmd_layer_sweep(run: RunConfig, granularity: int = 4, workers: int = 1) -> list[dict]:
    """Accuracy when the first k layers are intervened, for evenly spaced k."""
    ks = sweep_points(run.model.layers, granularity)
    cfgs = [run.intervention.replace(layer_range=(0, k)) for k in ks]
    results = evaluate(run, cfgs, workers)
    return [
        _summary_row({"k": k, "layers": f"0:{k}"}, summarize(rows), cfg)
        for k, cfg, rows in zip(ks, cfgs, results)
    ]


def cmd_sweep(run: RunConfig, param: str, values: list[str], workers: int = 1) -> list[dict]:
    """One row per value of a single intervention field."""
    cfgs = [override(run, "intervention", param, v).intervention for v in values]
    results = evaluate(run, cfgs, workers)
    return [
        _summary_row({param: _format(getattr(cfg, param))}, summarize(rows), cfg)
        for cfg, rows in zip(cfgs, results)
    ]


# trace analysis ------------------------------------------------------------

@dataclass
class TraceReport:
    model_name: str
    monitored_dims: tuple[int, ...]
    layers: list[int]
    sinks: list[dict]
    heads: list[dict]
    deltas: list[dict]
    summary: list[dict]


def cmd_analyze_trace(path, config: InterventionConfig, fallback_dims=()) -> TraceReport:
    """Sink verdicts, head scores and counterfactual image-mass changes for a stored trace.

    Sink dims come from ``config`` when set, then from the sidecar, then from
    ``fallback_dims``.
    """
    ctx, tensors, meta = read_trace(path)
    if not config.monitored_dims:
        dims = meta.monitored_dims or tuple(fallback_dims)
        if not dims:
            raise ValueError("no monitored dims in the config, the trace sidecar or the preset")
        config = config.replace(monitored_dims=dims)
    criterion = config.criterion()
    contexts = layer_contexts(ctx, meta)
    layers = list(config.layers(len(tensors)))
    sinks, heads, deltas, summary = [], [], [], []
    for layer in layers:
        t, lctx = tensors[layer], contexts[layer]
        scores = norm_scores(lctx, criterion)
        part = detect_sinks(lctx, criterion)
        for i in part.all_sinks:
            sinks.append({"layer": layer, "token": i, "role": lctx.roles[i],
                          "kind": "visual" if i in part.visual_sinks else "text", "score": f"{scores[i]:.4f}"})
        hs = score_heads(t, lctx, part, config.eps)
        sel = select_visual_heads(hs, config.rho, config.alpha, config.directions)
        for h in range(t.H):
            for s in range(t.S):
                heads.append({"layer": layer, "head": h, "source": s, "delta": f"{hs.delta[h, s]:.6f}",
                              "xi": f"{hs.xi[h, s]:.6f}", "selected": int(sel.mask[h, s])})
        _, report = intervene_layer(t, lctx, part, config)
        for k, (h, s) in enumerate(report.pairs):
            deltas.append({"layer": layer, "head": int(h), "source": int(s),
                           "budget": f"{report.budget[k]:.6f}", "zeroed": f"{report.zeroed_mass[k]:.6f}",
                           "image_before": f"{report.pre_image_mass[k]:.6f}",
                           "image_after": f"{report.post_image_mass[k]:.6f}", "skipped": int(report.skipped[k])})
        summary.append({
            "layer": layer,
            "sinks": len(part.all_sinks),
            "visual_sinks": len(part.visual_sinks),
            "text_sinks": len(part.text_sinks),
            "delta_median": f"{np.median(hs.delta):.4f}",
            "xi_median": f"{np.median(hs.xi):.4f}",
            "selected": len(sel),
            "modified_rows": report.modified_rows,
            "image_mass_delta": f"{float(np.sum(report.post_image_mass - report.pre_image_mass)):.6f}",
        })
    return TraceReport(meta.model_name, config.monitored_dims, layers, sinks, heads, deltas, summary)


# output --------------------------------------------------------------------

def to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def to_table(rows: list[dict]) -> str:
    if not rows:
        return "(no rows)"
    cols = list(rows[0])
    cells = [[str(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[j]) for row in cells)) for j, c in enumerate(cols)]
    line = lambda vals: "  ".join(v.rjust(w) for v, w in zip(vals, widths))  # noqa: E731
    return "\n".join([line(cols), line(["-" * w for w in widths])] + [line(r) for r in cells])


def write_run_dir(out, run: RunConfig | None, tables: dict[str, list[dict]]) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if run is not None:
        (out / "config.ini").write_text(dump_config(run), encoding="utf-8")
    for name, rows in tables.items():
        (out / f"{name}.csv").write_text(to_csv(rows), encoding="utf-8")

