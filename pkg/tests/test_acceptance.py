"""Acceptance criteria, one test each, at the stated tolerances.

Every test records a PASS/FAIL line that is printed in the terminal summary.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_attention
from oracle import realloc_tensor
from gaseraser.bench import GenParams, default_config, generate_benchmark
from gaseraser.config import InterventionConfig
from gaseraser.core import TokenContext, new_attention_tensor
from gaseraser.harness import RunConfig, evaluate
from gaseraser.heads import LITERAL_DIRECTIONS, HeadSelection, score_heads, select_visual_heads
from gaseraser.metrics import from_accuracies, summarize
from gaseraser.realloc import ReallocParams, apply_to_layer_stack, reallocate
from gaseraser.sinks import SinkCriterion, SinkPartition, detect_sinks
from gaseraser.toy import ToyModel, forward
from gaseraser.trace import export_toy_trace, layer_contexts, read_trace

SEED = 0  # benchmark seed of the calibration run
N = 200


def record(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"{name}: {detail}"


def random_case(rng):
    H, S = int(rng.integers(1, 3)), int(rng.integers(2, 9))
    start = int(rng.integers(0, S - 1))
    end = int(rng.integers(start + 1, S + 1))
    w = random_attention(rng, H, S, peaky=float(rng.uniform(0.2, 3.0)))
    if end - start < S and rng.random() < 0.1:
        w[rng.integers(H), rng.integers(S), start:end] = 0.0
        w /= w.sum(axis=-1, keepdims=True)
    sinks = SinkPartition.split(np.flatnonzero(rng.random(S) < 0.4), (start, end))
    mask = rng.random((H, S)) < 0.5
    p = float(rng.choice([rng.uniform(0.01, 0.99), 1.0], p=[0.9, 0.1]))
    return new_attention_tensor(w), TokenContext(np.zeros((S, 2)), (start, end)), sinks, mask, p


@pytest.fixture(scope="module")
def property_cases():
    rng = np.random.default_rng(20240601)
    return [random_case(rng) for _ in range(1000)]


def test_oracle_equivalence(property_cases):
    t0 = time.perf_counter()
    worst = 0.0
    for k, (t, ctx, sinks, mask, p) in enumerate(property_cases):
        renorm = k % 3 == 0
        out, _ = reallocate(t, ctx, sinks, HeadSelection(mask, 0.0, 0.0), ReallocParams(p, renormalize_rows=renorm))
        ref = realloc_tensor(t.weights.tolist(), ctx.image_span, list(sinks.text_sinks), list(sinks.visual_sinks),
                             [tuple(x) for x in np.argwhere(mask)], p, renorm)
        worst = max(worst, float(np.max(np.abs(out.weights - np.array(ref)))))
    elapsed = time.perf_counter() - t0
    record("oracle equivalence", worst <= 1e-12 and elapsed < 10,
           f"{len(property_cases)} cases, max |diff| {worst:.2e} (<= 1e-12), {elapsed:.2f} s (< 10 s)")


def test_worked_example():
    w = np.full((1, 6, 6), 1 / 6)
    w[0, 5] = [0.15, 0.15, 0.10, 0.10, 0.20, 0.30]
    t = new_attention_tensor(w)
    ctx = TokenContext(np.zeros((6, 2)), (0, 4))
    out, _ = reallocate(t, ctx, SinkPartition.split([2, 4], (0, 4)), HeadSelection.from_pairs([(0, 5)], 1, 6),
                        ReallocParams(p=0.6))
    diff = float(np.max(np.abs(out.weights[0, 5] - [0.18, 0.18, 0.0, 0.12, 0.12, 0.30])))
    record("worked example", diff <= 1e-12, f"row {np.round(out.weights[0, 5], 12).tolist()}, max |diff| {diff:.1e}")


def test_mass_accounting(property_cases):
    worst = {False: 0.0, True: 0.0}
    for t, ctx, sinks, mask, p in property_cases:
        for renorm in (False, True):
            out, rep = reallocate(t, ctx, sinks, HeadSelection(mask, 0, 0), ReallocParams(p, renormalize_rows=renorm))
            sums = out.weights[rep.pairs[:, 0], rep.pairs[:, 1]].sum(axis=-1)
            # skipped rows (no image mass left) are returned untouched
            expected = np.where(rep.skipped, 1.0, 1.0 if renorm else 1.0 - rep.zeroed_mass)
            if sums.size:
                worst[renorm] = max(worst[renorm], float(np.max(np.abs(sums - expected))))
    ok = max(worst.values()) <= 1e-9
    record("mass accounting", ok,
           f"{len(property_cases)} cases, max row-sum error {worst[False]:.1e} (off) {worst[True]:.1e} (renormalized)")


def test_identity_suite(property_cases):
    checks = {}
    same = True
    for t, ctx, sinks, mask, p in property_cases[:300]:
        sel = HeadSelection(mask, 0, 0)
        a, _ = reallocate(t, ctx, SinkPartition.empty(), sel, ReallocParams(p, renormalize_rows=True))
        b, _ = reallocate(t, ctx, sinks, HeadSelection(np.zeros_like(mask), 0, 0), ReallocParams(p))
        c, _ = reallocate(t, ctx, sinks, sel, ReallocParams(1.0, use_image_sinks=False))
        same &= all(np.array_equal(x.weights, t.weights) for x in (a, b, c))
    checks["tensors"] = same

    model = ToyModel()
    samples = generate_benchmark(SEED, 10)
    spike_free = generate_benchmark(SEED, 10, GenParams(spike=0.0))
    cfg = default_config()
    logits_same = True
    for s, z in zip(samples, spike_free):
        ctx = s.round2_context(s.correct)
        base = forward(model, ctx).logits
        for variant in (cfg.replace(layer_range=(0, 0)), cfg.replace(p=1.0)):
            logits_same &= np.array_equal(forward(model, ctx, variant).logits, base)
        zctx = z.round2_context(z.correct)
        logits_same &= np.array_equal(forward(model, zctx, cfg).logits, forward(model, zctx).logits)
    checks["logits"] = logits_same
    record("identity suite", all(checks.values()),
           "empty sinks, empty selection, empty layer range, p = 1: "
           + ", ".join(f"{k} {'bitwise equal' if v else 'DIFFER'}" for k, v in checks.items()))


def test_monotonicity_suite():
    rng = np.random.default_rng(7)
    tau_ok = 0
    for _ in range(500):
        S, d = int(rng.integers(2, 30)), int(rng.integers(4, 40))
        emb = rng.normal(scale=rng.uniform(1, 50), size=(S, d))
        start = int(rng.integers(0, S - 1))
        ctx = TokenContext(emb, (start, int(rng.integers(start + 1, S + 1))))
        dims = tuple(rng.choice(d, size=int(rng.integers(1, min(d, 4) + 1)), replace=False))
        lo, hi = np.sort(rng.uniform(0.01, 20, 2))
        tau_ok += set(detect_sinks(ctx, SinkCriterion(dims, hi)).all_sinks) <= set(
            detect_sinks(ctx, SinkCriterion(dims, lo)).all_sinks)
    sel_ok = 0
    for _ in range(500):
        t, ctx, sinks, _, _ = random_case(rng)
        sc = score_heads(t, ctx, sinks)
        r_lo, r_hi = np.sort(rng.uniform(0, 1, 2))
        a_lo, a_hi = np.sort(rng.uniform(0, 2, 2))
        pick = lambda r, a, dirs=None: set(  # noqa: E731
            select_visual_heads(sc, r, a, *(dirs,) if dirs else ()).pairs)
        prose = pick(r_hi, a_lo) <= pick(r_lo, a_lo) and pick(r_lo, a_lo) <= pick(r_lo, a_hi)
        literal = (pick(r_lo, a_hi, LITERAL_DIRECTIONS) <= pick(r_hi, a_hi, LITERAL_DIRECTIONS)
                   and pick(r_lo, a_hi, LITERAL_DIRECTIONS) <= pick(r_lo, a_lo, LITERAL_DIRECTIONS))
        sel_ok += prose and literal
    record("monotonicity suite", tau_ok == 500 and sel_ok == 500,
           f"tau shrinkage {tau_ok}/500, head selection {sel_ok}/500")


def test_metrics_headline():
    s = from_accuracies(63.25, 24.71, 43.28)
    ok = abs(s.relative_misguidance_reduction - 48.2) <= 0.1 and abs(s.gain - 18.57) <= 0.01
    record("metrics headline", ok,
           f"reduction {s.relative_misguidance_reduction:.2f}% (48.2 +- 0.1), gain {s.gain:+.2f} (18.57 +- 0.01)")


CONFIGS = {
    "default": {},
    "image-only": dict(use_text_sinks=False, use_image_sinks=True),
    "both-sources": dict(use_image_sinks=True),
    "no-sources": dict(use_text_sinks=False, use_image_sinks=False),
    "head-off": dict(head_selection=False),
    "token-off": dict(token_selection=False),
    "both-off": dict(head_selection=False, token_selection=False),
    "k0": dict(layer_range=(0, 0)),
    "k2": dict(layer_range=(0, 2)),
    "k6": dict(layer_range=(0, 6)),
    "k8": dict(layer_range=(0, 8)),
}


@pytest.fixture(scope="module")
def benchmark():
    run = RunConfig(intervention=InterventionConfig(seed=SEED), n=N)
    t0 = time.perf_counter()
    results = evaluate(run, [run.intervention.replace(**c) for c in CONFIGS.values()])
    elapsed = time.perf_counter() - t0
    return {k: summarize(r) for k, r in zip(CONFIGS, results)}, elapsed


def test_benchmark_a_misguidance(benchmark):
    s = benchmark[0]["default"]
    record("synthetic (a) base misguidance", s.misguidance_base >= 30,
           f"{s.misguidance_base:.2f}% (>= 30), before {s.acc_before:.1f} after {s.acc_after_base:.1f}")


def test_benchmark_b_recovery(benchmark):
    s = benchmark[0]["default"]
    ok = s.acc_after_eraser > s.acc_after_base and s.relative_misguidance_reduction >= 40
    record("synthetic (b) recovery", ok,
           f"eraser {s.acc_after_eraser:.1f} vs base {s.acc_after_base:.1f}, "
           f"relative reduction {s.relative_misguidance_reduction:.2f}% (>= 40)")


def test_benchmark_c_ablations(benchmark):
    acc = {k: v.acc_after_eraser for k, v in benchmark[0].items()}
    text_only = acc["default"]  # default takes budget from text sinks only
    sources_ok = text_only >= acc["image-only"]
    components_ok = all(acc["default"] >= acc[k] for k in ("head-off", "token-off", "both-off"))
    record("synthetic (c) ablation ordering", sources_ok and components_ok,
           f"text-only {text_only:.1f} >= image-only {acc['image-only']:.1f}; both-on {acc['default']:.1f} vs "
           f"head-off {acc['head-off']:.1f}, token-off {acc['token-off']:.1f}, both-off {acc['both-off']:.1f}")


def test_benchmark_d_layer_sweep(benchmark):
    acc = benchmark[0]
    series = {0: acc["k0"], 2: acc["k2"], 4: acc["default"], 6: acc["k6"], 8: acc["k8"]}
    best = max(v.acc_after_eraser for v in series.values())
    half = series[4].acc_after_eraser
    record("synthetic (d) layer sweep", half >= best - 1.0,
           "front-k accuracy " + " ".join(f"k={k}:{v.acc_after_eraser:.1f}" for k, v in series.items())
           + f"; front half {half:.1f} vs best {best:.1f} (within 1)")


def test_benchmark_runtime(benchmark):
    elapsed = benchmark[1]
    record("synthetic benchmark runtime", elapsed < 120, f"{len(CONFIGS)} configs x {N} samples in {elapsed:.1f} s (< 120 s)")


def test_trace_round_trip(tmp_path):
    model, cfg = ToyModel(), default_config()
    worst = 0.0
    for s in generate_benchmark(SEED, 5):
        ctx = s.round2_context(s.correct)
        path = tmp_path / f"s{s.index}.gstr"
        export_toy_trace(model, ctx, path, cfg.monitored_dims)
        tctx, tensors, meta = read_trace(path)
        offline, _ = apply_to_layer_stack(tensors, layer_contexts(tctx, meta), None, cfg)
        online = forward(model, ctx, cfg).attentions
        worst = max(worst, max(float(np.max(np.abs(a.weights - b.weights))) for a, b in zip(offline, online)))
    record("trace round-trip", worst <= 1e-4, f"5 toy traces, max attention |diff| {worst:.2e} (<= 1e-4)")
