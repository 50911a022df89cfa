import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracle import sink_score
from gaseraser.core import IndexSet, TokenContext
from gaseraser.sinks import (
    FULL_NORM,
    DimensionOutOfRange,
    SinkCriterion,
    detect_sinks,
    norm_scores,
    token_norm_score,
)


def test_zero_row_scores_zero():
    ctx = TokenContext(np.zeros((4, 16)), (0, 2))
    assert token_norm_score(ctx, 1, SinkCriterion((3,), 20.0)) == 0.0
    assert not detect_sinks(ctx, SinkCriterion((3,), 20.0))


def test_one_hot_spike_score():
    emb = np.zeros((2, 256))
    emb[1, 200] = 320.0
    ctx = TokenContext(emb, (0, 1))
    crit = SinkCriterion((200, 231), 20.0)
    assert token_norm_score(ctx, 1, crit) == pytest.approx(sink_score(emb[1].tolist(), [200, 231]))
    assert token_norm_score(ctx, 1, crit) == 20.0
    # strict inequality: exactly tau is not a sink
    assert detect_sinks(ctx, crit).all_sinks == IndexSet()
    assert detect_sinks(ctx, SinkCriterion((200,), 19.99)).all_sinks == IndexSet([1])


def test_planted_partition():
    rng = np.random.default_rng(0)
    S, d = 48, 256
    emb = rng.normal(size=(S, d))
    emb[3, 200] = emb[41, 231] = 400.0
    ctx = TokenContext(emb, (2, 38))
    crit = SinkCriterion((200, 231), 20.0)
    oracle = [i for i in range(S) if sink_score(emb[i].tolist(), [200, 231]) > 20.0]
    part = detect_sinks(ctx, crit)
    assert list(part.all_sinks) == oracle == [3, 41]
    assert part.visual_sinks == IndexSet([3])
    assert part.text_sinks == IndexSet([41])


def test_infinite_threshold_finds_nothing():
    emb = np.zeros((3, 8))
    emb[0, 1] = 1e6
    ctx = TokenContext(emb, (0, 1))
    assert not detect_sinks(ctx, SinkCriterion((1,), 1e300))


def test_full_norm_mode():
    emb = np.zeros((2, 16))
    emb[0, :] = 100.0  # ||x|| = 400, / 4 = 100
    ctx = TokenContext(emb, (0, 1))
    crit = SinkCriterion((5,), 20.0, FULL_NORM)
    assert norm_scores(ctx, crit)[0] == pytest.approx(100.0)
    assert detect_sinks(ctx, crit).all_sinks == IndexSet([0])


def test_criterion_validation():
    with pytest.raises(ValueError):
        SinkCriterion((), 20.0)
    with pytest.raises(ValueError):
        SinkCriterion((1,), 0.0)
    ctx = TokenContext(np.zeros((2, 8)), (0, 1))
    with pytest.raises(DimensionOutOfRange):
        detect_sinks(ctx, SinkCriterion((8,), 1.0))


def random_context(rng):
    S, d = int(rng.integers(2, 30)), int(rng.integers(4, 40))
    emb = rng.normal(scale=rng.uniform(1, 50), size=(S, d))
    start = int(rng.integers(0, S - 1))
    end = int(rng.integers(start + 1, S + 1))
    dims = tuple(rng.choice(d, size=int(rng.integers(1, min(d, 4) + 1)), replace=False))
    return TokenContext(emb, (start, end)), dims


@settings(max_examples=500, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 20), st.floats(0.01, 20))
def test_monotone_in_tau(seed, t1, t2):
    rng = np.random.default_rng(seed)
    ctx, dims = random_context(rng)
    lo, hi = sorted((t1, t2))
    assert set(detect_sinks(ctx, SinkCriterion(dims, hi)).all_sinks) <= set(detect_sinks(ctx, SinkCriterion(dims, lo)).all_sinks)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_partition_and_invariance(seed):
    rng = np.random.default_rng(seed)
    ctx, dims = random_context(rng)
    crit = SinkCriterion(dims, float(rng.uniform(0.1, 10)))
    part = detect_sinks(ctx, crit)
    start, end = ctx.image_span
    assert set(part.visual_sinks) | set(part.text_sinks) == set(part.all_sinks)
    assert not set(part.visual_sinks) & set(part.text_sinks)
    assert all(start <= i < end for i in part.visual_sinks)
    emb = np.array(ctx.embeddings)
    others = [k for k in range(ctx.d) if k not in dims]
    emb[:, others] = rng.normal(scale=1000, size=(ctx.S, len(others)))
    assert detect_sinks(TokenContext(emb, ctx.image_span), crit) == part
    assert detect_sinks(ctx, crit) == part
