"""Sink-token detection from hidden-state magnitudes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AttentionError, IndexSet, TokenContext

MONITORED_MAX = "monitored-max"
FULL_NORM = "full-norm"


class DimensionOutOfRange(AttentionError):
    pass


@dataclass(frozen=True)
class SinkCriterion:
    """Threshold ``tau`` on normalized embedding magnitude.

    ``mode`` picks what is thresholded: the largest ``|x_i,k| / sqrt(d)``
    over the monitored dims (default), or the full row norm
    ``||x_i|| / sqrt(d)``.
    """

    monitored_dims: tuple[int, ...]
    tau: float = 20.0
    mode: str = MONITORED_MAX

    def __post_init__(self):
        dims = tuple(int(k) for k in self.monitored_dims)
        if not dims:
            raise ValueError("monitored_dims must be nonempty")
        if min(dims) < 0:
            raise DimensionOutOfRange(f"negative monitored dim {min(dims)}")
        object.__setattr__(self, "monitored_dims", dims)
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.mode not in (MONITORED_MAX, FULL_NORM):
            raise ValueError(f"unknown sink mode {self.mode!r}")

    def check(self, d: int) -> None:
        if max(self.monitored_dims) >= d:
            raise DimensionOutOfRange(f"monitored dim {max(self.monitored_dims)} >= hidden size {d}")


@dataclass(frozen=True)
class SinkPartition:
    all_sinks: IndexSet
    visual_sinks: IndexSet
    text_sinks: IndexSet

    @classmethod
    def split(cls, sinks, image_span: tuple[int, int]) -> "SinkPartition":
        sinks = IndexSet(sinks)
        start, end = image_span
        visual = IndexSet(i for i in sinks if start <= i < end)
        return cls(sinks, visual, sinks - visual)

    @classmethod
    def empty(cls) -> "SinkPartition":
        return cls(IndexSet(), IndexSet(), IndexSet())

    def __bool__(self):
        return bool(self.all_sinks)


def norm_scores(ctx: TokenContext, criterion: SinkCriterion) -> np.ndarray:
    """Per-token sink score for every position of ``ctx``."""
    criterion.check(ctx.d)
    scale = 1.0 / np.sqrt(ctx.d)
    if criterion.mode == MONITORED_MAX:
        picked = np.abs(ctx.embeddings[:, list(criterion.monitored_dims)]) * scale
        return picked.max(axis=1)
    return np.sqrt(np.cumsum(ctx.embeddings**2, axis=1)[:, -1]) * scale


def token_norm_score(ctx: TokenContext, token: int, criterion: SinkCriterion) -> float:
    if not 0 <= token < ctx.S:
        raise IndexError(f"token {token} outside [0, {ctx.S})")
    return float(norm_scores(ctx, criterion)[token])


def detect_sinks(ctx: TokenContext, criterion: SinkCriterion) -> SinkPartition:
    # strict: a score exactly at tau is not a sink
    scores = norm_scores(ctx, criterion)
    return SinkPartition.split(np.flatnonzero(scores > criterion.tau), ctx.image_span)
