"""Attention reallocation: move a fraction of text-sink attention onto the image.

For every selected ``(head, source)`` row:

1. text-sink columns are scaled by ``p``;
2. the removed mass ``omega = sum(old * (1 - p))`` becomes the row's budget;
3. visual-sink columns are zeroed (that mass is dropped, not moved);
4. ``omega`` is spread over the image span in proportion to the row's
   remaining image profile.

Rows outside the selection are copied bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import InterventionConfig
from .core import AttentionError, AttentionTensor, IndexSet, TokenContext, ordered_sum
from .heads import HeadSelection, score_heads, select_visual_heads
from .sinks import SinkCriterion, SinkPartition, detect_sinks


class InvalidP(AttentionError):
    pass


class ZeroImageMass(AttentionError):
    """Raised only by callers that want it; reallocate() skips such rows."""


@dataclass(frozen=True)
class ReallocParams:
    p: float = 0.6
    use_text_sinks: bool = True
    use_image_sinks: bool = True
    renormalize_rows: bool = False

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise InvalidP(f"p must lie in (0, 1), or equal 1 as a no-op, got {self.p}")


@dataclass(frozen=True)
class ReallocReport:
    """Per selected row bookkeeping, one entry per pair in ``pairs``.

    ``pre_image_mass`` is the span mass before any change, and
    ``post_image_mass`` after write-back. ``skipped`` marks rows whose image
    mass was zero after sink zeroing; those rows are left untouched.
    """

    layer_index: int
    pairs: np.ndarray  # (n, 2) int
    budget: np.ndarray
    pre_image_mass: np.ndarray
    zeroed_mass: np.ndarray
    post_image_mass: np.ndarray
    skipped: np.ndarray

    @property
    def modified_rows(self) -> int:
        return int((~self.skipped).sum())

    @property
    def retained_image_mass(self) -> np.ndarray:
        return self.pre_image_mass - self.zeroed_mass

    @property
    def total_budget(self) -> float:
        return float(self.budget.sum())

    def row(self, head: int, source: int) -> int | None:
        hits = np.flatnonzero((self.pairs[:, 0] == head) & (self.pairs[:, 1] == source))
        return int(hits[0]) if hits.size else None

    @classmethod
    def empty(cls, layer_index: int) -> "ReallocReport":
        z = np.zeros(0)
        return cls(layer_index, np.zeros((0, 2), dtype=int), z, z, z, z, np.zeros(0, dtype=bool))


def reallocate(
    t: AttentionTensor,
    ctx: TokenContext,
    sinks: SinkPartition,
    sel: HeadSelection,
    params: ReallocParams,
) -> tuple[AttentionTensor, ReallocReport]:
    if sel.mask.shape != (t.H, t.S) or ctx.S != t.S:
        raise AttentionError(f"selection {sel.mask.shape} / context S={ctx.S} do not fit attention {t.weights.shape}")
    text = sinks.text_sinks.check_bound(t.S) if params.use_text_sinks else IndexSet()
    visual = sinks.visual_sinks.check_bound(t.S) if params.use_image_sinks else IndexSet()
    start, end = ctx.image_span
    T, V = text.as_array(), visual.as_array()

    pairs = np.argwhere(sel.mask)
    hs, ss = pairs[:, 0], pairs[:, 1]
    rows = t.weights[hs, ss, :].copy()
    pre_img = ordered_sum(rows[:, start:end])

    old_text = rows[:, T]
    budget = ordered_sum(old_text * (1.0 - params.p))
    rows[:, T] = old_text * params.p

    zeroed = ordered_sum(rows[:, V])
    rows[:, V] = 0.0

    img = rows[:, start:end]
    img_mass = ordered_sum(img)
    skipped = ~(img_mass > 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = img / img_mass[:, None]
    moving = (budget != 0.0) & ~skipped
    img[moving] = img[moving] + budget[moving, None] * ratio[moving]
    rows[:, start:end] = img

    if params.renormalize_rows:
        # rows with nothing moved keep their exact bits
        changed = ~skipped & ((budget != 0.0) | (zeroed != 0.0))
        rows[changed] = rows[changed] / ordered_sum(rows[changed])[:, None]

    out = np.array(t.weights, copy=True)
    keep = ~skipped
    out[hs[keep], ss[keep], :] = rows[keep]
    post_img = np.where(skipped, pre_img, ordered_sum(out[hs, ss, start:end]))
    report = ReallocReport(
        t.layer_index,
        pairs,
        np.where(skipped, 0.0, budget),
        pre_img,
        np.where(skipped, 0.0, zeroed),
        post_img,
        skipped,
    )
    return AttentionTensor(out, t.layer_index), report


def reallocation_targets(ctx: TokenContext, sinks: SinkPartition, config: InterventionConfig) -> SinkPartition:
    """Sink partition actually handed to ``reallocate``.

    With token selection disabled every non-image token counts as a text sink.
    """
    if config.token_selection:
        return sinks
    return SinkPartition(sinks.visual_sinks | ctx.text_indices, sinks.visual_sinks, ctx.text_indices)


def intervene_layer(
    t: AttentionTensor,
    ctx: TokenContext,
    sinks: SinkPartition,
    config: InterventionConfig,
) -> tuple[AttentionTensor, ReallocReport]:
    """Score, select and reallocate one layer given already detected sinks."""
    if config.head_selection:
        scores = score_heads(t, ctx, sinks, config.eps)
        sel = select_visual_heads(scores, config.rho, config.alpha, config.directions)
    else:
        sel = HeadSelection.everything(t.H, t.S)
    params = ReallocParams(config.p, config.use_text_sinks, config.use_image_sinks, config.renormalize)
    return reallocate(t, ctx, reallocation_targets(ctx, sinks, config), sel, params)


def apply_to_layer_stack(
    tensors: Sequence[AttentionTensor],
    ctx: TokenContext | Sequence[TokenContext],
    criterion: SinkCriterion | None,
    config: InterventionConfig,
) -> tuple[list[AttentionTensor], list[ReallocReport]]:
    """Run the full pipeline on each layer in ``config.layer_range``.

    ``ctx`` may be a single context or one per layer (hidden states differ
    between layers in real dumps). Layers outside the range pass through.
    """
    if criterion is None:
        criterion = config.criterion()
    contexts = [ctx] * len(tensors) if isinstance(ctx, TokenContext) else list(ctx)
    if len(contexts) != len(tensors):
        raise ValueError(f"{len(contexts)} contexts for {len(tensors)} layers")
    out = list(tensors)
    reports = []
    for layer in config.layers(len(tensors)):
        sinks = detect_sinks(contexts[layer], criterion)
        out[layer], report = intervene_layer(tensors[layer], contexts[layer], sinks, config)
        reports.append(report)
    return out, reports
