"""Image-relevance / sink-likelihood scoring and visual-centric row selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AttentionTensor, DimensionMismatch, TokenContext, ordered_sum
from .sinks import SinkPartition

GE = "ge"
LE = "le"

# Defaults pick image-focused rows with little visual-sink attention; the
# literal inequalities of the original formulation are (LE, GE).
PROSE_DIRECTIONS = (GE, LE)
LITERAL_DIRECTIONS = (LE, GE)


@dataclass(frozen=True)
class HeadScores:
    delta: np.ndarray  # (H, S) attention mass on the image span
    xi: np.ndarray  # (H, S) visual-sink mass / (delta + eps)
    epsilon: float


@dataclass(frozen=True)
class HeadSelection:
    mask: np.ndarray  # (H, S) bool
    rho: float
    alpha: float
    directions: tuple[str, str] = PROSE_DIRECTIONS

    @property
    def pairs(self) -> list[tuple[int, int]]:
        # argwhere on a C-ordered (H, S) array is head-major, then source
        return [(int(h), int(s)) for h, s in np.argwhere(self.mask)]

    def __len__(self):
        return int(self.mask.sum())

    @classmethod
    def from_pairs(cls, pairs, H: int, S: int, rho: float = float("nan"), alpha: float = float("nan")):
        mask = np.zeros((H, S), dtype=bool)
        for h, s in pairs:
            mask[h, s] = True
        return cls(mask, rho, alpha)

    @classmethod
    def everything(cls, H: int, S: int) -> "HeadSelection":
        return cls(np.ones((H, S), dtype=bool), float("nan"), float("nan"))


def score_heads(t: AttentionTensor, ctx: TokenContext, sinks: SinkPartition, eps: float = 1e-6) -> HeadScores:
    if t.S != ctx.S:
        raise DimensionMismatch(f"attention has S={t.S}, context has S={ctx.S}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    start, end = ctx.image_span
    delta = ordered_sum(t.weights[:, :, start:end])
    vs = sinks.visual_sinks.check_bound(t.S).as_array()
    sink_mass = ordered_sum(t.weights[:, :, vs])
    return HeadScores(delta, sink_mass / (delta + eps), float(eps))


def _compare(values: np.ndarray, threshold: float, direction: str) -> np.ndarray:
    if direction == GE:
        return values >= threshold
    if direction == LE:
        return values <= threshold
    raise ValueError(f"unknown comparison direction {direction!r}")


def select_visual_heads(scores: HeadScores, rho: float, alpha: float, directions=PROSE_DIRECTIONS) -> HeadSelection:
    """Rows whose image relevance and sink likelihood pass both thresholds."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    delta_dir, xi_dir = directions
    mask = _compare(scores.delta, rho, delta_dir) & _compare(scores.xi, alpha, xi_dir)
    return HeadSelection(mask, float(rho), float(alpha), (delta_dir, xi_dir))
