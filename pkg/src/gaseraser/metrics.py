"""Before/after-negation accuracy and misguidance accounting.

Misguidance is the share of before-negation accuracy lost after the
gaslight turn, ``(acc_before - acc_after) / acc_before``. For accuracies
63.25 / 24.71 / 43.28 this gives 60.93% and 31.57%, a 48.2% relative
reduction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class BenchSummary:
    n: int
    acc_before: float
    acc_after_base: float
    acc_after_eraser: float
    misguidance_base: float | None
    misguidance_eraser: float | None
    relative_misguidance_reduction: float | None

    @property
    def gain(self) -> float:
        return self.acc_after_eraser - self.acc_after_base

    def as_row(self) -> dict:
        fmt = lambda v: "" if v is None else f"{v:.2f}"  # noqa: E731
        return {
            "n": self.n,
            "acc_before": f"{self.acc_before:.2f}",
            "acc_after_base": f"{self.acc_after_base:.2f}",
            "acc_after_eraser": f"{self.acc_after_eraser:.2f}",
            "gain": f"{self.gain:+.2f}",
            "misguidance_base": fmt(self.misguidance_base),
            "misguidance_eraser": fmt(self.misguidance_eraser),
            "relative_reduction": fmt(self.relative_misguidance_reduction),
        }


def misguidance(acc_before: float, acc_after: float) -> float | None:
    if acc_before == 0:
        return None
    return 100.0 * (acc_before - acc_after) / acc_before


def from_accuracies(acc_before: float, acc_after_base: float, acc_after_eraser: float, n: int = 0) -> BenchSummary:
    """Summary from percentages alone, e.g. a published table row."""
    mis_base = misguidance(acc_before, acc_after_base)
    mis_eraser = misguidance(acc_before, acc_after_eraser)
    if mis_base is None or mis_eraser is None or mis_base == 0:
        reduction = None if mis_base is None else 0.0 if mis_eraser == 0 else None
    else:
        reduction = 100.0 * (mis_base - mis_eraser) / mis_base
    return BenchSummary(n, acc_before, acc_after_base, acc_after_eraser, mis_base, mis_eraser, reduction)


def summarize(results: Sequence) -> BenchSummary:
    """Aggregate episode results (anything with correct / answer_* attributes)."""
    n = len(results)
    if n == 0:
        raise EmptyInput("no episode results to summarize")

    def acc(attr):
        return 100.0 * sum(getattr(r, attr) == r.correct for r in results) / n

    return from_accuracies(acc("answer_before"), acc("answer_after_base"), acc("answer_after_eraser"), n)
