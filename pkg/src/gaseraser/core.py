"""Shared data model: attention tensors, token contexts and index sets.

All attention math runs in float64. Sums over index sets are taken in
ascending index order (sequential, not pairwise) so repeated runs are
bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

ROLES = ("system", "image", "question", "option", "gaslight", "answer")

STOCHASTIC_TOL = 1e-5


class AttentionError(ValueError):
    """Base class for validation failures in the attention data model."""


class NonStochasticRow(AttentionError):
    pass


class NegativeWeight(AttentionError):
    pass


class NonFiniteValue(AttentionError):
    pass


class IndexOutOfRange(AttentionError, IndexError):
    pass


class DimensionMismatch(AttentionError):
    pass


def ordered_sum(values: np.ndarray) -> np.ndarray:
    """Sum along the last axis strictly left to right.

    ``np.sum`` uses pairwise summation whose grouping depends on length and
    memory layout; ``cumsum`` is sequential.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] == 0:
        return np.zeros(values.shape[:-1])
    return np.cumsum(values, axis=-1)[..., -1]


class IndexSet(tuple):
    """Strictly increasing, duplicate-free tuple of token positions."""

    def __new__(cls, indices: Iterable[int] = ()):
        items = sorted({int(i) for i in indices})
        if items and items[0] < 0:
            raise IndexOutOfRange(f"negative token index {items[0]}")
        return super().__new__(cls, items)

    def check_bound(self, size: int) -> "IndexSet":
        if self and self[-1] >= size:
            raise IndexOutOfRange(f"token index {self[-1]} outside [0, {size})")
        return self

    def as_array(self) -> np.ndarray:
        return np.asarray(self, dtype=np.intp)

    def __or__(self, other):
        return IndexSet(set(self) | set(other))

    def __and__(self, other):
        return IndexSet(set(self) & set(other))

    def __sub__(self, other):
        return IndexSet(set(self) - set(other))

    def __repr__(self):
        return f"IndexSet({list(self)})"


@dataclass(frozen=True)
class AttentionTensor:
    """Post-softmax multi-head attention of one layer, shape (H, S, S)."""

    weights: np.ndarray
    layer_index: int = 0

    def __post_init__(self):
        self.weights.setflags(write=False)

    @property
    def H(self) -> int:
        return self.weights.shape[0]

    @property
    def S(self) -> int:
        return self.weights.shape[1]

    def row_sums(self) -> np.ndarray:
        return ordered_sum(self.weights)


def new_attention_tensor(weights, layer_index: int = 0, tol: float = STOCHASTIC_TOL) -> AttentionTensor:
    """Validate ``weights`` and wrap them in an immutable float64 tensor.

    Raises NonFiniteValue, NegativeWeight or NonStochasticRow; a shape
    error surfaces as DimensionMismatch.
    """
    arr = np.array(weights, dtype=np.float64, copy=True)
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2] or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatch(f"expected (H, S, S) with H, S >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue("attention contains NaN or inf")
    if np.any(arr < 0):
        h, s, j = np.argwhere(arr < 0)[0]
        raise NegativeWeight(f"negative weight {arr[h, s, j]} at head {h}, row {s}, col {j}")
    sums = ordered_sum(arr)
    bad = np.abs(sums - 1.0) > tol
    if np.any(bad):
        h, s = np.argwhere(bad)[0]
        raise NonStochasticRow(f"row (head {h}, source {s}) sums to {sums[h, s]!r}")
    return AttentionTensor(arr, int(layer_index))


def row_mass(t: AttentionTensor, head: int, source: int, columns: Sequence[int]) -> float:
    """Attention mass that row ``(head, source)`` puts on ``columns``."""
    if not (0 <= head < t.H):
        raise IndexOutOfRange(f"head {head} outside [0, {t.H})")
    if not (0 <= source < t.S):
        raise IndexOutOfRange(f"source {source} outside [0, {t.S})")
    cols = IndexSet(columns).check_bound(t.S)
    total = 0.0
    for j in cols:
        total += float(t.weights[head, source, j])
    return total


@dataclass(frozen=True)
class TokenContext:
    """Hidden states of one sequence plus its image span and token roles.

    ``image_span`` is half-open ``(start, end)``.
    """

    embeddings: np.ndarray
    image_span: tuple[int, int]
    roles: tuple[str, ...] = field(default=())

    def __post_init__(self):
        emb = np.array(self.embeddings, dtype=np.float64, copy=True)
        if emb.ndim != 2:
            raise DimensionMismatch(f"embeddings must be (S, d), got {emb.shape}")
        if not np.all(np.isfinite(emb)):
            raise NonFiniteValue("embeddings contain NaN or inf")
        emb.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)
        S = emb.shape[0]
        start, end = (int(v) for v in self.image_span)
        if not (0 <= start < end <= S):
            raise IndexOutOfRange(f"image span [{start}, {end}) invalid for S={S}")
        object.__setattr__(self, "image_span", (start, end))
        roles = tuple(self.roles) if self.roles else tuple(
            "image" if start <= i < end else "question" for i in range(S)
        )
        if len(roles) != S:
            raise DimensionMismatch(f"{len(roles)} roles for {S} tokens")
        for i, r in enumerate(roles):
            if r not in ROLES:
                raise ValueError(f"unknown role {r!r} at position {i}")
            if (r == "image") != (start <= i < end):
                raise ValueError(f"role {r!r} at position {i} inconsistent with image span [{start}, {end})")
        object.__setattr__(self, "roles", roles)

    @property
    def S(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    @property
    def image_indices(self) -> IndexSet:
        return IndexSet(range(*self.image_span))

    @property
    def text_indices(self) -> IndexSet:
        start, end = self.image_span
        return IndexSet(i for i in range(self.S) if not start <= i < end)

    def positions(self, role: str) -> IndexSet:
        return IndexSet(i for i, r in enumerate(self.roles) if r == role)
