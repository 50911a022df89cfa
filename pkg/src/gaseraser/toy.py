"""Deterministic toy multimodal transformer.

The residual stream is split into fixed feature blocks. Queries and keys
read only the token-feature blocks, values read the option-content block,
and every head writes option evidence into a dedicated block that the
readout turns into option logits. Weights are built from seeded noise plus
hand-aligned feature pairs; nothing is trained.

Block layout of the hidden state (d >= 256):

    [0, 16)    token features (role flags, salience / decoy / sink keys)
    [16, 24)   option content, one dim per option
    [32, 64)   sinusoidal positions
    [64, 128)  per-token noise
    [128, 136) option evidence written by attention
    [136, 192) scratch written by attention
    rest       free; sink spikes live here
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import InterventionConfig
from .core import AttentionTensor, DimensionMismatch, TokenContext
from .realloc import ReallocReport, intervene_layer
from .sinks import detect_sinks

# token feature dims
BOS, SYS, IMG, SAL, DEC, VSINK, QUE, OPT, GAS, ANS1, ANS, ONE = range(12)
CONTENT = 16
POS = slice(32, 64)
NOISE = slice(64, 128)
EVIDENCE = 128
SCRATCH = slice(136, 192)
MAX_OPTIONS = 8
MIN_D = 256

VISUAL, DRIFT, SINK, TEXT = "visual", "drift", "sink", "text"

# (query feature, key feature) -> score contribution. Every token carries
# ONE, so (ONE, x) rows shape the attention of all positions.
AFFINITY = {
    VISUAL: {(ANS, SAL): 6.0, (ANS, IMG): 1.0, (ANS, GAS): 3.25, (ANS, ANS1): 3.5, (ANS, VSINK): -12.0},
    # drift and text heads see little of the image, but what they see is mostly the decoy
    DRIFT: {(ANS, DEC): 4.0, (ANS, IMG): 1.0, (ANS, GAS): 1.0, (ANS, ANS1): 1.0, (ANS, VSINK): -12.0},
    SINK: {(ANS, VSINK): 6.0, (ANS, BOS): 4.0, (ANS, GAS): -2.0},
    TEXT: {(ANS, GAS): 0.25, (ANS, ANS1): 3.0, (ANS, QUE): 2.5, (ANS, DEC): 6.0, (ANS, IMG): -8.0},
}
SHARED_AFFINITY = {(ONE, BOS): 2.0, (ONE, VSINK): 1.0}


class ShapeMismatch(DimensionMismatch):
    pass


@dataclass(frozen=True)
class ModelParams:
    layers: int = 8
    heads: int = 4
    d: int = 256
    options: int = 4
    seed: int = 0
    qk_noise: float = 0.35
    front_value_gain: float = 1.0
    back_value_gain: float = 0.1

    def __post_init__(self):
        if self.d < MIN_D or self.d % self.heads:
            raise ValueError(f"d must be >= {MIN_D} and divisible by heads, got d={self.d}, heads={self.heads}")
        if not 2 <= self.options <= MAX_OPTIONS:
            raise ValueError(f"options must lie in [2, {MAX_OPTIONS}]")
        if self.layers < 1 or self.heads < 4:
            raise ValueError("need at least one layer and four heads")


def head_kind(layer: int, head: int, params: ModelParams) -> str:
    front = layer < params.layers // 2
    kinds = (VISUAL if front else DRIFT, VISUAL if front else DRIFT, SINK, TEXT)
    return kinds[head % 4]


def sinusoidal(S: int, width: int) -> np.ndarray:
    pos = np.arange(S)[:, None]
    freq = 1.0 / (10000.0 ** (np.arange(0, width, 2) / width))
    pe = np.zeros((S, width))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


class ToyModel:
    """Multi-head attention stack with per-layer W_Q, W_K, W_V (per head) and W_O."""

    def __init__(self, params: ModelParams | None = None):
        self.params = params = params or ModelParams()
        rng = np.random.default_rng(params.seed)
        d, H = params.d, params.heads
        dh = d // H
        self.head_dim = dh
        self.W_Q = np.zeros((params.layers, H, d, dh))
        self.W_K = np.zeros((params.layers, H, d, dh))
        self.W_V = np.zeros((params.layers, H, d, dh))
        self.W_O = np.zeros((params.layers, H * dh, d))
        K = params.options
        free = np.r_[POS, NOISE]
        for layer in range(params.layers):
            front = layer < params.layers // 2
            gain = params.front_value_gain if front else params.back_value_gain
            for h in range(H):
                table = {**SHARED_AFFINITY, **AFFINITY[head_kind(layer, h, params)]}
                for col, ((qf, kf), g) in enumerate(sorted(table.items())):
                    amp = np.sqrt(abs(g) * np.sqrt(dh))
                    self.W_Q[layer, h, qf, col] = np.sign(g) * amp
                    self.W_K[layer, h, kf, col] = amp
                used = len(table)
                self.W_Q[layer, h][free, used:] = rng.normal(scale=params.qk_noise, size=(free.size, dh - used))
                self.W_K[layer, h][free, used:] = rng.normal(scale=params.qk_noise, size=(free.size, dh - used))
                for k in range(K):
                    self.W_V[layer, h, CONTENT + k, k] = gain
                self.W_V[layer, h][NOISE, K:] = rng.normal(scale=0.05, size=(NOISE.stop - NOISE.start, dh - K))
                for k in range(K):
                    self.W_O[layer, h * dh + k, EVIDENCE + k] = 1.0
                scratch = SCRATCH.stop - SCRATCH.start
                self.W_O[layer, h * dh + K : (h + 1) * dh, SCRATCH] = rng.normal(
                    scale=0.05, size=(dh - K, scratch)
                )
        self.W_read = np.zeros((d, K))
        self.W_read[EVIDENCE : EVIDENCE + K, :] = np.eye(K)
        # fused (d, H * dh) copies: one 2-D GEMM per projection instead of H
        fuse = lambda W: np.ascontiguousarray(W.transpose(0, 2, 1, 3).reshape(params.layers, d, H * dh))  # noqa: E731
        self._q, self._k, self._v = fuse(self.W_Q), fuse(self.W_K), fuse(self.W_V)
        # hidden dims any projection reads; the rest are all-zero rows
        self._reads = np.flatnonzero(np.any(self._q != 0, axis=(0, 2)) | np.any(self._k != 0, axis=(0, 2))
                                     | np.any(self._v != 0, axis=(0, 2)))
        self._q, self._k, self._v = (W[:, self._reads] for W in (self._q, self._k, self._v))

    @property
    def L(self) -> int:
        return self.params.layers

    @property
    def H(self) -> int:
        return self.params.heads

    def _split(self, y: np.ndarray) -> np.ndarray:
        return y.reshape(y.shape[0], self.H, self.head_dim).transpose(1, 0, 2)

    def attention(self, x: np.ndarray, layer: int) -> np.ndarray:
        """Causal post-softmax attention (H, S, S) for hidden states ``x``."""
        S = x.shape[0]
        xr = x[:, self._reads]
        q = self._split(xr @ self._q[layer])
        k = self._split(xr @ self._k[layer])
        scores = q @ k.transpose(0, 2, 1) / np.sqrt(self.head_dim)
        scores = np.where(np.tril(np.ones((S, S), dtype=bool)), scores, -np.inf)
        scores -= scores.max(axis=-1, keepdims=True)
        w = np.exp(scores)
        return w / w.sum(axis=-1, keepdims=True)

    def mix(self, x: np.ndarray, weights: np.ndarray, layer: int) -> np.ndarray:
        v = self._split(x[:, self._reads] @ self._v[layer])
        heads = weights @ v  # (H, S, dh)
        concat = heads.transpose(1, 0, 2).reshape(x.shape[0], -1)
        return concat @ self.W_O[layer]


@dataclass
class ForwardResult:
    logits: np.ndarray
    attentions: list[AttentionTensor]
    hidden: list[np.ndarray]  # input of each layer
    reports: list[ReallocReport]


def forward(model: ToyModel, ctx: TokenContext, intervention: InterventionConfig | None = None) -> ForwardResult:
    """Run the stack on ``ctx``; logits are read at the last position.

    When ``intervention`` is given, each in-range layer's attention is
    reallocated before values are mixed. Sinks are detected on that layer's
    input hidden state.
    """
    if ctx.d != model.params.d:
        raise ShapeMismatch(f"context has d={ctx.d}, model expects {model.params.d}")
    x = np.array(ctx.embeddings)
    layers = set(intervention.layers(model.L)) if intervention is not None else set()
    criterion = intervention.criterion() if layers else None
    attentions, hidden, reports = [], [], []
    for layer in range(model.L):
        hidden.append(x.copy())
        t = AttentionTensor(model.attention(x, layer), layer)
        if layer in layers:
            layer_ctx = TokenContext(x, ctx.image_span, ctx.roles)
            sinks = detect_sinks(layer_ctx, criterion)
            t, report = intervene_layer(t, layer_ctx, sinks, intervention)
            reports.append(report)
        attentions.append(t)
        x = x + model.mix(x, t.weights, layer)
    logits = x[-1] @ model.W_read
    return ForwardResult(logits, attentions, hidden, reports)
