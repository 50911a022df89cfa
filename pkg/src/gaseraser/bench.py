"""Synthetic planted-gaslighting benchmark for the toy model.

Each sample is a multiple-choice question about a 6x6 "image". A few
salient patches carry evidence for the correct option. A small decoy region
carries dense evidence for the option the gaslight statement will push; the
visual heads barely look at it, but heads that ignore the image put most of
their (tiny) image share there. Round two
appends the model's first answer and a gaslight block whose tokens carry a
norm spike on the monitored dims, evidence for the wrong option, and a key
that pulls attention from the answer position.

Token order, round one: system(2) image(36) question(4) options(K) answer(1)
Round two inserts answer1(1) gaslight(4) before the final answer token.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .config import InterventionConfig
from .core import TokenContext
from .realloc import ReallocReport
from .toy import (
    ANS, ANS1, BOS, CONTENT, DEC, GAS, IMG, NOISE, ONE, OPT, POS, QUE, SAL, SYS, VSINK,
    ToyModel, forward, sinusoidal,
)


class InvalidParams(ValueError):
    pass


@dataclass(frozen=True)
class GenParams:
    d: int = 256
    image_side: int = 6
    options: int = 4
    system_tokens: int = 2
    question_tokens: int = 4
    gaslight_tokens: int = 4
    salient_tokens: int = 4
    decoy_tokens: int = 3
    visual_sinks: int = 2
    monitored_dims: tuple[int, ...] = (200, 231)
    spike: float = 400.0
    visibility: tuple[float, float] = (0.7, 1.1)
    salient_content: tuple[float, float] = (0.8, 1.2)
    decoy_key: tuple[float, float] = (0.6, 1.2)
    decoy_content: tuple[float, float] = (8.0, 12.0)
    gaslight_key: tuple[float, float] = (0.9, 1.1)
    gaslight_content: tuple[float, float] = (6.0, 9.0)
    answer_content: float = 3.0
    clutter_content: float = 0.3
    option_content: float = 0.2
    noise: float = 0.3
    pe_scale: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "monitored_dims", tuple(int(k) for k in self.monitored_dims))
        for name in ("visibility", "salient_content", "decoy_key", "decoy_content", "gaslight_key", "gaslight_content"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InvalidParams(f"{name}: low {lo} exceeds high {hi}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        n_img = self.image_side**2
        if self.salient_tokens + self.decoy_tokens + self.visual_sinks > n_img:
            raise InvalidParams("planted regions do not fit in the image grid")
        if self.options < 2:
            raise InvalidParams("need at least two options")
        if any(k < 192 or k >= self.d for k in self.monitored_dims):
            raise InvalidParams(f"monitored dims must lie in [192, {self.d})")
        if self.spike < 0:
            raise InvalidParams("spike magnitude must be non-negative")
        if self.round2_length > 96:
            raise InvalidParams(f"sequence of {self.round2_length} tokens exceeds 96")

    @property
    def image_span(self) -> tuple[int, int]:
        return (self.system_tokens, self.system_tokens + self.image_side**2)

    @property
    def round1_length(self) -> int:
        return self.image_span[1] + self.question_tokens + self.options + 1

    @property
    def round2_length(self) -> int:
        return self.round1_length + 1 + self.gaslight_tokens

    def replace(self, **changes) -> "GenParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class GaslightSample:
    index: int
    correct: int
    target: int
    params: GenParams
    salient: tuple[int, ...]  # absolute positions
    decoy: tuple[int, ...]
    sink_positions: tuple[int, ...]  # planted visual sinks
    prefix: np.ndarray = field(repr=False)  # system + image + question + options
    gaslight: np.ndarray = field(repr=False)
    answer1_noise: np.ndarray = field(repr=False)
    answer_noise: np.ndarray = field(repr=False)

    def _context(self, rows: list[np.ndarray], roles: list[str]) -> TokenContext:
        x = np.vstack(rows)
        x[:, POS] += self.params.pe_scale * sinusoidal(x.shape[0], POS.stop - POS.start)
        return TokenContext(x, self.params.image_span, tuple(roles))

    def _prefix_roles(self) -> list[str]:
        p = self.params
        return (
            ["system"] * p.system_tokens
            + ["image"] * p.image_side**2
            + ["question"] * p.question_tokens
            + ["option"] * p.options
        )

    def _answer_row(self) -> np.ndarray:
        row = np.zeros((1, self.params.d))
        row[0, ANS] = row[0, ONE] = 1.0
        row[0, NOISE] = self.answer_noise
        return row

    def round1_context(self) -> TokenContext:
        return self._context([self.prefix, self._answer_row()], self._prefix_roles() + ["answer"])

    def round2_context(self, answer1: int) -> TokenContext:
        p = self.params
        a1 = np.zeros((1, p.d))
        a1[0, ANS1] = a1[0, ONE] = 1.0
        a1[0, CONTENT + answer1] = p.answer_content
        a1[0, NOISE] = self.answer1_noise
        roles = self._prefix_roles() + ["answer"] + ["gaslight"] * p.gaslight_tokens + ["answer"]
        return self._context([self.prefix, a1, self.gaslight, self._answer_row()], roles)

    @property
    def gaslight_positions(self) -> tuple[int, ...]:
        start = self.params.round1_length  # the final answer token moves after the block
        return tuple(range(start, start + self.params.gaslight_tokens))


def make_sample(seed: int, index: int, p: GenParams) -> GaslightSample:
    """Sample ``index`` of the benchmark drawn with ``seed``."""
    rng = np.random.default_rng([seed, index])
    K, d = p.options, p.d
    correct = int(rng.integers(K))
    target = int((correct + rng.integers(1, K)) % K)
    u = lambda r: float(rng.uniform(*r))  # noqa: E731

    n_img = p.image_side**2
    img0 = p.system_tokens
    cells = rng.permutation(n_img)
    salient = np.sort(cells[: p.salient_tokens])
    decoy = np.sort(cells[p.salient_tokens : p.salient_tokens + p.decoy_tokens])
    sinks = np.sort(cells[p.salient_tokens + p.decoy_tokens :][: p.visual_sinks])

    n_prefix = img0 + n_img + p.question_tokens + K
    x = np.zeros((n_prefix, d))
    x[:, ONE] = 1.0
    x[:, NOISE] = rng.normal(scale=p.noise, size=(n_prefix, NOISE.stop - NOISE.start))
    x[0, BOS] = 1.0
    x[:img0, SYS] = 1.0

    image = x[img0 : img0 + n_img]
    image[:, IMG] = 1.0
    clutter = rng.integers(K, size=n_img)
    image[np.arange(n_img), CONTENT + clutter] = p.clutter_content * rng.uniform(0, 1, n_img)
    vis = u(p.visibility)
    sal_content = u(p.salient_content)
    for c in salient:
        image[c, CONTENT : CONTENT + K] = 0.0
        image[c, SAL] = vis * rng.uniform(0.9, 1.1)
        image[c, CONTENT + correct] = sal_content
    dec_key, dec_content = u(p.decoy_key), u(p.decoy_content)
    for c in decoy:
        image[c, CONTENT : CONTENT + K] = 0.0
        image[c, DEC] = dec_key * rng.uniform(0.9, 1.1)
        image[c, CONTENT + target] = dec_content
    for c in sinks:
        image[c, CONTENT : CONTENT + K] = 0.0
        image[c, VSINK] = 1.0
        image[c, list(p.monitored_dims)] = p.spike

    q0 = img0 + n_img
    x[q0 : q0 + p.question_tokens, QUE] = 1.0
    o0 = q0 + p.question_tokens
    for k in range(K):
        x[o0 + k, OPT] = 1.0
        x[o0 + k, CONTENT + k] = p.option_content

    g = np.zeros((p.gaslight_tokens, d))
    g[:, ONE] = 1.0
    g[:, NOISE] = rng.normal(scale=p.noise, size=(p.gaslight_tokens, NOISE.stop - NOISE.start))
    g[:, GAS] = u(p.gaslight_key) * rng.uniform(0.9, 1.1, p.gaslight_tokens)
    g[:, CONTENT + target] = u(p.gaslight_content)
    g[:, list(p.monitored_dims)] = p.spike

    return GaslightSample(
        index=index,
        correct=correct,
        target=target,
        params=p,
        salient=tuple(int(c) + img0 for c in salient),
        decoy=tuple(int(c) + img0 for c in decoy),
        sink_positions=tuple(int(c) + img0 for c in sinks),
        prefix=x,
        gaslight=g,
        answer1_noise=rng.normal(scale=p.noise, size=NOISE.stop - NOISE.start),
        answer_noise=rng.normal(scale=p.noise, size=NOISE.stop - NOISE.start),
    )


def generate_benchmark(seed: int, n: int, params: GenParams | None = None) -> list[GaslightSample]:
    """``n`` samples; sample ``i`` depends only on ``(seed, i)``."""
    if n < 1:
        raise InvalidParams(f"n must be >= 1, got {n}")
    params = params or GenParams()
    return [make_sample(seed, i, params) for i in range(n)]


@dataclass
class EpisodeResult:
    index: int
    correct: int
    target: int
    answer_before: int
    answer_after_base: int
    answer_after_eraser: int
    reports: list[ReallocReport] = field(default_factory=list, repr=False)

    @property
    def misled(self) -> bool:
        return self.answer_before == self.correct and self.answer_after_base != self.correct

    @property
    def recovered(self) -> bool:
        return self.misled and self.answer_after_eraser == self.correct


def baseline_answers(model: ToyModel, sample: GaslightSample) -> tuple[int, int]:
    """Round-one answer and unintervened round-two answer."""
    before = int(np.argmax(forward(model, sample.round1_context()).logits))
    base = int(np.argmax(forward(model, sample.round2_context(before)).logits))
    return before, base


def round_context(model: ToyModel, sample: GaslightSample, round_: int) -> TokenContext:
    """Round-one context, or round two built on the model's own first answer."""
    if round_ == 1:
        return sample.round1_context()
    if round_ == 2:
        return sample.round2_context(baseline_answers(model, sample)[0])
    raise ValueError(f"round must be 1 or 2, got {round_}")


def run_episode(
    model: ToyModel,
    sample: GaslightSample,
    config: InterventionConfig,
    baseline: tuple[int, int] | None = None,
) -> EpisodeResult:
    """Round one, round two without intervention, round two with it.

    ``baseline`` lets sweeps reuse the two config-independent rounds.
    """
    before, base = baseline if baseline is not None else baseline_answers(model, sample)
    ctx2 = sample.round2_context(before)
    erased = forward(model, ctx2, config)
    return EpisodeResult(
        sample.index, sample.correct, sample.target, before, base, int(np.argmax(erased.logits)), erased.reports
    )


def default_config(params: GenParams | None = None, **changes) -> InterventionConfig:
    """Default hyperparameters with the benchmark's monitored dims."""
    params = params or GenParams()
    return InterventionConfig(monitored_dims=params.monitored_dims, **changes)
