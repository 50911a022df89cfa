"""Intervention hyperparameters and per-model presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .heads import GE, LE, LITERAL_DIRECTIONS, PROSE_DIRECTIONS
from .sinks import MONITORED_MAX, SinkCriterion


@dataclass(frozen=True)
class InterventionConfig:
    """Everything that parameterizes one detect -> score -> select -> reallocate pass.

    ``layer_range`` is a half-open ``(start, stop)`` pair; ``None`` means the
    front half of whatever stack the config is applied to.
    """

    tau: float = 20.0
    rho: float = 0.6
    alpha: float = 0.005
    p: float = 0.6
    monitored_dims: tuple[int, ...] = ()
    eps: float = 1e-6
    layer_range: tuple[int, int] | None = None
    delta_direction: str = GE
    xi_direction: str = LE
    use_text_sinks: bool = True
    use_image_sinks: bool = False
    renormalize: bool = False
    head_selection: bool = True
    token_selection: bool = True
    sink_mode: str = MONITORED_MAX
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "monitored_dims", tuple(int(k) for k in self.monitored_dims))
        if self.layer_range is not None:
            start, stop = (int(v) for v in self.layer_range)
            if start < 0 or stop < start:
                raise ValueError(f"bad layer range {start}:{stop}")
            object.__setattr__(self, "layer_range", (start, stop))
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"p must lie in (0, 1] (1 is the no-op sentinel), got {self.p}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        for name in ("delta_direction", "xi_direction"):
            if getattr(self, name) not in (GE, LE):
                raise ValueError(f"{name} must be 'ge' or 'le', got {getattr(self, name)!r}")

    @property
    def directions(self) -> tuple[str, str]:
        return (self.delta_direction, self.xi_direction)

    @property
    def literal(self) -> bool:
        return self.directions == LITERAL_DIRECTIONS

    def criterion(self) -> SinkCriterion:
        if not self.monitored_dims:
            raise ValueError("monitored_dims must be configured for sink detection")
        return SinkCriterion(self.monitored_dims, self.tau, self.sink_mode)

    def layers(self, n_layers: int) -> range:
        if self.layer_range is None:
            return range(0, n_layers // 2)
        start, stop = self.layer_range
        if stop > n_layers:
            raise ValueError(f"layer range {start}:{stop} exceeds stack of {n_layers} layers")
        return range(start, stop)

    def replace(self, **changes) -> "InterventionConfig":
        return dataclasses.replace(self, **changes)

    def with_literal_directions(self) -> "InterventionConfig":
        return self.replace(delta_direction=LITERAL_DIRECTIONS[0], xi_direction=LITERAL_DIRECTIONS[1])


# Hyperparameters reported for the three evaluated LMMs. Sink dims are only
# published for two of them. The layer range is left as "front half", which is
# layers 0:16 on those 32-layer models and still meaningful on smaller stacks.
PRESETS: dict[str, InterventionConfig] = {
    "llava-v1.5": InterventionConfig(alpha=0.005, monitored_dims=(1415, 2533)),
    "llava-v1.6": InterventionConfig(alpha=0.01),
    "internvl2": InterventionConfig(alpha=0.1, monitored_dims=(2624, 3584)),
}


def apply_preset(config: InterventionConfig, name: str, dims_known: bool = True) -> InterventionConfig:
    """Copy a preset's thresholds onto ``config``.

    The preset's sink dims are taken only when ``dims_known`` is false, since
    they index a 4096-wide hidden state and mean nothing to other models.
    """
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    pre = PRESETS[name]
    changes = dict(tau=pre.tau, rho=pre.rho, alpha=pre.alpha, p=pre.p)
    if not dims_known and pre.monitored_dims:
        changes["monitored_dims"] = pre.monitored_dims
    return config.replace(**changes)

__all__ = ["InterventionConfig", "PRESETS", "apply_preset", "PROSE_DIRECTIONS", "LITERAL_DIRECTIONS"]
