from __future__ import annotations

import dataclasses
from dataclasses import dataclass

WEIBULL = "weibull"
PIECEWISE = "piecewise"
SURVIVAL_HEADS = (WEIBULL, PIECEWISE)


@dataclass(frozen=True)
class HiVaeConfig:
    """Architecture and optimisation settings.

    ``s_dim`` is the number of mixture components L, ``z_dim`` the latent
    dimension K and ``y_dim`` the width H of the shared representation.
    ``batch_size`` of 0 means full batch.
    """

    s_dim: int = 10
    z_dim: int = 10
    y_dim: int = 10
    survival_head: str = WEIBULL
    n_intervals: int = 10
    survival_layers: int = 1
    encoder_hidden: int = 0
    learning_rate: float = 1e-3
    batch_size: int = 100
    max_epochs: int = 300
    patience: int = 20
    min_rel_improvement: float = 1e-4
    temperature: float = 1.0
    anneal_to: float | None = None
    include_treatment: bool = False

    def __post_init__(self):
        for name in ("s_dim", "z_dim", "y_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.survival_head not in SURVIVAL_HEADS:
            raise ValueError(f"survival_head must be one of {SURVIVAL_HEADS}, got {self.survival_head!r}")
        if self.n_intervals < 1:
            raise ValueError("n_intervals must be >= 1")
        if self.survival_layers not in (1, 2):
            raise ValueError("survival_layers must be 1 or 2")
        if self.encoder_hidden < 0 or self.batch_size < 0:
            raise ValueError("encoder_hidden and batch_size must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 0 or self.patience < 1:
            raise ValueError("max_epochs must be >= 0 and patience >= 1")
        if self.temperature <= 0 or (self.anneal_to is not None and self.anneal_to <= 0):
            raise ValueError("Gumbel-Softmax temperatures must be positive")

    def replace(self, **changes) -> "HiVaeConfig":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "HiVaeConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown HiVaeConfig fields: {sorted(unknown)}")
        return cls(**obj)
