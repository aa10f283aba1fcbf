from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field


class PerturbGrid(BaseModel):
    """Symmetric uniform grid ``{-alpha_j} U {0} U {+alpha_j}``, ``j = 1..N``."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    alpha_max: float = Field(default=0.5, gt=0.0)
    num_offsets: int = Field(default=10, ge=1)

    @property
    def alpha_min(self) -> float:
        return -self.alpha_max

    @property
    def offsets(self) -> np.ndarray:
        return self.alpha_max * np.arange(1, self.num_offsets + 1) / self.num_offsets

    @property
    def alphas(self) -> np.ndarray:
        positive = self.offsets
        return np.concatenate([-positive[::-1], [0.0], positive])

    @property
    def center(self) -> int:
        return self.num_offsets


class LandscapeCurve(BaseModel):
    """Per-direction losses ``L(delta_i, alpha)``, shape ``D x (2N + 1)``.

    Divergent probes are stored as ``+inf``.
    """
    model_config = ConfigDict(ser_json_inf_nan='constants')

    kind: Literal["random", "pca"] = "random"
    grid: PerturbGrid
    losses: list[list[float]]
    seeds: list[int] = Field(default_factory=list)
    k: Optional[int] = None
    group: Optional[str] = None
    normalized: bool = False
    sigma_max: dict[str, float] = Field(default_factory=dict)

    @property
    def table(self) -> np.ndarray:
        return np.asarray(self.losses, dtype=np.float64)

    @property
    def directions(self) -> int:
        return len(self.losses)

    @property
    def diverged(self) -> bool:
        return not bool(np.isfinite(self.table).all())

    @computed_field
    @property
    def mean(self) -> list[float]:
        return np.mean(self.table, axis=0).tolist()

    @computed_field
    @property
    def variance(self) -> list[float]:
        with np.errstate(invalid='ignore'):
            return np.var(self.table, axis=0).tolist()

    @property
    def centered_mean(self) -> np.ndarray:
        mean = np.asarray(self.mean)
        return mean - mean[self.grid.center]


class LandscapeSummary(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan='constants')

    sharpness: float
    direction_variance: float
    diverged: bool
    sigma_max: Optional[float] = None
