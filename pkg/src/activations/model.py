from typing import Optional

import numpy as np
from pydantic import BaseModel, Field


class LayerDeviation(BaseModel):
    layer: int
    d_l2: float
    cos: float
    cka: float


class ActReport(BaseModel):
    """Per-layer comparison of a target checkpoint with the reference (l = 0..L)."""
    method: str
    reference: str
    size: str = "default"
    seed: Optional[int] = None
    step: int
    layers: list[LayerDeviation] = Field(default_factory=list)

    def column(self, metric: str) -> np.ndarray:
        return np.asarray([getattr(layer, metric) for layer in self.layers])

    @property
    def cka_mean(self) -> float:
        return float(np.mean(self.column("cka")))

    @property
    def l2_mean(self) -> float:
        return float(np.mean(self.column("d_l2")))

    @property
    def cos_mean(self) -> float:
        return float(np.mean(self.column("cos")))


class StackedDeviation(BaseModel):
    """``z = norm_L2 + (1 - cos) + (1 - CKA)``; ``norm_L2`` divides ``d_L2`` by
    its mean over methods at the same (size, seed, step, layer)."""
    method: str
    size: str = "default"
    seed: Optional[int] = None
    step: int
    per_layer: list[float]
    layer_mean: float
    last_layer: float
    formula: str = "d_l2 / mean_methods(d_l2) + (1 - cos) + (1 - cka)"
