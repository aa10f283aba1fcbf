from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class InterpCurve(BaseModel):
    """Loss along ``(1 - beta) theta_A + beta theta_B`` on a uniform beta grid."""
    model_config = ConfigDict(ser_json_inf_nan='constants')

    betas: list[float]
    losses: list[float]
    endpoints: tuple[str, str] = ("A", "B")
    methods: tuple[str, str] = ("", "")
    steps: tuple[int, int] = (0, 0)

    def reversed(self) -> 'InterpCurve':
        return InterpCurve(betas=self.betas, losses=self.losses[::-1],
                           endpoints=self.endpoints[::-1], methods=self.methods[::-1],
                           steps=self.steps[::-1])


class BarrierResult(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan='constants')

    curve: InterpCurve
    height: float
    argmax_beta: float


class BarrierSeries(BaseModel):
    """CCBH (one run, consecutive pairs) or IMBH (two runs, shared steps)."""
    model_config = ConfigDict(ser_json_inf_nan='constants')

    kind: str
    methods: tuple[str, str]
    size: str = "default"
    seed: Optional[int] = None
    results: list[BarrierResult] = Field(default_factory=list)

    @property
    def heights(self) -> np.ndarray:
        return np.asarray([result.height for result in self.results])
