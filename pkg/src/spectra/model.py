from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

SV_FLOOR = 1e-12
DEFAULT_TAU = 0.1
REPORT_ROLES = ("wq", "wv", "w_up")


class TensorSpectrum(BaseModel):
    """Singular values of one matrix and the four rank metrics.

    Metrics are ``None`` when the spectrum is degenerate (flag ``degenerate``).
    """
    key: str
    role: str
    layer: Optional[int] = None
    factor: Optional[str] = None
    shape: tuple[int, int]
    singular_values: list[float]
    eff_rank: Optional[float] = None
    stable_rank: Optional[float] = None
    spectral_gap: Optional[float] = None
    threshold_rank: int = 0
    tau: float = DEFAULT_TAU
    flags: list[str] = Field(default_factory=list)


class SpectralReport(BaseModel):
    """Spectra of one checkpoint (``weights``) or one step pair (``deltas``)."""
    method: str
    size: str = "default"
    seed: Optional[int] = None
    mode: Literal["weights", "deltas", "run_delta"] = "weights"
    step: int
    step_from: Optional[int] = None
    sv_floor: float = SV_FLOOR
    tensors: list[TensorSpectrum] = Field(default_factory=list)

    def metric_mean(self, metric: str) -> Optional[float]:
        values = [getattr(t, metric) for t in self.tensors if getattr(t, metric) is not None]
        return float(np.mean(values)) if values else None

    def role_means(self, metric: str) -> dict[str, float]:
        grouped: dict[str, list[float]] = {}
        for tensor in self.tensors:
            value = getattr(tensor, metric)
            if value is not None:
                grouped.setdefault(tensor.role, []).append(value)
        return {role: float(np.mean(values)) for role, values in grouped.items()}

    def role_distributions(self, roles=REPORT_ROLES) -> dict[str, list[float]]:
        """Pooled singular values per projection role, for histograms."""
        pooled: dict[str, list[float]] = {role: [] for role in roles}
        for tensor in self.tensors:
            if tensor.role in pooled:
                pooled[tensor.role].extend(tensor.singular_values)
        return pooled

    def counts_above_tau(self, roles=REPORT_ROLES) -> dict[str, int]:
        return {role: int(sum(t.threshold_rank for t in self.tensors if t.role == role))
                for role in roles}
