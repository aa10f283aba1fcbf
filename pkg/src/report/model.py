"""Row models of every metric table; CSV columns follow field order."""
from typing import Optional

from pydantic import BaseModel, Field

SCHEMA_VERSION = 1
TOOL_VERSION = "0.1.0"


class RunRow(BaseModel):
    method: str
    size: str
    seed: int
    step: int
    train_loss: Optional[float]
    val_loss: float
    perplexity: float


class LandscapeRow(BaseModel):
    method: str
    size: str
    seed: int
    step: int
    sharpness: float
    direction_variance: float
    sigma_max: Optional[float]
    diverged: bool


class PcaRow(BaseModel):
    method: str
    size: str
    seed: int
    step: int
    k: int
    group: str
    sharpness: float
    direction_variance: float
    sigma_max: Optional[float]


class CcbhRow(BaseModel):
    method: str
    size: str
    seed: int
    step_from: int
    step: int
    barrier: float
    argmax_beta: float


class ImbhRow(BaseModel):
    method_a: str
    method_b: str
    size: str
    seed: int
    step: int
    barrier: float
    argmax_beta: float


class SpectraRow(BaseModel):
    method: str
    size: str
    seed: int
    mode: str
    step_from: Optional[int]
    step: int
    key: str
    role: str
    eff_rank: Optional[float]
    stable_rank: Optional[float]
    spectral_gap: Optional[float]
    threshold_rank: int
    flags: str


class ActivationRow(BaseModel):
    method: str
    size: str
    seed: int
    step: int
    layer: int
    d_l2: float
    cos: float
    cka: float


class PredictionRow(BaseModel):
    scheme: str
    predictor: str
    method: str
    size: str
    seed: int
    step: int
    fold: str
    target: float
    prediction: float


TABLES: dict[str, type[BaseModel]] = {
    "runs": RunRow,
    "landscape": LandscapeRow,
    "pca": PcaRow,
    "ccbh": CcbhRow,
    "imbh": ImbhRow,
    "spectra": SpectraRow,
    "activations": ActivationRow,
    "predictions": PredictionRow,
}


class TableSchema(BaseModel):
    name: str
    version: int = SCHEMA_VERSION
    columns: list[str]


class Manifest(BaseModel):
    tool: str = "lowrank-lens"
    tool_version: str
    config_hash: str
    seed: int
    files: dict[str, str] = Field(default_factory=dict)
