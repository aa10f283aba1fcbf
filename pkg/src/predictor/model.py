from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

FEATURES = (
    "val_loss",
    "barrier_consec",
    "act_cka_mean",
    "act_l2_mean",
    "stable_rank_dW",
    "eff_rank_dW",
    "threshold_rank_W",
    "spectral_gap_dW",
    "stable_rank_W",
)
GEOMETRY_FEATURES = FEATURES[1:]

PREDICTORS = {
    "val_loss_only": ("val_loss",),
    "geometry_only": GEOMETRY_FEATURES,
    "combined": FEATURES,
}

Scheme = Literal["loso", "lomo"]


class FeatureRow(BaseModel):
    method: str
    size: str
    seed: int = 0
    step: int
    values: dict[str, float]
    target: Optional[float] = None

    @property
    def label(self) -> str:
        return f"{self.method}/{self.size}/s{self.seed}@{self.step}"


class FeatureMatrix(BaseModel):
    """Checkpoint rows x metric columns plus the downstream target."""
    columns: list[str]
    rows: list[FeatureRow]

    @property
    def X(self) -> np.ndarray:
        return np.asarray([[row.values[c] for c in self.columns] for row in self.rows],
                          dtype=np.float64).reshape(len(self.rows), len(self.columns))

    @property
    def y(self) -> np.ndarray:
        return np.asarray([row.target for row in self.rows], dtype=np.float64)

    def groups(self, scheme: Scheme) -> list[str]:
        if scheme == "loso":
            return [row.size for row in self.rows]
        return [row.method for row in self.rows]

    def select(self, columns) -> 'FeatureMatrix':
        return FeatureMatrix(columns=list(columns), rows=self.rows)


class FitResult(BaseModel):
    columns: list[str] = Field(default_factory=list)
    coefficients: list[float]
    intercept: float
    r2: float
    ridge: float = 0.0
    scheme: Optional[str] = None
    folds: list[list[int]] = Field(default_factory=list)
    fold_labels: list[str] = Field(default_factory=list)
    predictions: list[float] = Field(default_factory=list)
    pearson: Optional[float] = None
    spearman: Optional[float] = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=np.float64) @ np.asarray(self.coefficients)


class ScreenedFeature(BaseModel):
    name: str
    rhos: list[float]
    median_abs: float


class PredictorScore(BaseModel):
    predictor: str
    features: list[str]
    loso_pearson: Optional[float] = None
    lomo_pearson: Optional[float] = None
    in_sample_r2: float
