from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from tinylm.model import LayerKind, ModelConfig


class Method(str, Enum):
    full_rank = "full_rank"
    galore = "galore"
    fira = "fira"
    cola = "cola"
    sltrain = "sltrain"
    relora = "relora"


METHOD_KIND = {
    Method.full_rank: LayerKind.dense,
    Method.galore: LayerKind.dense,
    Method.fira: LayerKind.dense,
    Method.cola: LayerKind.cola,
    Method.sltrain: LayerKind.sltrain,
    Method.relora: LayerKind.adapter,
}

PROJECTED_METHODS = (Method.galore, Method.fira)


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    method: Method = Method.full_rank
    steps: int = Field(default=2000, gt=0)
    batch_size: int = Field(default=8, ge=1)
    lr: float = Field(default=1e-3, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    rank: int = Field(default=16, ge=1)
    galore_refresh_T: int = Field(default=200, ge=1)
    galore_scale: float = Field(default=0.25, gt=0.0)
    fira_residual_scale: Optional[float] = Field(default=None, ge=0.0)
    relora_reset_T: int = Field(default=500, ge=1)
    relora_rewarmup_steps: int = Field(default=0, ge=0)
    warmup_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)
    min_lr_ratio: float = Field(default=0.1, ge=0.0, le=1.0)
    checkpoint_every: int = Field(default=500, ge=1)
    seed: int = 0

    @model_validator(mode='after')
    def check_schedule(self) -> 'TrainConfig':
        if self.steps % self.checkpoint_every != 0:
            raise ValueError("checkpoint_every must divide steps")
        return self

    @property
    def layer_kind(self) -> LayerKind:
        return METHOD_KIND[self.method]

    @property
    def checkpoint_steps(self) -> list[int]:
        return list(range(0, self.steps + 1, self.checkpoint_every))


class CheckpointEntry(BaseModel):
    step: int = Field(ge=0)
    checkpoint: str
    train_loss: Optional[float] = None
    val_loss: float
    perplexity: float


class RunRecord(BaseModel):
    """Training history of one (method, size, seed) run.

    ``checkpoints`` paths are relative to the directory holding ``run.json``.
    """
    method: Method
    size: str = "default"
    seed: int
    train: TrainConfig
    model: ModelConfig
    status: Literal["running", "completed", "aborted"] = "running"
    checkpoints: list[CheckpointEntry] = Field(default_factory=list)
    abort_reason: Optional[str] = None

    @model_validator(mode='after')
    def check_steps(self) -> 'RunRecord':
        steps = [entry.step for entry in self.checkpoints]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("checkpoint steps must be strictly increasing")
        return self

    @property
    def label(self) -> str:
        return f"{self.method.value}-s{self.seed}"

    @property
    def steps(self) -> list[int]:
        return [entry.step for entry in self.checkpoints]

    def entry(self, step: int) -> CheckpointEntry:
        for entry in self.checkpoints:
            if entry.step == step:
                return entry
        raise KeyError(step)

    def checkpoint_path(self, run_dir: Path, step: int) -> Path:
        return Path(run_dir) / self.entry(step).checkpoint


@dataclass
class TensorState:
    """Adam moments for one tensor, in its update space.

    Projected tensors also hold the basis (``P`` for the left side, ``Q``
    for the right side) and the step of its last refresh.
    """
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    basis: Optional[np.ndarray] = None
    side: Optional[Literal["left", "right"]] = None
    refreshed_at: Optional[int] = None
    residual_scale: Optional[float] = None

    @classmethod
    def zeros(cls, shape) -> 'TensorState':
        return cls(m=np.zeros(shape), v=np.zeros(shape))

    @property
    def stored_elements(self) -> int:
        basis = 0 if self.basis is None else self.basis.size
        return self.m.size + self.v.size + basis


@dataclass
class OptimizerState:
    tensors: dict[str, TensorState] = field(default_factory=dict)

    def stored_elements(self) -> int:
        return sum(state.stored_elements for state in self.tensors.values())
