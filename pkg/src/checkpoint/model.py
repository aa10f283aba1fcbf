from typing import NamedTuple

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from tinylm.model import ModelConfig, ParamSet

MAGIC = b"LRLENS\0"
FORMAT_VERSION = 1
FORMAT_MINOR = 0
DTYPE = "<f8"


class TensorEntry(BaseModel):
    name: str
    shape: list[PositiveInt]
    offset: int = Field(ge=0)
    nbytes: int = Field(ge=0)


class CheckpointMeta(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: ModelConfig
    method: str
    step: int = Field(ge=0)
    seed: int


class CheckpointHeader(CheckpointMeta):
    """JSON header; tensor offsets are relative to the payload start."""
    model_config = ConfigDict(frozen=True, extra='ignore')

    format_minor: int = FORMAT_MINOR
    dtype: str = DTYPE
    tensors: list[TensorEntry]

    @model_validator(mode='after')
    def check_directory(self) -> 'CheckpointHeader':
        position = 0
        for entry in sorted(self.tensors, key=lambda e: e.offset):
            if entry.offset < position:
                raise ValueError(f"tensor {entry.name} overlaps its predecessor")
            count = 1
            for dim in entry.shape:
                count *= dim
            if entry.nbytes != 8 * count:
                raise ValueError(f"tensor {entry.name} size does not match its shape")
            position = entry.offset + entry.nbytes
        return self

    @property
    def payload_size(self) -> int:
        return sum(entry.nbytes for entry in self.tensors)

    @property
    def meta(self) -> CheckpointMeta:
        return CheckpointMeta(model=self.model, method=self.method,
                              step=self.step, seed=self.seed)


class Checkpoint(NamedTuple):
    params: ParamSet
    meta: CheckpointMeta


class DenseView(NamedTuple):
    """ParamSet in the dense schema plus the dense config that evaluates it."""
    params: ParamSet
    cfg: ModelConfig
