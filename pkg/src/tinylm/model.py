from enum import Enum
from typing import Literal, TypeAlias

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

ParamSet: TypeAlias = dict[str, np.ndarray]

PROJECTION_ROLES = ("wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down")
ATTENTION_ROLES = ("wq", "wk", "wv", "wo")
MLP_ROLES = ("w_gate", "w_up", "w_down")


class LayerKind(str, Enum):
    dense = "dense"
    cola = "cola"
    sltrain = "sltrain"
    adapter = "adapter"


class ModelConfig(BaseModel):
    """LLaMA-style decoder hyper-parameters"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    vocab_size: int = Field(default=512, ge=2)
    d_model: int = Field(default=64, ge=2)
    n_layers: int = Field(default=4, ge=1)
    n_heads: int = Field(default=4, ge=1)
    d_ff: int = Field(default=256, ge=1)
    max_seq_len: int = Field(default=128, gt=0)
    layer_kind: LayerKind = LayerKind.dense
    rank: int = Field(default=16, ge=1)
    seed: int = 0
    sparse_density: float = Field(default=0.03, gt=0.0, le=1.0)
    cola_activation: Literal["silu", "identity"] = "silu"
    rope_base: float = Field(default=10000.0, gt=0.0)
    norm_eps: float = Field(default=1e-6, gt=0.0)
    init_std: float = Field(default=0.02, gt=0.0)

    @model_validator(mode='after')
    def check_dims(self) -> 'ModelConfig':
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if (self.d_model // self.n_heads) % 2 != 0:
            raise ValueError("head dimension must be even for rotary encoding")
        if self.layer_kind != LayerKind.dense and self.rank > min(self.d_model, self.d_ff):
            raise ValueError("rank must not exceed the smallest factored layer dim")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def derive(self, **updates) -> 'ModelConfig':
        """Validated copy with ``updates`` applied (``model_copy`` skips validators)."""
        return ModelConfig.model_validate({**self.model_dump(), **updates})

    def with_kind(self, layer_kind: LayerKind) -> 'ModelConfig':
        return self.derive(layer_kind=layer_kind)


class Batch(BaseModel):
    """Token grid ``batch x seq_len``; targets are the ids shifted by one"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    token_ids: np.ndarray

    @model_validator(mode='after')
    def check_grid(self) -> 'Batch':
        if self.token_ids.ndim != 2 or self.token_ids.shape[1] < 2:
            raise ValueError("token_ids must be a (batch, seq_len >= 2) grid")
        return self

    @property
    def rows(self) -> int:
        return int(self.token_ids.shape[0])

    @property
    def seq_len(self) -> int:
        return int(self.token_ids.shape[1])

    def chunks(self, size: int) -> list['Batch']:
        return [Batch(token_ids=self.token_ids[i:i + size])
                for i in range(0, self.rows, size)]
