from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from landscape.model import PerturbGrid
from tinylm.model import LayerKind, ModelConfig
from trainers.model import Method, TrainConfig
from utils.model_utilities import model_hash


class SizeSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    name: str = Field(min_length=1)
    model: ModelConfig = ModelConfig()


class MetricSuite(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    landscape: bool = True
    pca: bool = True
    interp: bool = True
    spectra: bool = True
    activations: bool = True


class Grids(BaseModel):
    """Probe grids: landscape alpha/N/D/K, interpolation beta points, spectra tau."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    alpha_max: float = Field(default=0.5, gt=0.0)
    num_offsets: int = Field(default=10, ge=1)
    directions: int = Field(default=100, ge=1)
    pca_top_k: int = Field(default=3, ge=1)
    pca_group: Literal["all", "role", "block"] = "all"
    normalize_directions: bool = False
    include_all_tensors: bool = False
    beta_points: int = Field(default=11, ge=3)
    fine_interp: bool = False
    tau: float = Field(default=0.1, gt=0.0)
    activation_rows: int = Field(default=16, ge=1)

    @property
    def perturb_grid(self) -> PerturbGrid:
        return PerturbGrid(alpha_max=self.alpha_max, num_offsets=self.num_offsets)

    @property
    def interp_points(self) -> int:
        return 21 if self.fine_interp else self.beta_points


class ExperimentConfig(BaseModel):
    """Everything a pipeline run depends on; ``seed`` has no default."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    seed: int
    seeds: Optional[list[int]] = None
    sizes: list[SizeSpec] = Field(default_factory=lambda: [SizeSpec(name="desk")], min_length=1)
    methods: list[Method] = Field(default_factory=lambda: list(Method), min_length=1)
    reference_method: Method = Method.full_rank
    train: TrainConfig = TrainConfig()
    method_overrides: dict[Method, dict] = Field(default_factory=dict)
    metrics: MetricSuite = MetricSuite()
    grids: Grids = Grids()
    output_dir: str = "output"
    corpus: Optional[str] = None
    targets: Optional[str] = None

    @model_validator(mode='after')
    def check_references(self) -> 'ExperimentConfig':
        names = [size.name for size in self.sizes]
        if len(set(names)) != len(names):
            raise ValueError("size names must be unique")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("methods must be unique")
        unknown = sorted(m.value for m in self.method_overrides if m not in self.methods)
        if unknown:
            raise ValueError(f"overrides for methods not in the experiment: {unknown}")
        for method in self.methods:
            try:
                hp = self.train_config(method)
            except ValidationError as err:
                raise ValueError(f"train config for {method.value}: "
                                 + "; ".join(e["msg"] for e in err.errors()))
            for size in self.sizes:
                if hp.layer_kind != LayerKind.dense and hp.rank > min(size.model.d_model,
                                                                    size.model.d_ff):
                    raise ValueError(f"rank {hp.rank} of {method.value} exceeds the "
                                     f"layer dims of size {size.name}")
        return self

    @property
    def run_seeds(self) -> list[int]:
        return list(self.seeds) if self.seeds else [self.seed]

    def train_config(self, method: Method, seed: int | None = None) -> TrainConfig:
        return TrainConfig.model_validate({**self.train.model_dump(),
                                           **self.method_overrides.get(method, {}),
                                           "method": method,
                                           "seed": self.seed if seed is None else seed})

    def size(self, name: str) -> SizeSpec:
        for size in self.sizes:
            if size.name == name:
                return size
        raise KeyError(name)

    def config_hash(self) -> str:
        return model_hash(self)

    def output_path(self, base: Path | None = None) -> Path:
        path = Path(self.output_dir)
        return path if path.is_absolute() or base is None else base / path
