"""ParamSet schema, initialisation and key helpers for every layer kind.

Key layout::

    embed, head, final_norm
    layers.{l}.attn_norm, layers.{l}.mlp_norm
    layers.{l}.{role}            dense projection (out x in)
    layers.{l}.{role}.A / .B     low-rank factors (cola, sltrain, adapter)
    layers.{l}.{role}.S          masked sparse component (sltrain)
    layers.{l}.{role}.W          frozen base weight (adapter)
"""
import logging
import zlib
from functools import lru_cache

import numpy as np
from scipy.stats import truncnorm

from exceptions import SchemaError
from linalg.model import SeededRng
from tinylm.model import (LayerKind, ModelConfig, ParamSet, PROJECTION_ROLES,
                          ATTENTION_ROLES, MLP_ROLES)

logger = logging.getLogger(__name__)

FACTORS = {
    LayerKind.dense: (),
    LayerKind.cola: ("A", "B"),
    LayerKind.sltrain: ("A", "B", "S"),
    LayerKind.adapter: ("W", "A", "B"),
}


def stream_id(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def role_shape(cfg: ModelConfig, role: str) -> tuple[int, int]:
    if role in ATTENTION_ROLES:
        return cfg.d_model, cfg.d_model
    if role in ("w_gate", "w_up"):
        return cfg.d_ff, cfg.d_model
    if role == "w_down":
        return cfg.d_model, cfg.d_ff
    raise SchemaError(f"unknown projection role {role}")


def projection_keys(cfg: ModelConfig) -> list[tuple[int, str, str]]:
    return [(layer, role, f"layers.{layer}.{role}")
            for layer in range(cfg.n_layers)
            for role in PROJECTION_ROLES]


def parse_key(key: str) -> tuple[int | None, str, str | None]:
    """Splits a param key into ``(layer, role, factor)``."""
    parts = key.split(".")
    if parts[0] != "layers":
        return None, parts[0], None
    factor = parts[3] if len(parts) > 3 else None
    return int(parts[1]), parts[2], factor


def base_key(key: str) -> str:
    layer, role, _ = parse_key(key)
    return key if layer is None else f"layers.{layer}.{role}"


def role_group(role: str) -> str:
    if role in ATTENTION_ROLES:
        return "attention"
    if role in MLP_ROLES:
        return "mlp"
    return "other"


def factor_shape(cfg: ModelConfig, role: str, factor: str) -> tuple[int, int]:
    out_dim, in_dim = role_shape(cfg, role)
    if factor == "A":
        return cfg.rank, in_dim
    if factor == "B":
        return out_dim, cfg.rank
    return out_dim, in_dim


def schema(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered key -> shape map a ParamSet of ``cfg`` must match."""
    shapes: dict[str, tuple[int, ...]] = {"embed": (cfg.vocab_size, cfg.d_model)}
    for layer in range(cfg.n_layers):
        shapes[f"layers.{layer}.attn_norm"] = (cfg.d_model,)
        shapes[f"layers.{layer}.mlp_norm"] = (cfg.d_model,)
        for role in PROJECTION_ROLES:
            key = f"layers.{layer}.{role}"
            factors = FACTORS[cfg.layer_kind]
            if not factors:
                shapes[key] = role_shape(cfg, role)
            for factor in factors:
                shapes[f"{key}.{factor}"] = factor_shape(cfg, role, factor)
    shapes["final_norm"] = (cfg.d_model,)
    shapes["head"] = (cfg.vocab_size, cfg.d_model)
    return shapes


def validate_params(params: ParamSet, cfg: ModelConfig) -> None:
    """Raises SchemaError when ``params`` does not match ``cfg``."""
    expected = schema(cfg)
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise SchemaError({"msg": "param keys do not match layer kind",
                           "layer_kind": cfg.layer_kind.value,
                           "missing": missing, "unexpected": extra})
    for key, shape in expected.items():
        if tuple(params[key].shape) != shape:
            raise SchemaError({"msg": "param shape mismatch", "key": key,
                               "expected": list(shape),
                               "got": list(params[key].shape)})


@lru_cache(maxsize=1024)
def _cached_mask(seed: int, key: str, rows: int, cols: int, density: float) -> np.ndarray:
    rng = SeededRng(seed).child(stream_id(key + ".mask"))
    nnz = max(1, int(round(density * rows * cols)))
    support = np.sort(rng.generator.choice(rows * cols, size=nnz, replace=False))
    mask = np.zeros(rows * cols, dtype=bool)
    mask[support] = True
    mask = mask.reshape(rows, cols)
    mask.setflags(write=False)
    return mask


def sparse_mask(cfg: ModelConfig, key: str) -> np.ndarray:
    """Fixed SLTrain support for the projection ``key``, drawn once from the model seed."""
    _, role, _ = parse_key(key)
    rows, cols = role_shape(cfg, role)
    return _cached_mask(cfg.seed, base_key(key), rows, cols, cfg.sparse_density)


def _truncated_normal(rng: SeededRng, shape, std: float) -> np.ndarray:
    return truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=shape,
                         random_state=rng.generator)


def adapter_a_init(cfg: ModelConfig, key: str, cycle: int = 0) -> np.ndarray:
    """Adapter A factor; ``cycle`` > 0 gives the re-initialisation after a merge."""
    _, role, _ = parse_key(key)
    shape = factor_shape(cfg, role, "A")
    rng = SeededRng(cfg.seed).child(stream_id(base_key(key) + ".A"), cycle)
    return _truncated_normal(rng, shape, 1.0 / np.sqrt(shape[1]))


def init_params(cfg: ModelConfig) -> ParamSet:
    """Deterministic initial ParamSet for ``cfg``.

    Every tensor draws from its own child stream named after its key, so
    tensors shared between layer kinds (embeddings, norms, the adapter base
    weight) start identical across methods with the same seed.
    """
    root = SeededRng(cfg.seed)
    factor_std = float(np.sqrt(cfg.init_std / np.sqrt(cfg.rank)))
    params: ParamSet = {}
    for key, shape in schema(cfg).items():
        layer, role, factor = parse_key(key)
        if len(shape) == 1:
            params[key] = np.ones(shape)
        elif factor is None or factor == "W":
            params[key] = _truncated_normal(root.child(stream_id(base_key(key))),
                                            shape, cfg.init_std)
        elif cfg.layer_kind == LayerKind.adapter and factor == "A":
            params[key] = adapter_a_init(cfg, key)
        elif cfg.layer_kind == LayerKind.adapter and factor == "B":
            params[key] = np.zeros(shape)
        elif factor == "S":
            values = _truncated_normal(root.child(stream_id(key)), shape, cfg.init_std)
            params[key] = np.where(sparse_mask(cfg, key), values, 0.0)
        else:
            params[key] = _truncated_normal(root.child(stream_id(key)), shape, factor_std)
    logger.debug(f"initialised {len(params)} tensors for {cfg.layer_kind.value}")
    return params


def matrix_keys(params: ParamSet, include_all: bool = False) -> list[str]:
    """Keys eligible for perturbation and spectra.

    By default only 2-D attention/MLP tensors (dense weights or their
    factors); ``include_all`` widens this to embeddings, head and norms.
    """
    if include_all:
        return sorted(params)
    return sorted(key for key, value in params.items()
                  if value.ndim == 2 and parse_key(key)[1] in PROJECTION_ROLES)


def copy_params(params: ParamSet) -> ParamSet:
    return {key: value.copy() for key, value in params.items()}
