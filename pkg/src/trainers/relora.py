import logging

import numpy as np

from exceptions import InvalidInput, UnsupportedMethod
from tinylm.model import LayerKind, ModelConfig, ParamSet
from tinylm.params import adapter_a_init, projection_keys
from trainers.model import OptimizerState, TensorState

logger = logging.getLogger(__name__)


def relora_cycle(params: ParamSet, state: OptimizerState, step: int,
                 cfg: ModelConfig, reset_T: int) -> ParamSet:
    """Merges every adapter into its frozen base and restarts it.

    ``W <- W + B A``; ``A`` is redrawn from the stream of cycle
    ``step // reset_T``, ``B <- 0`` and both factors' moments are zeroed.
    The merged model computes the same function as before the merge.
    """
    if cfg.layer_kind != LayerKind.adapter:
        raise UnsupportedMethod({"msg": "relora merge needs adapter layers",
                                 "layer_kind": cfg.layer_kind.value})
    if step <= 0 or step % reset_T != 0:
        raise InvalidInput({"msg": "merge step must be a positive multiple of relora_reset_T",
                            "step": step, "relora_reset_T": reset_T})
    cycle = step // reset_T
    merged = dict(params)
    for _, _, key in projection_keys(cfg):
        a_key, b_key, w_key = f"{key}.A", f"{key}.B", f"{key}.W"
        merged[w_key] = params[w_key] + params[b_key] @ params[a_key]
        merged[a_key] = adapter_a_init(cfg, key, cycle)
        merged[b_key] = np.zeros_like(params[b_key])
        for factor_key in (a_key, b_key):
            state.tensors[factor_key] = TensorState.zeros(merged[factor_key].shape)
    logger.info(f"relora merge #{cycle} at step {step}")
    return merged
