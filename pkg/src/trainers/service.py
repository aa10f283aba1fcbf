"""Training loop shared by the six pre-training regimes."""
import logging
import math
from pathlib import Path

import numpy as np

from checkpoint.model import CheckpointMeta
from checkpoint.service import save
from exceptions import NumericalError
from tinylm.corpus import check_vocab, split_corpus, training_batch, validation_set
from tinylm.model import ModelConfig, ParamSet
from tinylm.network import forward_grads, validation_loss
from tinylm.params import init_params, matrix_keys, parse_key
from trainers.model import (CheckpointEntry, Method, OptimizerState, PROJECTED_METHODS,
                            RunRecord, TensorState, TrainConfig)
from trainers.optim import adam_step, check_grad, fira_step, galore_step, projected_state
from trainers.relora import relora_cycle
from utils.model_utilities import write_model_json

logger = logging.getLogger(__name__)

RUN_FILE = "run.json"


def learning_rate(hp: TrainConfig, step: int) -> float:
    """Linear warmup over ``warmup_fraction`` of the run, then cosine decay
    to ``min_lr_ratio * lr``; ReLoRA may re-warm after every merge."""
    warmup = int(round(hp.warmup_fraction * hp.steps))
    if step < warmup:
        factor = (step + 1) / warmup
    else:
        progress = (step - warmup) / max(1, hp.steps - warmup)
        factor = hp.min_lr_ratio + (1.0 - hp.min_lr_ratio) * 0.5 * (1.0 + math.cos(math.pi * progress))
    if hp.method == Method.relora and hp.relora_rewarmup_steps and step >= hp.relora_reset_T:
        since_merge = step % hp.relora_reset_T
        if since_merge < hp.relora_rewarmup_steps:
            factor *= (since_merge + 1) / hp.relora_rewarmup_steps
    return hp.lr * factor


def run_model_config(hp: TrainConfig, model_cfg: ModelConfig) -> ModelConfig:
    """Model config of a run: layer kind from the method, rank and seed from ``hp``."""
    return model_cfg.derive(layer_kind=hp.layer_kind, rank=hp.rank, seed=hp.seed)


class Optimizer:
    """Per-tensor update dispatch for one run.

    GaLore/Fira project the 2-D attention and MLP weights and use plain Adam
    elsewhere; the ReLoRA base weights ``.W`` are frozen.
    """

    def __init__(self, hp: TrainConfig, cfg: ModelConfig, params: ParamSet):
        self.hp = hp
        self.cfg = cfg
        self.state = OptimizerState()
        self.projected = set(matrix_keys(params)) if hp.method in PROJECTED_METHODS else set()
        self.frozen = {key for key in params if parse_key(key)[2] == "W"}
        for key, value in params.items():
            if key in self.frozen:
                continue
            if key in self.projected:
                self.state.tensors[key] = projected_state(value.shape, hp.rank)
            else:
                self.state.tensors[key] = TensorState.zeros(value.shape)

    def step(self, params: ParamSet, grads: ParamSet, lr: float, step: int) -> ParamSet:
        for key in self.state.tensors:
            check_grad(grads[key], key)
        updated = {}
        for key, value in params.items():
            state = self.state.tensors.get(key)
            if state is None:
                updated[key] = value
            elif key not in self.projected:
                updated[key] = adam_step(value, grads[key], state, self.hp, lr)
            elif self.hp.method == Method.fira:
                updated[key] = fira_step(value, grads[key], state, self.hp, lr, step)
            else:
                updated[key] = galore_step(value, grads[key], state, self.hp, lr, step)
        return updated

    def merge(self, params: ParamSet, step: int) -> ParamSet:
        return relora_cycle(params, self.state, step, self.cfg, self.hp.relora_reset_T)


def _checkpoint(record: RunRecord, run_dir: Path, params: ParamSet, cfg: ModelConfig,
                valset, step: int, train_loss: float | None) -> None:
    name = f"ckpt-{step:06d}.lrl"
    save(params, CheckpointMeta(model=cfg, method=record.method.value,
                                step=step, seed=record.seed), run_dir / name)
    val_loss = validation_loss(params, cfg, valset)
    record.checkpoints.append(CheckpointEntry(step=step, checkpoint=name,
                                              train_loss=train_loss, val_loss=val_loss,
                                              perplexity=float(np.exp(val_loss))))
    logger.info(f"{record.label} step {step}: val loss {val_loss:.4f}")


def train(hp: TrainConfig, model_cfg: ModelConfig, corpus: np.ndarray,
          run_dir: Path | str, size: str = "default") -> RunRecord:
    """Trains one run, writing checkpoints and ``run.json`` into ``run_dir``.

    Checkpoints are written at step 0, every ``checkpoint_every`` steps and
    at the final step. A numerical failure persists the partial record with
    status ``aborted`` before re-raising.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg = run_model_config(hp, model_cfg)
    check_vocab(corpus, cfg.vocab_size)
    train_tokens, val_tokens = split_corpus(corpus, cfg.max_seq_len)
    valset = validation_set(val_tokens, cfg.max_seq_len, hp.seed)

    params = init_params(cfg)
    optimizer = Optimizer(hp, cfg, params)
    record = RunRecord(method=hp.method, size=size, seed=hp.seed, train=hp, model=cfg)
    try:
        _checkpoint(record, run_dir, params, cfg, valset, 0, None)
        for step in range(hp.steps):
            batch = training_batch(train_tokens, cfg.max_seq_len, hp.batch_size, hp.seed, step)
            loss, grads = forward_grads(params, cfg, batch)
            params = optimizer.step(params, grads, learning_rate(hp, step), step)
            done = step + 1
            if hp.method == Method.relora and done % hp.relora_reset_T == 0:
                params = optimizer.merge(params, done)
            if done % hp.checkpoint_every == 0:
                _checkpoint(record, run_dir, params, cfg, valset, done, loss)
    except NumericalError as err:
        record.status = "aborted"
        record.abort_reason = str(err.detail)
        write_model_json(record, run_dir / RUN_FILE)
        logger.error(f"{record.label} aborted: {err.detail}")
        raise
    record.status = "completed"
    write_model_json(record, run_dir / RUN_FILE)
    return record


def load_run(run_dir: Path | str) -> RunRecord:
    return RunRecord.model_validate_json((Path(run_dir) / RUN_FILE).read_text())
