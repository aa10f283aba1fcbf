import logging

import numpy as np
import pytest

from tinylm.corpus import load_corpus
from tinylm.model import Batch, LayerKind, ModelConfig
from tinylm.params import init_params
from trainers.model import Method, TrainConfig
from trainers.service import train

logging.basicConfig(level=logging.INFO)

LAYER_KINDS = list(LayerKind)


@pytest.fixture(scope='session')
def tiny_cfg():
    """Dense decoder small enough for finite-difference checks."""
    return ModelConfig(vocab_size=32, d_model=8, n_layers=2, n_heads=2,
                       d_ff=16, max_seq_len=8, rank=2, seed=0)


@pytest.fixture(scope='session', params=LAYER_KINDS, ids=[k.value for k in LAYER_KINDS])
def kind_cfg(request, tiny_cfg):
    return tiny_cfg.with_kind(request.param)


@pytest.fixture(scope='session')
def kind_params(kind_cfg):
    params = init_params(kind_cfg)
    if kind_cfg.layer_kind == LayerKind.adapter:
        # zero B hides the adapter path from the forward pass
        rng = np.random.default_rng(3)
        params = {key: (rng.normal(0.0, 0.05, value.shape) if key.endswith(".B") else value)
                  for key, value in params.items()}
    return params


@pytest.fixture(scope='session')
def tiny_batch(tiny_cfg):
    rng = np.random.default_rng(7)
    return Batch(token_ids=rng.integers(0, tiny_cfg.vocab_size, size=(3, tiny_cfg.max_seq_len)))


@pytest.fixture(scope='session')
def byte_cfg():
    """Byte-vocabulary decoder for training on the bundled corpus."""
    return ModelConfig(vocab_size=256, d_model=8, n_layers=2, n_heads=2,
                       d_ff=16, max_seq_len=8, rank=2, seed=0)


@pytest.fixture(scope='session')
def corpus():
    return load_corpus()


@pytest.fixture(scope='session')
def trained_runs(tmp_path_factory, byte_cfg, corpus):
    """Four-step runs of every method with checkpoints at 0, 2 and 4."""
    root = tmp_path_factory.mktemp("runs")
    runs = {}
    for method in Method:
        hp = TrainConfig(method=method, steps=4, checkpoint_every=2, batch_size=2,
                         lr=1e-2, rank=2, galore_refresh_T=2, relora_reset_T=2, seed=0)
        run_dir = root / method.value
        runs[method] = (train(hp, byte_cfg, corpus, run_dir, size="xs"), run_dir)
    return runs
