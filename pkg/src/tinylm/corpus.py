"""Byte-level corpus handling: tokenizer, held-out split and batch sampling."""
import logging
from pathlib import Path

import numpy as np

from exceptions import InvalidInput, MissingInputs
from linalg.model import SeededRng
from tinylm.model import Batch
from tinylm.params import stream_id

logger = logging.getLogger(__name__)

BUNDLED_CORPUS = Path(__file__).parent / 'data' / 'corpus.txt'
VALSET_ROWS = 64
VAL_FRACTION = 0.1


def encode(text: str | bytes) -> np.ndarray:
    """Raw UTF-8 bytes as token ids in ``[0, 256)``."""
    data = text.encode('utf-8') if isinstance(text, str) else bytes(text)
    return np.frombuffer(data, dtype=np.uint8).astype(np.int64)


def decode(token_ids) -> str:
    return bytes(np.asarray(token_ids, dtype=np.uint8).tolist()).decode('utf-8', errors='replace')


def load_corpus(path: Path | str | None = None) -> np.ndarray:
    path = Path(path) if path is not None else BUNDLED_CORPUS
    if not path.is_file():
        raise MissingInputs([str(path)], command="config")
    tokens = encode(path.read_bytes())
    logger.debug(f"loaded {tokens.size} tokens from {path}")
    return tokens


def split_corpus(tokens: np.ndarray, seq_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Splits into (train, validation) regions; the tail is held out."""
    held_out = max(int(len(tokens) * VAL_FRACTION), seq_len + 1)
    if len(tokens) - held_out < seq_len + 1:
        raise InvalidInput({"msg": "corpus too short for the sequence length",
                            "tokens": int(len(tokens)), "seq_len": seq_len})
    return tokens[:-held_out], tokens[-held_out:]


def _windows(tokens: np.ndarray, seq_len: int, rows: int, rng: SeededRng) -> Batch:
    starts = rng.generator.integers(0, len(tokens) - seq_len + 1, size=rows)
    return Batch(token_ids=np.stack([tokens[s:s + seq_len] for s in starts]))


def validation_set(val_tokens: np.ndarray, seq_len: int, seed: int,
                   rows: int = VALSET_ROWS) -> Batch:
    """Fixed validation subset, drawn once from the global seed."""
    return _windows(val_tokens, seq_len, rows, SeededRng(seed).child(stream_id("valset")))


def training_batch(train_tokens: np.ndarray, seq_len: int, batch_size: int,
                   seed: int, step: int) -> Batch:
    """Batch for ``step``; depends only on ``(seed, step)``."""
    rng = SeededRng(seed).child(stream_id("train"), step)
    return _windows(train_tokens, seq_len, batch_size, rng)


def check_vocab(tokens: np.ndarray, vocab_size: int) -> None:
    if tokens.size and int(tokens.max()) >= vocab_size:
        raise InvalidInput({"msg": "corpus byte outside model vocabulary",
                            "max_token": int(tokens.max()), "vocab_size": vocab_size})
