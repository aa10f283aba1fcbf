"""Checkpoint files.

Layout (all integers little-endian)::

    magic "LRLENS\\0" | u32 version | u64 header length | JSON header | payload

The payload holds every tensor as contiguous little-endian float64 values
in header directory order.
"""
import json
import logging
import struct
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from checkpoint.model import (Checkpoint, CheckpointHeader, CheckpointMeta, DenseView,
                              TensorEntry, DTYPE, FORMAT_MINOR, FORMAT_VERSION, MAGIC)
from exceptions import FormatError, UnsupportedMethod
from tinylm.model import LayerKind, ParamSet
from tinylm.params import projection_keys, schema, sparse_mask, validate_params
from utils.model_utilities import write_atomic

logger = logging.getLogger(__name__)

_PREFIX = struct.Struct("<IQ")
HEADER_START = len(MAGIC) + _PREFIX.size


def save(params: ParamSet, meta: CheckpointMeta, path: Path | str) -> Path:
    """Writes ``params`` atomically to ``path``."""
    validate_params(params, meta.model)
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name in schema(meta.model):
        blob = np.ascontiguousarray(params[name], dtype=DTYPE).tobytes()
        entries.append(TensorEntry(name=name, shape=list(params[name].shape),
                                   offset=offset, nbytes=len(blob)))
        blobs.append(blob)
        offset += len(blob)
    header = CheckpointHeader(**meta.model_dump(), format_minor=FORMAT_MINOR, tensors=entries)
    header_bytes = json.dumps(header.model_dump(mode='json'), sort_keys=True,
                              separators=(',', ':')).encode('utf-8')

    write_atomic(path, b"".join([MAGIC, _PREFIX.pack(FORMAT_VERSION, len(header_bytes)),
                                 header_bytes, *blobs]))
    logger.debug(f"saved {meta.method} step {meta.step} to {path}")
    return path


def _read_prefix(stream, size: int) -> CheckpointHeader:
    magic = stream.read(len(MAGIC))
    if magic != MAGIC:
        raise FormatError("bad magic", offset=0)
    prefix = stream.read(_PREFIX.size)
    if len(prefix) != _PREFIX.size:
        raise FormatError("truncated header prefix", offset=len(MAGIC) + len(prefix))
    version, header_len = _PREFIX.unpack(prefix)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", offset=len(MAGIC))
    if HEADER_START + header_len > size:
        raise FormatError("truncated header", offset=size)
    raw = stream.read(header_len)
    try:
        return CheckpointHeader.model_validate(json.loads(raw.decode('utf-8')))
    except (UnicodeDecodeError, json.JSONDecodeError, ValidationError) as err:
        raise FormatError(f"corrupt header: {err}", offset=HEADER_START)


def read_header(path: Path | str) -> CheckpointHeader:
    """Parses only the header; the payload is never read."""
    path = Path(path)
    with path.open('rb') as stream:
        return _read_prefix(stream, path.stat().st_size)


def load(path: Path | str) -> Checkpoint:
    """Reads a checkpoint written by :func:`save`.

    Raises:
        FormatError: corrupt header or payload size mismatch, with the byte offset
    """
    path = Path(path)
    size = path.stat().st_size
    with path.open('rb') as stream:
        header = _read_prefix(stream, size)
        payload_start = stream.tell()
        payload = stream.read()
    if len(payload) != header.payload_size:
        raise FormatError({"expected_payload": header.payload_size,
                           "found_payload": len(payload)},
                          offset=payload_start + min(len(payload), header.payload_size))
    params = {}
    for entry in header.tensors:
        if entry.offset + entry.nbytes > len(payload):
            raise FormatError(f"tensor {entry.name} runs past the payload",
                              offset=payload_start + entry.offset)
        values = np.frombuffer(payload, dtype=DTYPE, count=entry.nbytes // 8,
                               offset=entry.offset)
        params[entry.name] = values.astype(np.float64).reshape(entry.shape)
    return Checkpoint(params=params, meta=header.meta)


def materialize_dense(ckpt: Checkpoint) -> DenseView:
    """Common full-rank weight space for cross-checkpoint interpolation.

    Adapter: ``W + B A``. SLTrain: ``B A + S * mask``. Dense passes through.

    Raises:
        UnsupportedMethod: CoLA has a nonlinearity between its factors
    """
    params, meta = ckpt
    cfg = meta.model
    kind = cfg.layer_kind
    if kind == LayerKind.dense:
        return DenseView(params=dict(params), cfg=cfg)
    if kind == LayerKind.cola:
        raise UnsupportedMethod({
            "msg": "We exclude CoLA in the cross-method interpolation: its "
                   "B silu(A x) layers have no dense weight equivalent",
            "method": meta.method})
    dense = {key: value for key, value in params.items() if value.ndim == 1
             or key in ("embed", "head")}
    for _, _, key in projection_keys(cfg):
        low_rank = params[f"{key}.B"] @ params[f"{key}.A"]
        if kind == LayerKind.adapter:
            dense[key] = params[f"{key}.W"] + low_rank
        else:
            dense[key] = low_rank + params[f"{key}.S"] * sparse_mask(cfg, key)
    return DenseView(params=dense, cfg=cfg.with_kind(LayerKind.dense))
