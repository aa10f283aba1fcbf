"""Module provides utilitary functions for pydantic model operations"""
import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, List

from pydantic import BaseModel

logger = logging.getLogger(__name__)


def get_model_fields(
        model: type[BaseModel] | BaseModel
) -> List[str]:
    """Extracts list of fields from provided model

    Args:
        model (BaseModel): pydantic model (class or instance) to extract fields from

    Returns:
        list of field names from model, declared fields first
    """
    cls = model if isinstance(model, type) else type(model)
    return list(
        (*cls.model_fields,
         *cls.model_computed_fields)
    )


def canonical_json(payload: Any) -> str:
    """Key-sorted compact JSON; the text hashed by :func:`model_hash`."""
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode='json')
    return json.dumps(payload, sort_keys=True, separators=(',', ':'), allow_nan=True)


def model_hash(payload: Any) -> str:
    return hashlib.sha256(canonical_json(payload).encode('utf-8')).hexdigest()


def write_atomic(path: Path | str, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, 'wb') as stream:
            stream.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_model_json(model: BaseModel | Any, path: Path | str) -> Path:
    """Writes a model (or plain JSON payload) with stable key order."""
    if isinstance(model, BaseModel):
        model = model.model_dump(mode='json')
    text = json.dumps(model, sort_keys=True, indent=2, allow_nan=True) + "\n"
    logger.debug(f"writing {path}")
    return write_atomic(path, text.encode('utf-8'))
