"""Versioned CSV tables.

Each file starts with ``# schema=<name> version=<n> config_hash=<sha256> seed=<n>``
followed by the header row; columns must match ``schemas/<name>.json``.
"""
import csv
import io
import json
import logging
import re
from functools import lru_cache
from pathlib import Path
from typing import Iterable

from pydantic import BaseModel

from exceptions import SchemaError
from report.model import TABLES, TableSchema
from utils.model_utilities import get_model_fields, write_atomic

logger = logging.getLogger(__name__)

SCHEMA_DIR = Path(__file__).parent / 'schemas'
_HEADER = re.compile(r"^# schema=(\w+) version=(\d+) config_hash=(\w+) seed=(-?\d+)$")


@lru_cache(maxsize=None)
def load_schema(name: str) -> TableSchema:
    path = SCHEMA_DIR / f"{name}.json"
    if not path.is_file():
        raise SchemaError({"msg": "unknown table schema", "schema": name})
    return TableSchema.model_validate(json.loads(path.read_text()))


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ";".join(str(item) for item in value)
    return str(value)


def render_table(name: str, rows: Iterable[BaseModel], config_hash: str, seed: int) -> str:
    schema = load_schema(name)
    columns = get_model_fields(TABLES[name])
    if columns != schema.columns:
        raise SchemaError({"msg": "row model drifted from committed schema", "schema": name})
    stream = io.StringIO()
    stream.write(f"# schema={name} version={schema.version} "
                 f"config_hash={config_hash} seed={seed}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        data = row.model_dump()
        writer.writerow([_cell(data[column]) for column in columns])
    return stream.getvalue()


def write_table(path: Path | str, name: str, rows: Iterable[BaseModel],
                config_hash: str, seed: int) -> Path:
    path = write_atomic(path, render_table(name, rows, config_hash, seed).encode('utf-8'))
    logger.info(f"wrote {path}")
    return path


def read_table(path: Path | str) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Header fields and rows of a table, validated against its schema.

    Raises:
        SchemaError: missing/unknown header, version or column mismatch
    """
    path = Path(path)
    lines = path.read_text(encoding='utf-8').splitlines()
    match = _HEADER.match(lines[0]) if lines else None
    if match is None:
        raise SchemaError({"msg": "missing schema header line", "file": str(path)})
    name, version, config_hash, seed = match.groups()
    schema = load_schema(name)
    if int(version) != schema.version:
        raise SchemaError({"msg": "schema version mismatch", "file": str(path),
                           "expected": schema.version, "found": int(version)})
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header != schema.columns:
        raise SchemaError({"msg": "columns do not match schema", "file": str(path),
                           "expected": schema.columns, "found": header})
    rows = []
    for number, values in enumerate(reader, start=3):
        if len(values) != len(header):
            raise SchemaError({"msg": "ragged row", "file": str(path), "line": number})
        rows.append(dict(zip(header, values)))
    meta = {"schema": name, "version": version, "config_hash": config_hash, "seed": seed}
    return meta, rows
