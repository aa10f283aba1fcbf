"""Per-experiment metric store: one row per (checkpoint, metric name)."""
import logging
import math
from pathlib import Path

from sqlalchemy import select
from sqlalchemy.orm import Session

from database import DatabaseSessionManager, store_url
from exceptions import MissingInputs
from metric_store.orm import CheckpointORM, MetricORM, RunORM
from trainers.model import RunRecord

logger = logging.getLogger(__name__)


def open_store(output_dir: Path | str) -> DatabaseSessionManager:
    Path(output_dir).mkdir(parents=True, exist_ok=True)
    return DatabaseSessionManager(store_url(output_dir))


def _run(session: Session, method: str, size: str, seed: int) -> RunORM | None:
    return session.scalar(select(RunORM).filter_by(method=method, size=size, seed=seed))


def record_run(store: DatabaseSessionManager, record: RunRecord, run_dir: Path | str) -> None:
    """Inserts or refreshes a run with its checkpoints and validation losses."""
    with store.session() as session:
        run = _run(session, record.method.value, record.size, record.seed)
        if run is None:
            run = RunORM(method=record.method.value, size=record.size, seed=record.seed,
                         run_dir=str(run_dir), status=record.status)
            session.add(run)
        run.run_dir = str(run_dir)
        run.status = record.status
        known = {ckpt.step: ckpt for ckpt in run.checkpoints}
        for entry in record.checkpoints:
            ckpt = known.get(entry.step)
            if ckpt is None:
                ckpt = CheckpointORM(step=entry.step, path=entry.checkpoint, val_loss=entry.val_loss)
                run.checkpoints.append(ckpt)
            ckpt.path = entry.checkpoint
            ckpt.train_loss = entry.train_loss
            ckpt.val_loss = entry.val_loss
            _upsert(ckpt, {"val_loss": entry.val_loss})
    logger.debug(f"recorded run {record.label} ({record.size})")


def _upsert(ckpt: CheckpointORM, metrics: dict[str, float | None]) -> None:
    existing = {metric.name: metric for metric in ckpt.metrics}
    for name, value in metrics.items():
        if value is None or math.isnan(value):
            continue
        if name in existing:
            existing[name].value = float(value)
        else:
            ckpt.metrics.append(MetricORM(name=name, value=float(value)))


def record_metrics(store: DatabaseSessionManager, method: str, size: str, seed: int,
                   step: int, metrics: dict[str, float | None]) -> None:
    """Stores metric values for one checkpoint; ``None``/NaN values are skipped.

    Raises:
        MissingInputs: the checkpoint was never recorded by ``train``
    """
    with store.session() as session:
        ckpt = session.scalar(
            select(CheckpointORM).join(RunORM)
            .filter(RunORM.method == method, RunORM.size == size,
                    RunORM.seed == seed, CheckpointORM.step == step))
        if ckpt is None:
            raise MissingInputs([f"{size}/{method}-s{seed}@{step}"], command="train")
        _upsert(ckpt, metrics)


def checkpoint_metrics(store: DatabaseSessionManager) -> list[tuple[str, str, int, int, dict[str, float]]]:
    """``(method, size, seed, step, {metric: value})`` for every checkpoint, sorted."""
    with store.session() as session:
        rows = session.scalars(select(CheckpointORM).join(RunORM)
                               .order_by(RunORM.size, RunORM.method, RunORM.seed,
                                         CheckpointORM.step)).all()
        return [(row.run.method, row.run.size, row.run.seed, row.step,
                 {metric.name: metric.value for metric in row.metrics}) for row in rows]
