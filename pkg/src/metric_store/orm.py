from typing import List, Optional

from sqlalchemy import Float, ForeignKey, String, UniqueConstraint
from sqlalchemy.orm import Mapped, mapped_column, relationship

from database import Base


class RunORM(Base):
    __tablename__ = "runs"
    __table_args__ = (UniqueConstraint("method", "size", "seed"),)

    # columns
    id: Mapped[int] = mapped_column(primary_key=True)
    method: Mapped[str] = mapped_column(String, nullable=False)
    size: Mapped[str] = mapped_column(String, nullable=False)
    seed: Mapped[int] = mapped_column(nullable=False)
    run_dir: Mapped[str] = mapped_column(String, nullable=False)
    status: Mapped[str] = mapped_column(String, nullable=False, default="running")
    # relations
    checkpoints: Mapped[List["CheckpointORM"]] = relationship(
        back_populates="run", cascade="all, delete-orphan", order_by="CheckpointORM.step")


class CheckpointORM(Base):
    __tablename__ = "checkpoints"
    __table_args__ = (UniqueConstraint("run_fk", "step"),)

    # columns
    id: Mapped[int] = mapped_column(primary_key=True)
    step: Mapped[int] = mapped_column(nullable=False)
    path: Mapped[str] = mapped_column(String, nullable=False)
    train_loss: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    val_loss: Mapped[float] = mapped_column(Float, nullable=False)
    run_fk: Mapped[int] = mapped_column(ForeignKey("runs.id", ondelete="CASCADE"))
    # relations
    run: Mapped["RunORM"] = relationship(back_populates="checkpoints")
    metrics: Mapped[List["MetricORM"]] = relationship(
        back_populates="checkpoint", cascade="all, delete-orphan")


class MetricORM(Base):
    __tablename__ = "metrics"
    __table_args__ = (UniqueConstraint("checkpoint_fk", "name"),)

    # columns
    id: Mapped[int] = mapped_column(primary_key=True)
    name: Mapped[str] = mapped_column(String, nullable=False)
    value: Mapped[float] = mapped_column(Float, nullable=False)
    checkpoint_fk: Mapped[int] = mapped_column(ForeignKey("checkpoints.id", ondelete="CASCADE"))
    # relations
    checkpoint: Mapped["CheckpointORM"] = relationship(back_populates="metrics")
