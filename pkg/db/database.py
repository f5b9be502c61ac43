"""
Run Registry Database
=====================
SQLAlchemy models and database configuration for training runs, per-epoch
metric rows and evaluation results. SQLite by default (SPKDLG_DB_URL).

Helpers never raise: a registry failure is logged and the caller carries on.
"""

from __future__ import annotations

import datetime
import json
import logging
from typing import Any, Dict, List, Optional

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text, create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import declarative_base, relationship, sessionmaker
from sqlalchemy.pool import StaticPool

from spkdlg.config import load_settings

logger = logging.getLogger(__name__)

# ==================== DATABASE CONFIGURATION ====================


def create_engine_for(url: str) -> Engine:
    """Engine for a URL; in-memory SQLite shares one connection so every session sees the same tables."""
    kwargs: Dict[str, Any] = {"echo": False}
    if url.startswith("sqlite"):
        kwargs["connect_args"] = {"check_same_thread": False}
        if url in ("sqlite://", "sqlite:///:memory:"):
            kwargs["poolclass"] = StaticPool
    return create_engine(url, **kwargs)


DATABASE_URL = load_settings().db_url

engine = create_engine_for(DATABASE_URL)

SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

Base = declarative_base()


def configure_engine(url: str) -> Engine:
    """Point the registry at another database (tests use an in-memory one)."""
    global engine
    engine = create_engine_for(url)
    SessionLocal.configure(bind=engine)
    return engine


def _utcnow() -> datetime.datetime:
    return datetime.datetime.now(datetime.timezone.utc).replace(tzinfo=None)


# ==================== MODELS ====================


class TrainingRun(Base):
    """One `train` invocation: its manifest, input hash and outcome."""

    __tablename__ = "training_runs"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String, nullable=False, unique=True, index=True)
    created_at = Column(DateTime, default=_utcnow)
    manifest_json = Column(Text, nullable=False)
    input_hash = Column(String, nullable=False, index=True)
    out_dir = Column(String, nullable=False)
    status = Column(String, nullable=False, default="running")  # running | finished | failed

    epochs = relationship("EpochLog", back_populates="run", cascade="all, delete-orphan", order_by="EpochLog.epoch")

    def __repr__(self):
        return f"<TrainingRun(run_id={self.run_id}, status={self.status})>"


class EpochLog(Base):
    __tablename__ = "epoch_logs"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String, ForeignKey("training_runs.run_id"), nullable=False, index=True)
    epoch = Column(Integer, nullable=False)
    train_loss = Column(Float, nullable=False)
    guidance_loss = Column(Float, nullable=False, default=0.0)
    dev_lu_f1 = Column(Float, nullable=True)
    dev_policy_f1 = Column(Float, nullable=True)

    run = relationship("TrainingRun", back_populates="epochs")

    def __repr__(self):
        return f"<EpochLog(run_id={self.run_id}, epoch={self.epoch}, loss={self.train_loss:.4f})>"


class EvaluationResult(Base):
    __tablename__ = "evaluation_results"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String, nullable=True, index=True)  # unset when the checkpoint was not trained here
    checkpoint_path = Column(String, nullable=False)
    task = Column(String, nullable=False)
    split = Column(String, nullable=False)
    f1 = Column(Float, nullable=False)
    threshold = Column(Float, nullable=False)
    n_utterances = Column(Integer, nullable=False)
    created_at = Column(DateTime, default=_utcnow)

    def __repr__(self):
        return f"<EvaluationResult(task={self.task}, split={self.split}, f1={self.f1:.4f})>"


# ==================== DATABASE FUNCTIONS ====================


def init_db():
    """Create all tables that do not exist yet."""
    Base.metadata.create_all(bind=engine)


def get_db():
    """
    Session generator.

        db = next(get_db())
        try:
            db.add(row)
            db.commit()
        finally:
            db.close()
    """
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


# ==================== HELPER FUNCTIONS ====================


def record_run(run_id: str, manifest: Dict[str, Any], input_hash: str, out_dir: str) -> Optional[TrainingRun]:
    db = SessionLocal()
    try:
        init_db()
        run = TrainingRun(
            run_id=run_id,
            manifest_json=json.dumps(manifest, sort_keys=True),
            input_hash=input_hash,
            out_dir=out_dir,
            status="running",
        )
        db.add(run)
        db.commit()
        db.refresh(run)
        return run
    except SQLAlchemyError as e:
        logger.warning("Run registry: could not record run %s: %s", run_id, e)
        db.rollback()
        return None
    finally:
        db.close()


def record_epoch(run_id: str, record: Any) -> bool:
    """Store one EpochRecord-like object (epoch, train_loss, guidance_loss, dev_lu_f1, dev_policy_f1)."""
    db = SessionLocal()
    try:
        db.add(
            EpochLog(
                run_id=run_id,
                epoch=record.epoch,
                train_loss=record.train_loss,
                guidance_loss=record.guidance_loss,
                dev_lu_f1=record.dev_lu_f1,
                dev_policy_f1=record.dev_policy_f1,
            )
        )
        db.commit()
        return True
    except SQLAlchemyError as e:
        logger.warning("Run registry: could not record epoch %s of %s: %s", record.epoch, run_id, e)
        db.rollback()
        return False
    finally:
        db.close()


def finish_run(run_id: str, status: str = "finished") -> bool:
    db = SessionLocal()
    try:
        run = db.query(TrainingRun).filter_by(run_id=run_id).first()
        if run is None:
            logger.warning("Run registry: unknown run %s", run_id)
            return False
        run.status = status
        db.commit()
        return True
    except SQLAlchemyError as e:
        logger.warning("Run registry: could not finish run %s: %s", run_id, e)
        db.rollback()
        return False
    finally:
        db.close()


def save_evaluation_result(
    checkpoint_path: str,
    task: str,
    split: str,
    f1: float,
    threshold: float,
    n_utterances: int,
    run_id: Optional[str] = None,
) -> Optional[EvaluationResult]:
    db = SessionLocal()
    try:
        init_db()
        result = EvaluationResult(
            run_id=run_id,
            checkpoint_path=checkpoint_path,
            task=task,
            split=split,
            f1=f1,
            threshold=threshold,
            n_utterances=n_utterances,
        )
        db.add(result)
        db.commit()
        db.refresh(result)
        return result
    except SQLAlchemyError as e:
        logger.warning("Run registry: could not save evaluation of %s: %s", checkpoint_path, e)
        db.rollback()
        return None
    finally:
        db.close()


def get_run_history(run_id: Optional[str] = None) -> List[Dict[str, Any]]:
    """
    Registered runs (newest first), each with its epoch rows, as plain dicts.
    An unreachable registry yields an empty list.
    """
    db = SessionLocal()
    try:
        query = db.query(TrainingRun)
        if run_id is not None:
            query = query.filter_by(run_id=run_id)
        runs = query.order_by(TrainingRun.id.desc()).all()
        return [
            {
                "run_id": r.run_id,
                "created_at": r.created_at.strftime("%Y-%m-%d %H:%M:%S") if r.created_at else None,
                "status": r.status,
                "input_hash": r.input_hash,
                "out_dir": r.out_dir,
                "manifest": json.loads(r.manifest_json),
                "epochs": [
                    {
                        "epoch": e.epoch,
                        "train_loss": e.train_loss,
                        "guidance_loss": e.guidance_loss,
                        "dev_lu_f1": e.dev_lu_f1,
                        "dev_policy_f1": e.dev_policy_f1,
                    }
                    for e in r.epochs
                ],
            }
            for r in runs
        ]
    except SQLAlchemyError as e:
        logger.warning("Run registry: could not read history: %s", e)
        return []
    finally:
        db.close()
