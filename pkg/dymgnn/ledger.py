"""
Run ledger: one row per training run, used for runtime comparison tables.
"""

import logging
from datetime import datetime, timezone
from typing import Dict, List, Optional

from sqlalchemy import Boolean, Column, DateTime, Float, Index, Integer, String, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from dymgnn.exceptions import LedgerException
from dymgnn.version import version_string

logger = logging.getLogger(__name__)

Base = declarative_base()


def _utcnow():
    return datetime.now(timezone.utc).replace(tzinfo=None)


class TrainingRunRecord(Base):
    """
    One finished training run.

    Rows are never updated; retraining the same configuration adds a row.
    """
    __tablename__ = 'training_runs'

    id = Column(Integer, primary_key=True, autoincrement=True)
    created_at = Column(DateTime, default=_utcnow)
    version = Column(String(64), default=version_string())

    model = Column(String(64), nullable=False)
    attention = Column(Boolean, nullable=False, default=False)
    output = Column(String(1024), nullable=False)
    epochs_run = Column(Integer, nullable=False)
    best_epoch = Column(Integer, nullable=False)
    stop_reason = Column(String(32), nullable=False)
    train_seconds = Column(Float, nullable=False)
    validation_loss = Column(Float)
    seed = Column(Integer, nullable=False, default=0)

    __table_args__ = (
        Index('idx_model_attention', 'model', 'attention'),
    )

    def __repr__(self):
        return (
            f"<TrainingRunRecord("
            f"model='{self.model}', "
            f"attention={self.attention}, "
            f"train_seconds={self.train_seconds})>"
        )


class RunLedger:
    """SQLAlchemy-backed store of training runs."""

    def __init__(self, db_url: str):
        self.db_url = db_url
        try:
            self.engine = create_engine(self.db_url, pool_pre_ping=True)
            Base.metadata.create_all(self.engine)
            self.SessionLocal = sessionmaker(bind=self.engine)
            logger.debug(f"Run ledger ready at {self.db_url}")
        except Exception as e:
            raise LedgerException(f"Failed to initialize run ledger: {e}")

    def record_run(self, model: str, attention: bool, output: str, epochs_run: int,
                   best_epoch: int, stop_reason: str, train_seconds: float,
                   validation_loss: Optional[float] = None, seed: int = 0) -> int:
        """Insert a run and return its id."""
        session = self.SessionLocal()
        try:
            record = TrainingRunRecord(
                model=model, attention=attention, output=output, epochs_run=epochs_run,
                best_epoch=best_epoch, stop_reason=stop_reason, train_seconds=train_seconds,
                validation_loss=validation_loss, seed=seed,
            )
            session.add(record)
            session.commit()
            logger.info(f"Recorded {model} run ({train_seconds:.2f}s) in the ledger")
            return record.id
        except Exception as e:
            session.rollback()
            raise LedgerException(f"Failed to record run: {e}")
        finally:
            session.close()

    def runs(self, attention: Optional[bool] = None) -> List[TrainingRunRecord]:
        session = self.SessionLocal()
        try:
            query = session.query(TrainingRunRecord)
            if attention is not None:
                query = query.filter(TrainingRunRecord.attention == attention)
            return query.order_by(TrainingRunRecord.id).all()
        except Exception as e:
            session.rollback()
            raise LedgerException(f"Failed to read runs: {e}")
        finally:
            session.close()

    def runtime_table(self, attention: bool) -> List[Dict[str, object]]:
        """
        Latest training time per model, with runtimes normalized by the fastest.

        Returns:
            rows sorted by model name: model, train_seconds, normalized
        """
        latest: Dict[str, float] = {}
        for record in self.runs(attention=attention):
            latest[record.model] = record.train_seconds
        if not latest:
            return []
        fastest = min(latest.values())
        return [{
            'model': model,
            'train_seconds': seconds,
            'normalized': seconds / fastest if fastest > 0 else 1.0,
        } for model, seconds in sorted(latest.items())]

    def close(self):
        self.engine.dispose()
