import logging
from contextlib import contextmanager
from pathlib import Path

from sqlalchemy import create_engine, Engine
from sqlalchemy.orm import DeclarativeBase, Session, sessionmaker

from settings import settings

logger = logging.getLogger(__name__)


class Base(DeclarativeBase):
    pass


class DatabaseSessionManager:
    """Owns the engine of one experiment's metric store."""

    def __init__(self, url: str):
        self._engine: Engine | None = create_engine(url)
        self._session_maker: sessionmaker | None = sessionmaker(
            autoflush=False,
            bind=self._engine
        )
        Base.metadata.create_all(bind=self._engine)

    @contextmanager
    def session(self):
        if self._session_maker is None:
            raise Exception("Session is not initialized")
        session: Session = self._session_maker()
        try:
            yield session
            session.commit()
        except Exception as err:
            logger.error(f"metric store session error: {err}")
            session.rollback()
            raise
        finally:
            session.close()

    def close(self):
        if self._engine is not None:
            self._engine.dispose()
        self._engine = None
        self._session_maker = None


def store_url(output_dir: Path | str) -> str:
    return f"sqlite:///{Path(output_dir) / settings.database_name}"
