from pathlib import Path

from sqlalchemy import create_engine
from sqlalchemy.engine import URL


def results_url(db_path: str | Path) -> URL:
    return URL.create("sqlite", database=str(Path(db_path)))


def get_engine(db_path: str | Path):
    """
    Creates and returns a SQLAlchemy engine for the SQLite results store at ``db_path``.
    """
    Path(db_path).parent.mkdir(parents=True, exist_ok=True)
    # echo=True logs every statement; keep it off for experiment runs
    return create_engine(results_url(db_path), echo=False)
