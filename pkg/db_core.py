from __future__ import annotations
import contextlib
import functools
from pathlib import Path
from sqlalchemy import text
from db_config import get_engine as _get_engine

@functools.lru_cache(maxsize=None)
def _engine(db_path: str):
    return _get_engine(db_path)

def get_engine(db_path: str | Path):
    """Cached SQLAlchemy Engine per results file."""
    return _engine(str(Path(db_path).resolve()))

@contextlib.contextmanager
def ro_conn(db_path: str | Path):
    """Read-only connection (no explicit commit)."""
    with get_engine(db_path).connect() as c:
        yield c

@contextlib.contextmanager
def rw_tx(db_path: str | Path):
    """Read-write transaction; auto commit/rollback."""
    with get_engine(db_path).begin() as tx:
        yield tx

def fetch_all(db_path: str | Path, sql: str, params: dict | None = None):
    with ro_conn(db_path) as c:
        return c.execute(text(sql), params or {}).mappings().fetchall()

def exec_sql(db_path: str | Path, sql: str, params: dict | list | None = None):
    with rw_tx(db_path) as tx:
        tx.execute(text(sql), params or {})
