from __future__ import annotations
from pathlib import Path
from typing import Iterable, Mapping
from sqlalchemy import text
from db_core import exec_sql, fetch_all, rw_tx

SCHEMA = (
    """
    CREATE TABLE IF NOT EXISTS run (
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        env TEXT NOT NULL,
        method TEXT NOT NULL,
        gateway TEXT NOT NULL,
        coverage_max INTEGER NOT NULL,
        bug_max INTEGER NOT NULL,
        UNIQUE (env, method, gateway)
    )
    """,
    """
    CREATE TABLE IF NOT EXISTS seed_metrics (
        run_id INTEGER NOT NULL REFERENCES run(id),
        seed INTEGER NOT NULL,
        element_coverage INTEGER NOT NULL,
        interactions INTEGER NOT NULL,
        update_interactions INTEGER NOT NULL,
        interaction_ratio REAL NOT NULL,
        bug_detection INTEGER NOT NULL,
        bugs TEXT NOT NULL,
        total_test_time REAL NOT NULL,
        avg_steps REAL NOT NULL,
        test_cases INTEGER NOT NULL,
        PRIMARY KEY (run_id, seed)
    )
    """,
)

SEED_COLUMNS = ("seed", "element_coverage", "interactions", "update_interactions", "interaction_ratio",
                "bug_detection", "bugs", "total_test_time", "avg_steps", "test_cases")


def init_store(db_path: str | Path):
    for sql in SCHEMA:
        exec_sql(db_path, sql)


def save_run(db_path: str | Path, env: str, method: str, gateway: str, coverage_max: int, bug_max: int,
             rows: Iterable[Mapping]) -> int:
    """Replace any earlier run of the same env/method/gateway and store its per-seed rows."""
    init_store(db_path)
    key = {"env": env, "method": method, "gateway": gateway}
    with rw_tx(db_path) as tx:
        old = tx.execute(
            text("SELECT id FROM run WHERE env=:env AND method=:method AND gateway=:gateway"), key
        ).scalar()
        if old is not None:
            tx.execute(text("DELETE FROM seed_metrics WHERE run_id=:rid"), {"rid": old})
            tx.execute(text("DELETE FROM run WHERE id=:rid"), {"rid": old})
        tx.execute(
            text(
                """
                INSERT INTO run (env, method, gateway, coverage_max, bug_max)
                VALUES (:env, :method, :gateway, :coverage_max, :bug_max)
                """
            ),
            {**key, "coverage_max": coverage_max, "bug_max": bug_max},
        )
        run_id = tx.execute(
            text("SELECT id FROM run WHERE env=:env AND method=:method AND gateway=:gateway"), key
        ).scalar_one()
        params = [{**{c: row[c] for c in SEED_COLUMNS}, "run_id": run_id} for row in rows]
        if params:
            tx.execute(
                text(
                    f"""
                    INSERT INTO seed_metrics (run_id, {", ".join(SEED_COLUMNS)})
                    VALUES (:run_id, {", ".join(":" + c for c in SEED_COLUMNS)})
                    """
                ),
                params,
            )
    return int(run_id)


def list_runs(db_path: str | Path, env: str | None = None):
    init_store(db_path)
    return fetch_all(
        db_path,
        """
        SELECT r.id, r.env, r.method, r.gateway, r.coverage_max, r.bug_max,
        (SELECT COUNT(*) FROM seed_metrics s WHERE s.run_id = r.id) AS seed_count
        FROM run r
        WHERE (:env IS NULL OR r.env = :env)
        ORDER BY r.method, r.gateway, r.env
        """,
        {"env": env},
    )


def load_seed_rows(db_path: str | Path, run_id: int):
    return fetch_all(
        db_path,
        f"""
        SELECT {", ".join(SEED_COLUMNS)}
        FROM seed_metrics
        WHERE run_id=:rid
        ORDER BY seed
        """,
        {"rid": run_id},
    )
