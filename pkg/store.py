"""
Run ledger for BlockMC Lab.
Uses SQLite to store runs, their cell summaries and per-trial values.
"""
from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
import json
import logging
from pathlib import Path
import sqlite3
from typing import Any, Dict, Iterable, List, Mapping, Optional

from config import LEDGER_SETTINGS, PATHS

logger = logging.getLogger(__name__)


@dataclass
class Run:
    """Stored run metadata."""
    id: int
    run_id: str
    command: str
    kind: str
    master_seed: Optional[str]
    version: str
    started_at: str
    ended_at: Optional[str]
    out_dir: str
    config_json: str

    @property
    def config(self) -> Dict[str, Any]:
        return json.loads(self.config_json)

    @property
    def is_complete(self) -> bool:
        return self.ended_at is not None


@dataclass
class CellSummary:
    """Stored per-cell aggregate."""
    id: int
    run_pk: int
    cell_index: int
    beta: float
    eta: float
    ratio: Optional[float]
    mean_value: float
    std_error: float
    theory_xi: Optional[float]
    success_rate: Optional[float]
    trial_count: int


def get_connection(path: Optional[Path] = None) -> sqlite3.Connection:
    """Return a configured ledger connection and ensure the schema exists."""
    db_path = Path(path) if path is not None else PATHS.ledger_path
    db_path.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(str(db_path))
    conn.row_factory = sqlite3.Row
    _configure_connection(conn)
    _create_tables(conn)
    return conn


def _configure_connection(conn: sqlite3.Connection) -> None:
    """Apply SQLite PRAGMA settings."""
    for key, value in LEDGER_SETTINGS.pragmas.items():
        conn.execute(f"PRAGMA {key} = {value}")


def _quantize(value: Optional[float]) -> Optional[float]:
    if value is None:
        return None
    return round(float(value), LEDGER_SETTINGS.value_precision)


def _seed_text(seed: Optional[int]) -> Optional[str]:
    # 64-bit seeds overflow SQLite INTEGER
    return None if seed is None else str(seed)


def _create_tables(conn: sqlite3.Connection) -> None:
    """Create ledger tables for the current schema."""
    conn.executescript("""
        CREATE TABLE IF NOT EXISTS runs (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            run_id TEXT NOT NULL,
            command TEXT NOT NULL,
            kind TEXT NOT NULL,
            master_seed TEXT,
            version TEXT NOT NULL,
            started_at TEXT NOT NULL,
            ended_at TEXT,
            out_dir TEXT NOT NULL,
            config_json TEXT NOT NULL
        );

        CREATE TABLE IF NOT EXISTS cells (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            run_pk INTEGER NOT NULL,
            cell_index INTEGER NOT NULL,
            beta REAL NOT NULL,
            eta REAL NOT NULL,
            ratio REAL,
            mean_value REAL NOT NULL,
            std_error REAL NOT NULL,
            theory_xi REAL,
            success_rate REAL,
            trial_count INTEGER NOT NULL,
            FOREIGN KEY (run_pk) REFERENCES runs(id)
        );

        CREATE TABLE IF NOT EXISTS trials (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            cell_pk INTEGER NOT NULL,
            trial_index INTEGER NOT NULL,
            seed TEXT NOT NULL,
            value REAL NOT NULL,
            relative_error REAL NOT NULL,
            converged INTEGER NOT NULL,
            iterations INTEGER NOT NULL,
            FOREIGN KEY (cell_pk) REFERENCES cells(id)
        );

        CREATE INDEX IF NOT EXISTS idx_cells_run ON cells(run_pk, cell_index);
        CREATE INDEX IF NOT EXISTS idx_trials_cell ON trials(cell_pk, trial_index);
        CREATE INDEX IF NOT EXISTS idx_runs_run_id ON runs(run_id);
    """)
    conn.commit()


def start_run(
    conn: sqlite3.Connection,
    run_id: str,
    command: str,
    config: Mapping[str, Any],
    version: str,
    out_dir: Path,
) -> int:
    """Record a new run, returns its row id."""
    cur = conn.execute(
        """INSERT INTO runs
           (run_id, command, kind, master_seed, version, started_at, out_dir, config_json)
           VALUES (?, ?, ?, ?, ?, ?, ?, ?)""",
        (
            run_id,
            command,
            config.get("kind", command),
            _seed_text(config.get("master_seed", config.get("seed"))),
            version,
            datetime.now().isoformat(),
            str(out_dir),
            json.dumps(dict(config), sort_keys=True),
        )
    )
    conn.commit()
    return cur.lastrowid


def end_run(conn: sqlite3.Connection, run_pk: int) -> None:
    """Mark a run as finished."""
    conn.execute(
        "UPDATE runs SET ended_at = ? WHERE id = ?",
        (datetime.now().isoformat(), run_pk)
    )
    conn.commit()


def add_cell(
    conn: sqlite3.Connection,
    run_pk: int,
    summary: Mapping[str, Any],
    trials: Iterable[Mapping[str, Any]],
) -> int:
    """Store one cell summary with its trials, returns the cell row id."""
    cur = conn.execute(
        """INSERT INTO cells (
                run_pk, cell_index, beta, eta, ratio, mean_value, std_error,
                theory_xi, success_rate, trial_count
           ) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)""",
        (
            run_pk,
            summary["cell_index"],
            summary["beta"],
            summary["eta"],
            summary.get("ratio"),
            _quantize(summary["mean_value"]),
            _quantize(summary["std_error"]),
            _quantize(summary.get("theory_xi")),
            summary.get("success_rate"),
            summary["trial_count"],
        )
    )
    cell_pk = cur.lastrowid
    rows = [
        (
            cell_pk,
            trial["trial_index"],
            _seed_text(trial["seed"]),
            _quantize(trial["value"]),
            _quantize(trial["relative_error"]),
            int(bool(trial["converged"])),
            trial["iterations"],
        )
        for trial in trials
    ]
    conn.executemany(
        """INSERT INTO trials (
                cell_pk, trial_index, seed, value, relative_error, converged, iterations
           ) VALUES (?, ?, ?, ?, ?, ?, ?)""",
        rows
    )
    conn.commit()
    return cell_pk


def get_run(conn: sqlite3.Connection, run_pk: int) -> Optional[Run]:
    """Get a specific run by row id."""
    row = conn.execute("SELECT * FROM runs WHERE id = ?", (run_pk,)).fetchone()
    if row:
        return Run(**dict(row))
    return None


def get_all_runs(conn: sqlite3.Connection, limit: Optional[int] = None) -> List[Run]:
    """Get all runs, newest first."""
    query = "SELECT * FROM runs ORDER BY id DESC"
    params: tuple = ()
    if limit is not None:
        query += " LIMIT ?"
        params = (int(limit),)
    return [Run(**dict(row)) for row in conn.execute(query, params).fetchall()]


def get_cells(conn: sqlite3.Connection, run_pk: int) -> List[CellSummary]:
    """Get the cell summaries of a run in cell order."""
    rows = conn.execute(
        "SELECT * FROM cells WHERE run_pk = ? ORDER BY cell_index",
        (run_pk,)
    ).fetchall()
    return [CellSummary(**dict(row)) for row in rows]


def get_trial_count(conn: sqlite3.Connection, run_pk: int) -> int:
    """Get the number of stored trials for a run."""
    row = conn.execute(
        """SELECT COUNT(*) AS cnt
           FROM trials t INNER JOIN cells c ON c.id = t.cell_pk
           WHERE c.run_pk = ?""",
        (run_pk,)
    ).fetchone()
    return row["cnt"] if row else 0


def delete_run(conn: sqlite3.Connection, run_pk: int) -> None:
    """Delete a run with its cells and trials."""
    conn.execute(
        "DELETE FROM trials WHERE cell_pk IN (SELECT id FROM cells WHERE run_pk = ?)",
        (run_pk,)
    )
    conn.execute("DELETE FROM cells WHERE run_pk = ?", (run_pk,))
    conn.execute("DELETE FROM runs WHERE id = ?", (run_pk,))
    conn.commit()
    try:
        conn.execute("VACUUM")
    except sqlite3.OperationalError:
        logger.warning("VACUUM failed after delete")

