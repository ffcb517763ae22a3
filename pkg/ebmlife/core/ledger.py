"""
Run ledger for ebmlife - history of CLI runs.
SQLite-based storage next to the run outputs.
"""
import json
import sqlite3
from pathlib import Path
from typing import Dict, List, Optional

from .models import RunManifest


class RunLedger:
    """
    SQLite-based ledger with one row per CLI run, successful or not.
    """

    def __init__(self, db_path: str):
        """
        Initialize run ledger.

        Args:
            db_path: Path to the SQLite database (created if missing)
        """
        self.db_path = str(db_path)
        Path(self.db_path).parent.mkdir(parents=True, exist_ok=True)
        self._init_db()

    def _init_db(self):
        """Initialize database schema"""
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()
            cursor.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    run_id TEXT PRIMARY KEY,
                    subcommand TEXT NOT NULL,
                    timestamp TEXT NOT NULL,
                    seed INTEGER NOT NULL,
                    config_hash TEXT NOT NULL,
                    code_version TEXT NOT NULL,
                    wall_time_s REAL NOT NULL,
                    rss_mb REAL NOT NULL,
                    success INTEGER NOT NULL,
                    error_message TEXT,
                    summary TEXT NOT NULL,
                    created_at TEXT DEFAULT CURRENT_TIMESTAMP
                )
            """)
            cursor.execute("""
                CREATE INDEX IF NOT EXISTS idx_runs_subcommand
                ON runs(subcommand, timestamp DESC)
            """)
            conn.commit()

    def record_run(self, manifest: RunManifest) -> str:
        """
        Record a run to the ledger.

        Args:
            manifest: Manifest written for the run

        Returns:
            run_id of the recorded run
        """
        with sqlite3.connect(self.db_path) as conn:
            conn.execute("""
                INSERT INTO runs (
                    run_id, subcommand, timestamp, seed, config_hash,
                    code_version, wall_time_s, rss_mb, success,
                    error_message, summary
                )
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
            """, (
                manifest.run_id,
                manifest.subcommand,
                manifest.timestamp.isoformat(),
                manifest.seed,
                manifest.config_hash,
                manifest.code_version,
                manifest.wall_time_s,
                manifest.rss_mb,
                int(manifest.success),
                (manifest.error_message or "")[:2000] or None,
                json.dumps(manifest.summary, default=str),
            ))
            conn.commit()
        return manifest.run_id

    def list_runs(self, subcommand: Optional[str] = None, limit: int = 100) -> List[Dict]:
        """
        List recent runs, newest first.

        Args:
            subcommand: Filter by subcommand (None = all)
            limit: Max runs to return
        """
        query = "SELECT * FROM runs WHERE 1=1"
        params: list = []
        if subcommand:
            query += " AND subcommand = ?"
            params.append(subcommand)
        query += " ORDER BY timestamp DESC LIMIT ?"
        params.append(limit)

        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row
            rows = conn.execute(query, params).fetchall()
        return [self._decode(row) for row in rows]

    def get_run(self, run_id: str) -> Optional[Dict]:
        """
        Get details for a specific run.

        Returns:
            Run details dict or None if not found
        """
        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row
            row = conn.execute("SELECT * FROM runs WHERE run_id = ?", (run_id,)).fetchone()
        return self._decode(row) if row else None

    @staticmethod
    def _decode(row: sqlite3.Row) -> Dict:
        result = dict(row)
        result["success"] = bool(result["success"])
        result["summary"] = json.loads(result["summary"])
        return result
