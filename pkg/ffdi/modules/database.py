"""
FFDI - Database Module
SQLite run registry: training jobs, their stage timeline and final metrics.
The file lives at FFDI_DB_PATH (default runs.db in the working directory).
"""

import json
import os
import sqlite3
import threading
import uuid

from .logger import get_logger

logger = get_logger(__name__)

DEFAULT_DB_PATH = "runs.db"

JOB_FIELDS = {
    "status",
    "stage_label",
    "progress",
    "out_dir",
    "error",
    "result_json",
}

_initialized = set()
_init_lock = threading.Lock()


def db_path():
    return os.environ.get("FFDI_DB_PATH") or DEFAULT_DB_PATH


def _table_columns(conn, table_name):
    cursor = conn.cursor()
    cursor.execute(f"PRAGMA table_info({table_name})")
    return {row[1] for row in cursor.fetchall()}


def _ensure_column(conn, table_name, column_name, column_type):
    columns = _table_columns(conn, table_name)
    if column_name not in columns:
        cursor = conn.cursor()
        cursor.execute(f"ALTER TABLE {table_name} ADD COLUMN {column_name} {column_type}")


def _create_base_tables(conn):
    cursor = conn.cursor()

    cursor.execute('''
        CREATE TABLE IF NOT EXISTS run_jobs (
            job_id TEXT PRIMARY KEY,
            kind TEXT NOT NULL,
            status TEXT NOT NULL,
            stage_label TEXT,
            progress INTEGER NOT NULL DEFAULT 0,
            config_json TEXT,
            config_hash TEXT,
            out_dir TEXT,
            error TEXT,
            result_json TEXT,
            created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
            updated_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
        )
    ''')

    # Per-job stage/event timeline
    cursor.execute('''
        CREATE TABLE IF NOT EXISTS run_events (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            job_id TEXT NOT NULL,
            event_type TEXT NOT NULL,
            stage_label TEXT,
            details_json TEXT,
            created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
            FOREIGN KEY (job_id) REFERENCES run_jobs (job_id)
        )
    ''')

    cursor.execute('''
        CREATE TABLE IF NOT EXISTS run_metrics (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            job_id TEXT NOT NULL,
            metric_key TEXT NOT NULL,
            domain TEXT,
            metric_value REAL NOT NULL,
            recorded_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
            FOREIGN KEY (job_id) REFERENCES run_jobs (job_id)
        )
    ''')


def _ensure_backwards_compatibility(conn):
    # Registries created before out_dir/config_hash were tracked
    for column_name, column_type in (
        ("stage_label", "TEXT"),
        ("config_hash", "TEXT"),
        ("out_dir", "TEXT"),
    ):
        _ensure_column(conn, "run_jobs", column_name, column_type)


def _create_indexes(conn):
    cursor = conn.cursor()
    cursor.execute('''
        CREATE INDEX IF NOT EXISTS idx_run_events_job_time
        ON run_events(job_id, created_at)
    ''')
    cursor.execute('''
        CREATE INDEX IF NOT EXISTS idx_run_metrics_job_metric
        ON run_metrics(job_id, metric_key)
    ''')


def ensure_schema(path=None):
    path = path or db_path()
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    conn = sqlite3.connect(path)
    try:
        _create_base_tables(conn)
        _ensure_backwards_compatibility(conn)
        _create_indexes(conn)
        conn.commit()
    finally:
        conn.close()


def init_db(path=None):
    """
    Initialize the registry tables. Safe to call repeatedly.
    """
    path = path or db_path()
    ensure_schema(path)
    logger.info("Run registry initialized at %s", path)


def get_db_connection():
    """
    Returns a new SQLite connection with row factory; the schema is
    created on first use of each path.
    """
    path = db_path()
    with _init_lock:
        if path not in _initialized:
            ensure_schema(path)
            _initialized.add(path)
    conn = sqlite3.connect(path)
    conn.row_factory = sqlite3.Row
    return conn


def create_job(kind, config=None, config_hash=None, out_dir=None):
    job_id = uuid.uuid4().hex
    conn = get_db_connection()
    cursor = conn.cursor()
    cursor.execute(
        """
        INSERT INTO run_jobs (
            job_id, kind, status, stage_label, progress, config_json, config_hash, out_dir
        ) VALUES (?, ?, ?, ?, ?, ?, ?, ?)
        """,
        (job_id, kind, "queued", "Queued", 0, json.dumps(config or {}), config_hash, out_dir),
    )
    conn.commit()
    conn.close()
    return job_id


def update_job(job_id, **fields):
    updates = []
    values = []
    for key, value in fields.items():
        if key in JOB_FIELDS:
            updates.append(f"{key} = ?")
            values.append(value)
    if not updates:
        return

    updates.append("updated_at = CURRENT_TIMESTAMP")
    values.append(job_id)
    conn = get_db_connection()
    cursor = conn.cursor()
    cursor.execute(f"UPDATE run_jobs SET {', '.join(updates)} WHERE job_id = ?", values)
    conn.commit()
    conn.close()


def get_job(job_id):
    conn = get_db_connection()
    cursor = conn.cursor()
    cursor.execute("SELECT * FROM run_jobs WHERE job_id = ?", (job_id,))
    row = cursor.fetchone()
    conn.close()
    return dict(row) if row else None


def list_jobs(limit=50):
    conn = get_db_connection()
    cursor = conn.cursor()
    cursor.execute(
        """
        SELECT job_id, kind, status, stage_label, progress, config_hash, out_dir, error, created_at, updated_at
        FROM run_jobs
        ORDER BY created_at DESC, rowid DESC
        LIMIT ?
        """,
        (int(limit),),
    )
    rows = [dict(row) for row in cursor.fetchall()]
    conn.close()
    return rows


def append_run_event(job_id, event_type, stage_label, details=None):
    conn = get_db_connection()
    cursor = conn.cursor()
    cursor.execute(
        """
        INSERT INTO run_events (job_id, event_type, stage_label, details_json)
        VALUES (?, ?, ?, ?)
        """,
        (job_id, event_type, stage_label, json.dumps(details or {})),
    )
    conn.commit()
    conn.close()


def get_run_events(job_id):
    conn = get_db_connection()
    cursor = conn.cursor()
    cursor.execute(
        "SELECT event_type, stage_label, details_json, created_at FROM run_events WHERE job_id = ? ORDER BY id",
        (job_id,),
    )
    events = []
    for row in cursor.fetchall():
        event = dict(row)
        try:
            event["details"] = json.loads(event.pop("details_json") or "{}")
        except ValueError:
            event["details"] = {}
        events.append(event)
    conn.close()
    return events


def record_metrics(job_id, report):
    """Held-out and per-source accuracies of a finished RunReport."""
    conn = get_db_connection()
    cursor = conn.cursor()
    rows = [(job_id, "held_out_accuracy", report.held_out, float(report.held_out_accuracy))]
    rows += [(job_id, "source_accuracy", name, float(acc)) for name, acc in report.source_accuracy.items()]
    rows.append((job_id, "wall_clock_s", None, float(report.wall_clock_s)))
    cursor.executemany(
        "INSERT INTO run_metrics (job_id, metric_key, domain, metric_value) VALUES (?, ?, ?, ?)",
        rows,
    )
    conn.commit()
    conn.close()


def get_metrics(job_id):
    conn = get_db_connection()
    cursor = conn.cursor()
    cursor.execute(
        "SELECT metric_key, domain, metric_value FROM run_metrics WHERE job_id = ? ORDER BY id",
        (job_id,),
    )
    rows = [dict(row) for row in cursor.fetchall()]
    conn.close()
    return rows
