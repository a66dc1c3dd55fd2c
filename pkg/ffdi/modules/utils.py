"""
Shared utilities for parsing, normalization and file output.
Keep lightweight: numpy only where seeds are involved.
"""

import csv
import hashlib
import io
import json
import os
import tempfile

import numpy as np

from .errors import DataError

_TRUE_WORDS = {"1", "true", "yes", "on"}
_FALSE_WORDS = {"0", "false", "no", "off", ""}


def normalize_key(key):
    if not key:
        return ""
    return str(key).strip().lower().replace("-", "_")


def parse_bool(raw):
    if isinstance(raw, bool):
        return raw
    if isinstance(raw, (int, float)):
        return bool(raw)
    text = str(raw).strip().lower()
    if text in _TRUE_WORDS:
        return True
    if text in _FALSE_WORDS:
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def parse_list(raw, cast=str):
    """
    Accept a list, a JSON list string, or a comma-separated string.
    Empty input gives an empty list.
    """
    if raw is None:
        return []
    if isinstance(raw, (list, tuple)):
        return [cast(item) for item in raw if str(item).strip()]
    text = str(raw).strip()
    if not text:
        return []
    # Try JSON list first
    if text.startswith("[") and text.endswith("]"):
        try:
            data = json.loads(text)
            if isinstance(data, list):
                return [cast(item) for item in data]
        except ValueError:
            pass
    # Fallback: comma-separated
    return [cast(part.strip()) for part in text.split(",") if part.strip()]


def parse_choice(raw, choices):
    value = str(raw).strip().lower()
    if value not in choices:
        raise ValueError(f"{raw!r} not in {sorted(choices)}")
    return value


def format_float(value):
    """Six significant digits, as every CSV/JSON float is printed."""
    return f"{float(value):.6g}"


def stable_hash(payload, length=12):
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha1(canonical.encode("utf-8")).hexdigest()[:length]


def child_rng(seed, *indices):
    """Independent stream for (seed, index...) regardless of call order."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF] + [int(i) & 0xFFFFFFFF for i in indices])


def child_seed(seed, *indices):
    """A single 63-bit integer seed for (seed, index...); default_rng(child_seed(...)) replays the stream."""
    entropy = [int(seed) & 0xFFFFFFFF] + [int(i) & 0xFFFFFFFF for i in indices]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def atomic_write_bytes(path, payload):
    """Write via a temp file in the target folder; filesystem failures surface as DataError."""
    folder = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(folder, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror or exc}")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_path, path)
    except BaseException as exc:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        if isinstance(exc, OSError):
            raise DataError(f"cannot write {path}: {exc.strerror or exc}")
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def csv_text(header, rows):
    """Header row plus rows; floats printed with six significant digits."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buffer.getvalue()
