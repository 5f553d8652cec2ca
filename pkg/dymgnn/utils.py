"""
Utility functions for dymgnn
"""

import hashlib
import json
import logging
import os
import re
import tempfile
from datetime import datetime
from typing import Any, Iterable, List, Optional

import numpy as np
from dateutil.relativedelta import relativedelta

from dymgnn.exceptions import DataException

logger = logging.getLogger(__name__)

PERIOD_PATTERN = re.compile(r'^\d{4}-(0[1-9]|1[0-2])$')


def parse_period(period: str) -> datetime:
    """
    Parse a YYYY-MM period label

    Raises:
        DataException if the label is malformed
    """
    if not isinstance(period, str) or not PERIOD_PATTERN.match(period.strip()):
        raise DataException(f"Invalid period label: {period!r} (expected YYYY-MM)")
    return datetime.strptime(period.strip(), '%Y-%m')


def format_period(moment: datetime) -> str:
    return moment.strftime('%Y-%m')


def shift_period(period: str, months: int) -> str:
    """Move a YYYY-MM label by a number of months"""
    return format_period(parse_period(period) + relativedelta(months=months))


def period_range(start: str, count: int) -> List[str]:
    """Consecutive YYYY-MM labels starting at start"""
    return [shift_period(start, k) for k in range(count)]


def months_between(earlier: str, later: str) -> int:
    """Signed number of months from earlier to later"""
    delta = relativedelta(parse_period(later), parse_period(earlier))
    return delta.years * 12 + delta.months


def is_valid_period(period: Any) -> bool:
    return isinstance(period, str) and bool(PERIOD_PATTERN.match(period.strip()))


def ensure_directory(path: str, mode: int = 0o755) -> bool:
    """
    Ensure directory exists

    Args:
        path: Directory path
        mode: Directory permissions

    Returns:
        True if created or exists
    """
    try:
        os.makedirs(path, mode=mode, exist_ok=True)
        return True
    except OSError as e:
        logger.error(f"Failed to create directory {path}: {e}")
        return False


def atomic_write_bytes(path: str, payload: bytes):
    """
    Write a file so readers see either the old content or the complete new one.

    The temp file lives in the target directory so os.replace stays on one filesystem.
    """
    directory = os.path.dirname(os.path.abspath(path))
    ensure_directory(directory)
    fd, tmp_path = tempfile.mkstemp(prefix='.tmp-', dir=directory)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def atomic_write_text(path: str, text: str):
    atomic_write_bytes(path, text.encode('utf-8'))


def file_digest(path: str, chunk_size: int = 1 << 20) -> str:
    """SHA-256 of a file, or of every file below a directory in sorted order"""
    digest = hashlib.sha256()
    if os.path.isdir(path):
        for root, dirs, files in os.walk(path):
            dirs.sort()
            for name in sorted(files):
                full = os.path.join(root, name)
                digest.update(os.path.relpath(full, path).encode('utf-8'))
                _update_digest(digest, full, chunk_size)
    else:
        _update_digest(digest, path, chunk_size)
    return digest.hexdigest()


def _update_digest(digest, path: str, chunk_size: int):
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(chunk_size), b''):
            digest.update(chunk)


def safe_json_loads(json_str: Optional[str], default: Any = None) -> Any:
    """
    Safely load JSON string

    Args:
        json_str: JSON string to load
        default: Default value if loading fails

    Returns:
        Parsed JSON or default value
    """
    if not json_str:
        return default

    try:
        return json.loads(json_str)
    except (json.JSONDecodeError, TypeError) as e:
        logger.warning(f"Failed to parse JSON: {e}")
        return default


def format_seconds(seconds: float) -> str:
    """
    Format seconds as a short human-readable string

    Returns:
        Formatted string (e.g., "1h 02m 03s")
    """
    seconds = int(round(seconds))
    hours, rest = divmod(seconds, 3600)
    minutes, secs = divmod(rest, 60)
    if hours:
        return f"{hours}h {minutes:02d}m {secs:02d}s"
    if minutes:
        return f"{minutes}m {secs:02d}s"
    return f"{secs}s"


def chunked(items: List[Any], n_chunks: int) -> Iterable[List[Any]]:
    """Split items into at most n_chunks contiguous, order-preserving chunks"""
    n_chunks = max(1, min(n_chunks, len(items)))
    size, extra = divmod(len(items), n_chunks)
    start = 0
    for k in range(n_chunks):
        stop = start + size + (1 if k < extra else 0)
        if stop > start:
            yield items[start:stop]
        start = stop


def derive_seed(*parts: int) -> int:
    """Stable 32-bit seed derived from a tuple of non-negative integers"""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])
