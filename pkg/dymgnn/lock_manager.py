"""
Run lock manager for dymgnn commands.
Uses file-based locking to ensure only one process writes into a given
output directory at a time.
"""

import os
import fcntl
import time
import errno
from contextlib import contextmanager
import logging

from dymgnn.exceptions import LockTimeoutException

logger = logging.getLogger(__name__)


class RunLockManager:
    """
    Manages exclusive locks on command output directories.
    Uses file-based locking (flock) for cross-process synchronization.
    """

    LOCK_FILE_NAME = ".dymgnn.lock"
    LOCK_TIMEOUT = 10  # seconds

    def __init__(self, lock_dir: str, timeout: float = LOCK_TIMEOUT):
        """
        Initialize the lock manager.

        Args:
            lock_dir: Directory to guard (the lock file is created inside it)
            timeout: Maximum time to wait for lock acquisition in seconds
        """
        self.lock_dir = lock_dir
        self.timeout = timeout
        os.makedirs(self.lock_dir, mode=0o755, exist_ok=True)

    @property
    def lock_path(self) -> str:
        return os.path.join(self.lock_dir, self.LOCK_FILE_NAME)

    @contextmanager
    def acquire_lock(self, operation: str = "run"):
        """
        Context manager holding the directory lock for one command.

        Args:
            operation: Name of the operation (recorded in the lock file)

        Yields:
            bool: True if lock was acquired

        Raises:
            LockTimeoutException: If lock cannot be acquired within timeout period

        Example:
            with RunLockManager(output_dir).acquire_lock('train'):
                # write checkpoint and manifest
                pass
        """
        lock_file = None
        acquired = False

        try:
            lock_file = open(self.lock_path, 'a+')

            start_time = time.time()
            while True:
                try:
                    fcntl.flock(lock_file.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
                    acquired = True
                    logger.debug(f"Acquired lock on {self.lock_dir} for {operation}")
                    break
                except IOError as e:
                    if e.errno not in (errno.EAGAIN, errno.EACCES):
                        raise

                    elapsed = time.time() - start_time
                    if elapsed >= self.timeout:
                        raise LockTimeoutException(
                            f"Output directory {self.lock_dir} is in use; could not "
                            f"acquire lock for {operation} after {self.timeout} seconds"
                        )
                    time.sleep(0.1)

            lock_file.seek(0)
            lock_file.truncate()
            lock_file.write(f"{os.getpid()} {operation}\n")
            lock_file.flush()

            yield True

        finally:
            if acquired and lock_file:
                try:
                    fcntl.flock(lock_file.fileno(), fcntl.LOCK_UN)
                    logger.debug(f"Released lock on {self.lock_dir} for {operation}")
                except Exception as e:
                    logger.error(f"Error releasing lock: {e}")

            if lock_file:
                try:
                    lock_file.close()
                except Exception as e:
                    logger.error(f"Error closing lock file: {e}")
