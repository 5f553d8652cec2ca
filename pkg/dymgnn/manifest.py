"""
Run manifests: what a command read, wrote, how long it took and how it ended.
"""

import json
import logging
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np
import psutil

from dymgnn.utils import atomic_write_text, file_digest
from dymgnn.version import version_string

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'


@dataclass
class RunManifest:
    """Record of one command invocation, written when the command ends."""

    command: str
    config: Dict[str, str] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    resources: Dict[str, float] = field(default_factory=dict)
    versions: Dict[str, str] = field(default_factory=dict)
    status: str = 'running'
    failure: str = ''

    def __post_init__(self):
        self._started = time.monotonic()
        self._process = psutil.Process(os.getpid())
        self._cpu_start = sum(self._process.cpu_times()[:2])
        self.versions = self.versions or {
            'dymgnn': version_string(),
            'numpy': np.__version__,
            'python': platform.python_version(),
        }

    def add_input(self, path: str):
        """Record the SHA-256 digest of an input file or directory."""
        if path and os.path.exists(path):
            self.inputs[path] = file_digest(path)

    def add_output(self, path: str):
        if path not in self.outputs:
            self.outputs.append(path)
        self.sample_resources()

    def time(self, stage: str, seconds: float):
        self.timings[stage] = round(float(seconds), 6)
        self.sample_resources()

    def sample_resources(self):
        """Update CPU seconds and the largest resident set size seen so far."""
        try:
            rss = self._process.memory_info().rss / (1024.0 * 1024.0)
            self.resources['cpu_seconds'] = round(sum(self._process.cpu_times()[:2])
                                                  - self._cpu_start, 3)
            self.resources['peak_rss_mb'] = round(max(rss, self.resources.get('peak_rss_mb', 0.0)), 1)
        except psutil.Error as e:
            logger.debug(f"Cannot sample process resources: {e}")

    def finish(self, failure: Optional[BaseException] = None):
        self.status = 'failed' if failure is not None else 'ok'
        self.failure = f"{type(failure).__name__}: {failure}" if failure is not None else ''
        self.time('total', time.monotonic() - self._started)
        self.sample_resources()

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + '\n'

    def write(self, directory: str) -> str:
        path = os.path.join(directory, MANIFEST_NAME)
        atomic_write_text(path, self.to_json())
        logger.debug(f"Manifest written: {path} ({self.status})")
        return path
