"""
Checkpoint files.

Layout: a plain-text header followed by the parameters as one little-endian
float64 payload.

    DYMGNN-CHECKPOINT
    format_version = 1
    [config]
    key = value
    [scaling]
    key = value
    [parameters]
    <name> <rows> <cols> <byte offset>
    payload_bytes = <n>
    checksum = <sha256 of everything above this line plus the payload>
    END_HEADER
    <payload>
"""

import hashlib
import logging
from typing import Dict, List, Tuple

import numpy as np

from dymgnn.exceptions import CheckpointException, ChecksumException, VersionException
from dymgnn.model import Checkpoint, ModelConfig, ParameterStore
from dymgnn.utils import atomic_write_bytes

logger = logging.getLogger(__name__)

MAGIC = 'DYMGNN-CHECKPOINT'
FORMAT_VERSION = 1
END_MARKER = b'END_HEADER\n'
PAYLOAD_DTYPE = '<f8'


def _header_body(cp: Checkpoint) -> Tuple[str, bytes]:
    lines = [MAGIC, f"format_version = {FORMAT_VERSION}", '[config]']
    lines += [f"{key} = {value}" for key, value in sorted(cp.config.to_flat().items())]
    lines.append('[scaling]')
    lines += [f"{key} = {value}" for key, value in sorted(cp.scaling.items())]
    lines.append('[parameters]')

    chunks: List[bytes] = []
    offset = 0
    for name in cp.params.names():
        value = cp.params[name]
        if any(c.isspace() for c in name):
            raise CheckpointException(f"Parameter name {name!r} contains whitespace")
        raw = np.ascontiguousarray(value, dtype=PAYLOAD_DTYPE).tobytes()
        lines.append(f"{name} {value.shape[0]} {value.shape[1]} {offset}")
        chunks.append(raw)
        offset += len(raw)
    lines.append(f"payload_bytes = {offset}")
    return '\n'.join(lines) + '\n', b''.join(chunks)


def save_checkpoint(cp: Checkpoint, path: str):
    """
    Write a checkpoint atomically (temp file then rename).

    Raises:
        CheckpointException: if the parameters cannot be encoded
    """
    body, payload = _header_body(cp)
    body_bytes = body.encode('utf-8')
    checksum = hashlib.sha256(body_bytes + payload).hexdigest()
    atomic_write_bytes(path, body_bytes + f"checksum = {checksum}\n".encode('ascii')
                       + END_MARKER + payload)
    logger.info(f"Checkpoint written: {path} ({len(cp.params)} parameters, {len(payload)} bytes)")


def _split_key_value(line: str, path: str) -> Tuple[str, str]:
    if ' = ' not in line and not line.endswith(' ='):
        raise CheckpointException(f"Malformed header line in {path}: {line!r}")
    key, _, value = line.partition(' =')
    return key.strip(), value[1:] if value.startswith(' ') else value


def load_checkpoint(path: str) -> Checkpoint:
    """
    Read and verify a checkpoint.

    Raises:
        CheckpointException: missing, truncated or malformed file
        VersionException: format version newer than this reader
        ChecksumException: content does not match the stored checksum
    """
    try:
        with open(path, 'rb') as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointException(f"Cannot read checkpoint {path}: {e}")

    marker = blob.find(b'\n' + END_MARKER)
    if marker < 0:
        raise CheckpointException(f"Checkpoint {path} has no complete header")
    header_bytes = blob[:marker + 1]
    payload = blob[marker + 1 + len(END_MARKER):]

    split = header_bytes.rfind(b'\n', 0, len(header_bytes) - 1) + 1
    body, checksum_line = header_bytes[:split], header_bytes[split:-1]
    if not checksum_line.startswith(b'checksum = '):
        raise CheckpointException(f"Checkpoint {path} has no checksum line")
    stored = checksum_line[len(b'checksum = '):]
    if hashlib.sha256(body + payload).hexdigest().encode('ascii') != stored:
        raise ChecksumException(f"Checkpoint {path} failed checksum verification")

    try:
        header = body.decode('utf-8')
    except UnicodeDecodeError:
        raise CheckpointException(f"Checkpoint {path} header is not valid UTF-8")
    lines = header.splitlines()
    if not lines or lines[0] != MAGIC:
        raise CheckpointException(f"{path} is not a dymgnn checkpoint")
    _, version_text = _split_key_value(lines[1], path) if len(lines) > 1 else ('', '')
    try:
        version = int(version_text)
    except ValueError:
        raise CheckpointException(f"Checkpoint {path} has an unreadable format version")
    if version > FORMAT_VERSION:
        raise VersionException(
            f"Checkpoint {path} has format version {version}; "
            f"this build reads up to {FORMAT_VERSION}"
        )

    sections: Dict[str, List[str]] = {}
    current = None
    for line in lines[2:]:
        if line.startswith('[') and line.endswith(']'):
            current = line[1:-1]
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
        else:
            raise CheckpointException(f"Unexpected header line in {path}: {line!r}")

    for required in ('config', 'scaling', 'parameters'):
        if required not in sections:
            raise CheckpointException(f"Checkpoint {path} lacks the [{required}] section")

    config = ModelConfig.from_flat(dict(_split_key_value(line, path)
                                        for line in sections['config']))
    scaling = dict(_split_key_value(line, path) for line in sections['scaling'])

    param_lines = sections['parameters']
    if not param_lines or not param_lines[-1].startswith('payload_bytes'):
        raise CheckpointException(f"Checkpoint {path} lacks payload_bytes")
    payload_bytes = int(_split_key_value(param_lines[-1], path)[1])
    if payload_bytes != len(payload):
        raise CheckpointException(
            f"Checkpoint {path} is truncated: {len(payload)} of {payload_bytes} payload bytes"
        )

    values = {}
    for line in param_lines[:-1]:
        try:
            name, rows, cols, offset = line.split()
            rows, cols, offset = int(rows), int(cols), int(offset)
        except ValueError:
            raise CheckpointException(f"Malformed parameter line in {path}: {line!r}")
        end = offset + rows * cols * 8
        if end > len(payload):
            raise CheckpointException(f"Parameter {name} runs past the payload in {path}")
        values[name] = np.frombuffer(payload[offset:end], dtype=PAYLOAD_DTYPE).reshape(rows, cols)

    logger.debug(f"Loaded checkpoint {path}: {config.name}, {len(values)} parameters")
    return Checkpoint(config=config, params=ParameterStore(values), scaling=scaling,
                      format_version=version)
