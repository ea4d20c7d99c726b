"""
Binary checkpoint format.

    b"ATVCKPT" | version <u2 | manifest length <u4 | manifest (UTF-8 JSON)
    | tensor payloads (<f8, C order, manifest order) | sha256 of all preceding bytes

The manifest lists ``name``, ``dtype`` and ``shape`` per tensor and carries a
free-form ``meta`` object (method, resolved config, vocabulary).
"""
import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from numeric.exceptions import DataIntegrityError

logger = logging.getLogger(__name__)

MAGIC = b'ATVCKPT'
VERSION = 1
DTYPE = '<f8'
_HEADER = struct.Struct('<HI')
_DIGEST_SIZE = 32


@dataclass
class Checkpoint:
    arrays: dict
    meta: dict = field(default_factory=dict)
    digest: str = ''

    def namespaces(self):
        return sorted({name.split('.', 1)[0] for name in self.arrays})

    def subset(self, namespace):
        prefix = f'{namespace}.'
        return {n: a for n, a in self.arrays.items() if n.startswith(prefix)}


def encode(arrays, meta=None):
    names = list(arrays)
    manifest = {
        'version': VERSION,
        'tensors': [{'name': n, 'dtype': 'float64', 'shape': list(np.shape(arrays[n]))}
                    for n in names],
        'meta': meta or {},
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode('utf-8')
    body = bytearray(MAGIC)
    body += _HEADER.pack(VERSION, len(manifest_bytes))
    body += manifest_bytes
    for name in names:
        body += np.ascontiguousarray(arrays[name], dtype=DTYPE).tobytes()
    digest = hashlib.sha256(body).digest()
    return bytes(body + digest), digest.hex()


def decode(blob):
    if len(blob) < len(MAGIC) + _HEADER.size + _DIGEST_SIZE or not blob.startswith(MAGIC):
        raise DataIntegrityError('not an ATV checkpoint (bad magic)')
    body, digest = blob[:-_DIGEST_SIZE], blob[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise DataIntegrityError('checkpoint digest mismatch; the file is corrupt or truncated')
    version, manifest_len = _HEADER.unpack_from(body, len(MAGIC))
    if version != VERSION:
        raise DataIntegrityError(f'unsupported checkpoint version {version}')
    offset = len(MAGIC) + _HEADER.size
    manifest = json.loads(body[offset:offset + manifest_len].decode('utf-8'))
    offset += manifest_len
    arrays = {}
    for entry in manifest['tensors']:
        shape = tuple(entry['shape'])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(body):
            raise DataIntegrityError(f'payload of {entry["name"]} runs past the end of the file')
        arrays[entry['name']] = np.frombuffer(body[offset:end], dtype=DTYPE).reshape(shape).astype(np.float64)
        offset = end
    if offset != len(body):
        raise DataIntegrityError(f'{len(body) - offset} trailing bytes after the last tensor')
    return Checkpoint(arrays=arrays, meta=manifest['meta'], digest=digest.hex())


def save_checkpoint(path, arrays, meta=None):
    blob, digest = encode(arrays, meta)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    logger.info('saved checkpoint %s (%d tensors, sha256 %s)', path, len(arrays), digest[:12])
    return digest


def load_checkpoint(path):
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataIntegrityError(f'cannot read checkpoint {path}: {exc}') from exc
    checkpoint = decode(blob)
    logger.debug('loaded checkpoint %s: %s', path, ', '.join(checkpoint.namespaces()))
    return checkpoint
