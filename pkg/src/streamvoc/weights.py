"""Weight store: a JSON manifest plus a raw little-endian float32 blob.

Layout of one file::

    b"SVWS" | u32 version | u32 manifest length | manifest (UTF-8 JSON) | blob

The manifest maps every tensor name to its shape and byte offset in the
blob, records the blob's SHA-256 and carries free-form ``meta`` JSON
(model configs, optimiser counters, RNG state).

Importing external feature-extractor weights means writing such a file
with the parameter names of the target module (see
``streamvoc.ssl_encoder.EXTERNAL_NAME_MAP``).
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from typing import Mapping

import numpy as np

from .errors import FormatError, IntegrityError

MAGIC = b"SVWS"
VERSION = 1
_HEADER = struct.Struct("<4sII")


def save_weights(path: str | os.PathLike, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(np.asarray(arr), dtype="<f4")
        raw = data.tobytes()
        entries.append({"name": name, "shape": list(data.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": "streamvoc-weights",
        "dtype": "<f4",
        "tensors": entries,
        "blob_bytes": len(blob),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "meta": meta or {},
    }
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(mbytes)))
        fh.write(mbytes)
        fh.write(blob)
    os.replace(tmp, path)


def load_weights(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(tensors, meta)``. Raises IntegrityError on truncation or checksum mismatch."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise IntegrityError(f"{path}: truncated header")
    magic, version, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a weight-store file")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported weight-store version {version}")
    if len(raw) < _HEADER.size + mlen:
        raise IntegrityError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[_HEADER.size : _HEADER.size + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: corrupt manifest ({exc})") from exc
    blob = raw[_HEADER.size + mlen :]
    if len(blob) != manifest.get("blob_bytes"):
        raise IntegrityError(f"{path}: blob has {len(blob)} bytes, manifest says {manifest.get('blob_bytes')}")
    if hashlib.sha256(blob).hexdigest() != manifest.get("blob_sha256"):
        raise IntegrityError(f"{path}: blob checksum mismatch")
    tensors = {}
    for e in manifest["tensors"]:
        arr = np.frombuffer(blob, dtype="<f4", count=e["nbytes"] // 4, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float32)
    return tensors, manifest.get("meta", {})


def checksum(tensors: Mapping[str, np.ndarray]) -> str:
    """SHA-256 over names, shapes and raw bytes, in sorted name order."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(str(arr.dtype).encode())
        h.update(arr.tobytes())
    return h.hexdigest()
