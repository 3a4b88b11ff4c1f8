"""Binary checkpoint container.

Layout: 8-byte magic, u32 format version, u64 manifest length, UTF-8 JSON
manifest (model config plus name/shape/offset for each parameter), then
the little-endian float64 payload of every parameter in manifest order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

FINE_MAGIC = b"DUET0001"
COARSE_MAGIC = b"DUETC001"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ManifestError(CheckpointError):
    pass


def _magic_for(model) -> bytes:
    return FINE_MAGIC if model.kind == "duet" else COARSE_MAGIC


def to_bytes(model, extra: dict | None = None) -> bytes:
    params = model.parameters()
    entries, offset, chunks = [], 0, []
    for p in params:
        data = np.asarray(p.data, dtype="<f8")  # ascontiguousarray would promote 0-d to (1,)
        entries.append({"name": p.name, "shape": list(p.data.shape), "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes
    manifest = {"config": model.config(), "params": entries, "payload_bytes": offset, "extra": extra or {}}
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(_magic_for(model), FORMAT_VERSION, len(blob)) + blob + b"".join(chunks)


def save(path, model, extra: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(model, extra))


def read_manifest(buf: bytes, expect_magic: bytes | None = None) -> tuple[bytes, dict, int]:
    if len(buf) < _HEADER.size:
        raise TruncatedError("file shorter than the header")
    magic, version, mlen = _HEADER.unpack_from(buf)
    if magic not in (FINE_MAGIC, COARSE_MAGIC) or (expect_magic is not None and magic != expect_magic):
        raise BadMagicError(f"unexpected magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}, expected {FORMAT_VERSION}")
    start = _HEADER.size
    if len(buf) < start + mlen:
        raise TruncatedError("manifest truncated")
    try:
        manifest = json.loads(buf[start:start + mlen].decode("utf-8"))
        manifest["config"], manifest["params"], manifest["payload_bytes"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ManifestError(f"unreadable manifest: {exc}") from None
    return magic, manifest, start + mlen


def build_model(config: dict):
    from .coarse import StructuralCoarse, TripletCoarse
    from .fusion import DuetModel

    cfg = dict(config)
    kind = cfg.pop("kind", None)
    try:
        if kind == "duet":
            return DuetModel(**cfg)
        if kind == "triplet":
            return TripletCoarse(**cfg)
        if kind == "structural":
            return StructuralCoarse(**cfg)
    except TypeError as exc:
        raise ManifestError(f"bad model config: {exc}") from None
    raise ManifestError(f"unknown model kind {kind!r}")


def from_bytes(buf: bytes, expect_magic: bytes | None = None):
    """Rebuild the model and load its parameters; returns ``(model, extra)``."""
    _, manifest, body = read_manifest(buf, expect_magic)
    if len(buf) < body + manifest["payload_bytes"]:
        raise TruncatedError("payload truncated")
    if len(buf) > body + manifest["payload_bytes"]:
        raise ManifestError("trailing bytes after payload")
    model = build_model(manifest["config"])
    params = {p.name: p for p in model.parameters()}
    if sorted(params) != sorted(e["name"] for e in manifest["params"]):
        raise ManifestError("parameter names do not match the model config")
    expected = 0
    for e in manifest["params"]:
        if e["offset"] != expected:
            raise ManifestError(f"{e['name']}: offset {e['offset']} != {expected} recomputed from shapes")
        expected += 8 * int(np.prod(e["shape"], dtype=np.int64))
    if expected != manifest["payload_bytes"]:
        raise ManifestError("payload size disagrees with parameter shapes")
    for e in manifest["params"]:
        p = params[e["name"]]
        shape = tuple(e["shape"])
        if shape != p.data.shape:
            raise ManifestError(f"{e['name']}: shape {shape} != {p.data.shape}")
        count = int(np.prod(shape, dtype=np.int64))
        start = body + e["offset"]
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=start).astype(np.float64)
        p.data = arr.reshape(shape)
    return model, manifest.get("extra", {})


def load(path, expect_magic: bytes | None = None):
    return from_bytes(Path(path).read_bytes(), expect_magic)


def save_checkpoint(model, path, extra: dict | None = None) -> None:
    save(path, model, extra)


def load_checkpoint(path, expect_magic: bytes | None = None):
    return load(path, expect_magic)[0]
