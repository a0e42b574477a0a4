"""Checkpoint files: a magic line, a one-line JSON manifest, then a float32 blob.

The manifest lists every stored parameter (name, shape, byte offset, dtype)
in blob order together with the codec config and a SHA-256 of the blob.
Saving the same parameters twice yields byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .codec import CodecConfig, JSCCModel
from .errors import CheckpointError

MAGIC = b"VQJSCC-CHECKPOINT\n"
FORMAT_VERSION = 1
DTYPE = "<f4"
INNER_GROUPS = ("inner_encoder.", "inner_decoder.")


def _stored(model: JSCCModel, phase: int):
    for name, p in model.named_parameters():
        if phase == 1 and name.startswith(INNER_GROUPS):
            continue
        yield name, p


def dumps(model: JSCCModel, phase: int) -> bytes:
    """Serialize; a phase-1 checkpoint leaves out the inner codec."""
    if phase not in (1, 2):
        raise CheckpointError(f"phase must be 1 or 2, got {phase}")
    registry, chunks, offset = [], [], 0
    for name, p in _stored(model, phase):
        raw = np.ascontiguousarray(p.data, dtype=DTYPE).tobytes()
        registry.append({"name": name, "shape": list(p.shape), "offset": offset, "dtype": DTYPE})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format_version": FORMAT_VERSION,
        "phase": phase,
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in model.cfg.to_dict().items()},
        "registry": registry,
        "blob_bytes": len(blob),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + head + b"\n" + blob


def save_checkpoint(model: JSCCModel, path, phase: int) -> None:
    Path(path).write_bytes(dumps(model, phase))


def read_manifest(buf: bytes) -> tuple[dict, bytes]:
    if not buf.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic line)")
    end = buf.find(b"\n", len(MAGIC))
    if end < 0:
        raise CheckpointError("truncated checkpoint manifest")
    try:
        manifest = json.loads(buf[len(MAGIC) : end])
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {exc}") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version!r} (this build reads {FORMAT_VERSION})")
    return manifest, buf[end + 1 :]


def loads(buf: bytes) -> tuple[JSCCModel, dict]:
    manifest, blob = read_manifest(buf)
    if len(blob) != manifest["blob_bytes"]:
        raise CheckpointError(f"checkpoint corrupted: blob has {len(blob)} bytes, manifest says {manifest['blob_bytes']}")
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise CheckpointError("checkpoint corrupted: content hash mismatch")
    try:
        cfg = CodecConfig(**manifest["config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint config rejected: {exc}") from None
    model = JSCCModel(cfg)
    params = dict(model.named_parameters())
    expected = {name for name, _ in _stored(model, manifest["phase"])}
    seen = set()
    for entry in manifest["registry"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in params or params[name].shape != shape or entry["dtype"] != DTYPE:
            raise CheckpointError(f"checkpoint parameter {name!r} {shape} does not match the model")
        n = int(np.prod(shape, dtype=np.int64)) * 4
        if entry["offset"] < 0 or entry["offset"] + n > len(blob):
            raise CheckpointError(f"checkpoint parameter {name!r} lies outside the blob")
        arr = np.frombuffer(blob, dtype=DTYPE, count=n // 4, offset=entry["offset"]).reshape(shape)
        p = params[name]
        p.data = arr.astype(p.data.dtype)
        seen.add(name)
    if seen != expected:
        missing = sorted(expected - seen)
        raise CheckpointError(f"checkpoint is missing {len(missing)} parameters, e.g. {missing[0]!r}")
    model.inner_enabled = manifest["phase"] == 2
    return model, manifest


def load_checkpoint(path) -> tuple[JSCCModel, dict]:
    """Rebuild the model; inner-codec parameters absent from a phase-1 file stay freshly initialized."""
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return loads(p.read_bytes())
