"""Checkpoint archive: a single file holding a JSON header (config, phase,
epoch, format version) followed by named, length-prefixed, little-endian
float32 parameter blobs.

Blob payloads round-trip bit-exactly; the RNG state travels base64-encoded
inside the header.
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SKDL"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """In-memory image of a checkpoint archive."""

    config: dict
    phase: str
    epoch: int
    components: dict  # component -> {param_name: float32 ndarray}
    optimizer: dict | None = None  # {"hyper": {...}, "steps": {...}}
    rng_state: bytes | None = None
    history: list = field(default_factory=list, compare=False)  # not serialized


def _blob_items(ckpt: Checkpoint):
    for comp in sorted(ckpt.components):
        for name in sorted(ckpt.components[comp]):
            yield f"{comp}/{name}", ckpt.components[comp][name]
    if ckpt.optimizer:
        for name in sorted(ckpt.optimizer.get("moments", {})):
            yield f"__optim__/{name}", ckpt.optimizer["moments"][name]


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    shapes = {}
    blobs = []
    for name, arr in _blob_items(ckpt):
        arr = np.ascontiguousarray(arr, dtype="<f4")
        shapes[name] = list(arr.shape)
        blobs.append((name, arr.tobytes()))

    optimizer_header = None
    if ckpt.optimizer:
        optimizer_header = {
            "hyper": ckpt.optimizer.get("hyper", {}),
            "steps": ckpt.optimizer.get("steps", {}),
        }
    header = {
        "format_version": FORMAT_VERSION,
        "phase": ckpt.phase,
        "epoch": int(ckpt.epoch),
        "config": ckpt.config,
        "shapes": shapes,
        "optimizer": optimizer_header,
        "rng_state_b64": base64.b64encode(ckpt.rng_state).decode("ascii") if ckpt.rng_state else None,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for name, payload in blobs:
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint archive")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header["format_version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {header['format_version']}")
        arrays = {}
        while True:
            raw = fh.read(4)
            if not raw:
                break
            (name_len,) = struct.unpack("<I", raw)
            name = fh.read(name_len).decode("utf-8")
            (payload_len,) = struct.unpack("<Q", fh.read(8))
            data = np.frombuffer(fh.read(payload_len), dtype="<f4")
            arrays[name] = data.reshape(header["shapes"][name]).copy()

    components: dict = {}
    moments: dict = {}
    for name, arr in arrays.items():
        if name.startswith("__optim__/"):
            moments[name[len("__optim__/"):]] = arr
        else:
            comp, param = name.split("/", 1)
            components.setdefault(comp, {})[param] = arr

    optimizer = None
    if header.get("optimizer") is not None:
        optimizer = dict(header["optimizer"])
        optimizer["moments"] = moments

    rng_b64 = header.get("rng_state_b64")
    return Checkpoint(
        config=header["config"],
        phase=header["phase"],
        epoch=header["epoch"],
        components=components,
        optimizer=optimizer,
        rng_state=base64.b64decode(rng_b64) if rng_b64 else None,
    )


def checkpoint_digest(path, length: int = 12) -> str:
    """Short stable identifier for a checkpoint file's exact bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:length]
