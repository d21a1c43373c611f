"""Single-file checkpoint container.

Layout::

    b"GBLAB1" | uint64 LE header length | UTF-8 JSON header | raw tensor bytes

The header holds caller metadata under ``"meta"`` and a ``"tensors"`` list of
``{name, dtype, shape, offset, nbytes}`` entries; offsets are relative to the
start of the data section and tensors are stored little-endian, C-contiguous.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"GBLAB1"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, tensors: dict[str, torch.Tensor], meta: dict) -> None:
    entries, blobs, offset = [], [], 0
    for name, t in tensors.items():
        arr = t.detach().cpu().contiguous().numpy()
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes(order="C")
        entries.append({
            "name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
            "offset": offset, "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": meta, "tensors": entries}, sort_keys=True
    ).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a GBLAB1 checkpoint")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", data[pos:pos + 8])
    pos += 8
    try:
        header = json.loads(data[pos:pos + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    base = pos + hlen
    tensors = {}
    for e in header.get("tensors", []):
        start = base + e["offset"]
        chunk = data[start:start + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {e['name']}")
        arr = np.frombuffer(chunk, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    return tensors, header["meta"]


def save_model(path, model, meta: dict) -> None:
    meta = dict(meta)
    meta.setdefault("model_config", model.cfg.to_dict())
    save_checkpoint(path, model.state_dict(), meta)


def load_model(path):
    from .genesis import Genesis, GenesisConfig

    tensors, meta = load_checkpoint(path)
    if "model_config" not in meta:
        raise CheckpointError(f"{path}: no model_config in checkpoint metadata")
    model = Genesis(GenesisConfig.from_dict(meta["model_config"]))
    try:
        model.load_state_dict(tensors)
    except RuntimeError as e:
        raise CheckpointError(f"{path}: weights do not match model_config: {e}") from e
    return model, meta
