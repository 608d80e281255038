"""Checkpoint container.

Binary layout (all integers little-endian)::

    bytes 0..7    magic  b"NTTSCKPT"
    bytes 8..11   uint32 format version (1)
    bytes 12..19  uint64 length H of the JSON header
    next H bytes  UTF-8 JSON header
    remainder     tensor data, concatenated

The header holds ``model_config``, ``frontend``, ``meta`` (step, seed, stage, ...) and
``tensors``: a list of ``{"name", "dtype", "shape", "offset", "nbytes"}`` where offset is
relative to the start of the data section and dtype is a numpy dtype string such as
``"<f4"``. Tensor names are namespaced: ``extractor/...``, ``ctc_head/...`` and
``backbone/...`` for model state, ``optim/<param>/<slot>`` for optimizer moments.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"NTTSCKPT"
VERSION = 1


def namespace(key: str) -> str:
    group = key.split(".", 1)[0]
    if group in ("extractor", "ctc_head"):
        return f"{group}/{key.split('.', 1)[1]}"
    return f"backbone/{key}"


def unnamespace(name: str) -> str:
    group, rest = name.split("/", 1)
    return rest if group == "backbone" else f"{group}.{rest}"


def save_checkpoint(path: str | Path, tensors: dict[str, torch.Tensor], header: dict) -> Path:
    path = Path(path)
    index, blobs, offset = [], [], 0
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().numpy()
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes(order="C")
        index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    head = json.dumps({**header, "tensors": index}, sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, head_len = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(data[20:20 + head_len])
    base = 20 + head_len
    tensors = {}
    for item in header.pop("tensors"):
        start = base + item["offset"]
        arr = np.frombuffer(data[start:start + item["nbytes"]], dtype=np.dtype(item["dtype"]))
        tensors[item["name"]] = torch.from_numpy(arr.reshape(item["shape"]).copy())
    return tensors, header


def model_tensors(model: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {namespace(k): v for k, v in model.state_dict().items()}


def load_model_state(model: torch.nn.Module, tensors: dict[str, torch.Tensor]) -> None:
    state = {unnamespace(k): v for k, v in tensors.items() if not k.startswith("optim/")}
    own = model.state_dict()
    missing = set(own) - set(state)
    unexpected = set(state) - set(own)
    if missing or unexpected:
        raise CheckpointError(f"checkpoint does not match model: missing {sorted(missing)[:5]}, "
                              f"unexpected {sorted(unexpected)[:5]}")
    for k, v in state.items():
        if own[k].shape != v.shape:
            raise CheckpointError(f"shape mismatch for {k}: {tuple(v.shape)} vs {tuple(own[k].shape)}")
    model.load_state_dict(state)


def parameter_hash(model: torch.nn.Module, prefix: str = "") -> str:
    """SHA-256 over the named parameters whose names start with ``prefix``."""
    h = hashlib.sha256()
    for name, p in sorted(model.named_parameters()):
        if name.startswith(prefix):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()
