"""Self-describing checkpoint files.

Layout: 8-byte magic ``MFCKPT01``, little-endian uint64 header length, a
UTF-8 JSON header (model config, format version, seed, metadata and a
tensor manifest), then the tensors as raw little-endian float32 in
manifest order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model import FusionClassifier, ModelConfig
from .vocab_graph import dumps_graph, loads_graph, normalize

MAGIC = b"MFCKPT01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, model: FusionClassifier, seed: int, metadata: dict | None = None, graph=None) -> None:
    state = model.state_dict()
    manifest, chunks, offset = [], [], 0
    for name in sorted(state):
        arr = state[name].detach().cpu().numpy().astype("<f4")
        raw = arr.tobytes(order="C")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "seed": seed,
        "metadata": metadata or {},
        "tensors": manifest,
        "graph": dumps_graph(graph) if graph is not None else None,
    }
    blob = json.dumps(header, sort_keys=True, allow_nan=False).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)


def read_header(path: str | Path) -> tuple[dict, bytes]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a memefusion checkpoint")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + n].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('format_version')!r}")
    return header, data[16 + n :]


def load_checkpoint(path: str | Path, dtype=torch.float32) -> tuple[FusionClassifier, dict]:
    header, payload = read_header(path)
    config = ModelConfig.from_dict(header["model_config"])
    model = FusionClassifier(config).to(dtype)
    state = {}
    for entry in header["tensors"]:
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        if stop > len(payload):
            raise CheckpointError(f"{path}: payload truncated at tensor {entry['name']}")
        arr = np.frombuffer(payload[start:stop], dtype="<f4").reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy()).to(dtype)
    model.load_state_dict(state)
    if config.uses_graph:
        if header.get("graph") is None:
            raise CheckpointError(f"{path}: vgcn checkpoint lacks its graph")
        model.set_adjacency(normalize(loads_graph(header["graph"])))
    model.eval()
    return model, header
