"""Checkpoint files: magic, version, JSON header, raw little-endian tensor blob."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import IntegrityError
from .model import ModelConfig, VisemeDecoder
from .train import TrainConfig

MAGIC = b"VDCK"
VERSION = 1


def save_checkpoint(model: VisemeDecoder, cfg: TrainConfig, path, extra: dict | None = None) -> Path:
    tensors, offset = [], 0
    chunks = []
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(arr).tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str, "offset": offset,
                        "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format_version": VERSION,
        "model": model.cfg.to_dict(),
        "train": cfg.to_dict(),
        "schedule": cfg.schedule().to_dict(),
        "seed": cfg.seed,
        "tensors": tensors,
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IQ", VERSION, len(head)))
        fh.write(head)
        for raw in chunks:
            fh.write(raw)
    return path


def load_checkpoint(path) -> tuple[VisemeDecoder, TrainConfig, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC or len(raw) < 16:
        raise IntegrityError(f"{path}: not a checkpoint file")
    version, n = struct.unpack("<IQ", raw[4:16])
    if version != VERSION:
        raise IntegrityError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[16:16 + n].decode("utf-8"))
        mcfg = ModelConfig(**header["model"])
        tcfg = TrainConfig.from_dict(header["train"])
    except (ValueError, KeyError, TypeError) as exc:
        raise IntegrityError(f"{path}: corrupt checkpoint header: {exc}") from None
    blob = raw[16 + n:]
    state = {}
    for t in header["tensors"]:
        chunk = blob[t["offset"]:t["offset"] + t["nbytes"]]
        if len(chunk) != t["nbytes"]:
            raise IntegrityError(f"{path}: truncated tensor {t['name']}")
        arr = np.frombuffer(chunk, dtype=np.dtype(t["dtype"])).reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(arr.copy())
    model = VisemeDecoder(mcfg).to(tcfg.dtype)
    model.load_state_dict(state)
    model.eval()
    return model, tcfg, header.get("extra", {})
