"""Byte-deterministic checkpoint files.

Layout: magic b"KICDCKPT", uint32 version, uint32 header length H, a UTF-8
JSON header (sorted keys), then the raw little-endian tensor bytes in header
order. The header holds the model config, training state and a tensor table
of {name, dtype, shape, offset}.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import InvalidConfigError, InvalidInputError
from ..model import KnowledgeInformedModel, ModelConfig

MAGIC = b"KICDCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sII")
_DTYPES = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8"}


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict[str, torch.Tensor]
    optimizer: dict | None = None
    state: dict = field(default_factory=dict)


def _flatten_optimizer(opt_state: dict):
    tensors, meta = {}, {}
    for idx, st in opt_state["state"].items():
        for key, val in st.items():
            if torch.is_tensor(val):
                tensors[f"opt.{idx}.{key}"] = val
            else:
                meta[f"{idx}.{key}"] = val
    groups = [{k: (list(v) if isinstance(v, tuple) else v) for k, v in g.items()} for g in opt_state["param_groups"]]
    return tensors, {"param_groups": groups, "scalars": meta}


def _unflatten_optimizer(tensors: dict, meta: dict) -> dict:
    state: dict = {}
    for name, val in tensors.items():
        _, idx, key = name.split(".", 2)
        state.setdefault(int(idx), {})[key] = val
    for name, val in meta["scalars"].items():
        idx, key = name.split(".", 1)
        state.setdefault(int(idx), {})[key] = val
    groups = [{k: (tuple(v) if k == "betas" else v) for k, v in g.items()} for g in meta["param_groups"]]
    return {"state": state, "param_groups": groups}


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors = {f"model.{k}": v for k, v in ckpt.params.items()}
    opt_meta = None
    if ckpt.optimizer is not None:
        opt_tensors, opt_meta = _flatten_optimizer(ckpt.optimizer)
        tensors.update(opt_tensors)
    table, chunks, offset = [], [], 0
    for name, t in tensors.items():
        t = t.detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise InvalidInputError(f"cannot serialise {name} of dtype {t.dtype}")
        raw = t.numpy().astype(_DTYPES[t.dtype], copy=False).tobytes()
        table.append({"name": name, "dtype": _DTYPES[t.dtype], "shape": list(t.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "model_config": ckpt.model_config.to_dict(),
        "optimizer": opt_meta,
        "state": ckpt.state,
        "tensors": table,
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(_PREFIX.pack(MAGIC, VERSION, len(hdr)) + hdr + b"".join(chunks))
    tmp.replace(path)


def load_checkpoint(path, n_max: int | None = None) -> Checkpoint:
    buf = Path(path).read_bytes()
    magic, version, hlen = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise InvalidInputError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise InvalidInputError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(buf[_PREFIX.size:_PREFIX.size + hlen])
    cfg = ModelConfig.from_dict(header["model_config"])
    if n_max is not None and cfg.n_max != n_max:
        raise InvalidConfigError(f"checkpoint was trained with n_max={cfg.n_max}, expected {n_max}")
    body = _PREFIX.size + hlen
    params, opt_tensors = {}, {}
    for entry in header["tensors"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(buf, dtype=dt, count=count, offset=body + entry["offset"]).reshape(entry["shape"])
        t = torch.from_numpy(arr.copy())
        name = entry["name"]
        if name.startswith("model."):
            params[name[len("model."):]] = t
        else:
            opt_tensors[name] = t
    opt = _unflatten_optimizer(opt_tensors, header["optimizer"]) if header["optimizer"] is not None else None
    return Checkpoint(cfg, params, opt, header["state"])


def load_model(path, n_max: int | None = None) -> KnowledgeInformedModel:
    ckpt = load_checkpoint(path, n_max)
    model = KnowledgeInformedModel(ckpt.model_config)
    model.load_state_dict(ckpt.params)
    model.eval()
    return model
