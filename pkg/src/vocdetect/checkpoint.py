"""Checkpoint container: a single file holding named parameter arrays under
path-like keys, the model configuration, optimizer state, counters, and RNG
state.

Layout: magic ``VDCK``, a little-endian uint32 format version, a uint64 JSON
index length, the JSON index, then the raw array payload. Float arrays are
stored as little-endian float64 (exact for float32 training states), integer
arrays as int64, byte blobs as uint8. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"VDCK"
FORMAT_VERSION = 1

_DTYPES = {"f8": "<f8", "i8": "<i8", "u1": "u1"}


class CheckpointError(ValueError):
    """Raised for unreadable, truncated, or incompatible checkpoint files."""


def _key(name: str) -> str:
    return name.replace(".", "/")


def _unkey(name: str) -> str:
    return name.replace("/", ".")


def _encode_array(value: torch.Tensor | np.ndarray) -> tuple[str, np.ndarray]:
    arr = value.detach().cpu().numpy() if torch.is_tensor(value) else np.asarray(value)
    if arr.dtype.kind == "f":
        return "f8", arr.astype("<f8")
    if arr.dtype.kind in "iu" and arr.dtype != np.uint8:
        return "i8", arr.astype("<i8")
    if arr.dtype == np.uint8:
        return "u1", arr
    if arr.dtype.kind == "b":
        return "i8", arr.astype("<i8")
    raise CheckpointError(f"unsupported array dtype {arr.dtype}")


def write_container(path: Path | str, arrays: dict[str, torch.Tensor | np.ndarray], meta: dict) -> None:
    index: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0
    for name in sorted(arrays):
        code, arr = _encode_array(arrays[name])
        raw = arr.tobytes()
        index[name] = {"dtype": code, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    header = {"format_version": FORMAT_VERSION, "arrays": index, "meta": meta, "payload_nbytes": offset}
    blob = json.dumps(header, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)


def read_container(path: Path | str) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container")
    (version,) = struct.unpack("<I", data[4:8])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (json_len,) = struct.unpack("<Q", data[8:16])
    if len(data) < 16 + json_len:
        raise CheckpointError(f"{path}: truncated index block")
    header = json.loads(data[16 : 16 + json_len])
    payload = data[16 + json_len :]
    if len(payload) != header["payload_nbytes"]:
        raise CheckpointError(
            f"{path}: truncated payload ({len(payload)} bytes, expected {header['payload_nbytes']})"
        )
    arrays: dict[str, np.ndarray] = {}
    for name, spec in header["arrays"].items():
        start, nbytes = spec["offset"], spec["nbytes"]
        arr = np.frombuffer(payload[start : start + nbytes], dtype=_DTYPES[spec["dtype"]])
        arrays[name] = arr.reshape(spec["shape"]).copy()
    return arrays, header["meta"]


# ---------------------------------------------------------------------------
# Model / optimizer checkpoints


def save_checkpoint(
    path: Path | str,
    model,
    optimizer: torch.optim.Optimizer | None,
    meta: dict,
) -> Path:
    """Write model, optimizer, and bookkeeping state; returns the path."""
    arrays: dict[str, torch.Tensor | np.ndarray] = {}
    for name, tensor in model.state_dict().items():
        arrays["model/" + _key(name)] = tensor

    opt_meta: dict = {"present": False}
    if optimizer is not None:
        sd = optimizer.state_dict()
        opt_meta = {"present": True, "param_groups": [], "state_keys": {}}
        for group in sd["param_groups"]:
            opt_meta["param_groups"].append({k: v for k, v in group.items()})
        for pid, state in sd["state"].items():
            keys = []
            for k, v in state.items():
                arr_name = f"optimizer/{pid}/{k}"
                if torch.is_tensor(v):
                    arrays[arr_name] = v
                else:
                    arrays[arr_name] = np.asarray(v)
                keys.append(k)
            opt_meta["state_keys"][str(pid)] = keys

    full_meta = {
        "format_version": FORMAT_VERSION,
        "backbone_config": model.config.to_dict(),
        "decoder_config": model.decoder_config.to_dict(),
        "precision": "64" if model.dtype == torch.float64 else "32",
        "optimizer": opt_meta,
        "user": meta,
    }
    write_container(path, arrays, full_meta)
    return Path(path)


def load_checkpoint(path: Path | str) -> tuple[object, dict | None, dict]:
    """Rebuild (model, optimizer_state_dict, meta) from a container file."""
    from .backbone import BackboneConfig, DetectorModel
    from .decoder import DecoderConfig

    arrays, meta = read_container(path)
    bcfg = BackboneConfig(**meta["backbone_config"])
    dcfg = DecoderConfig(**meta["decoder_config"])
    dtype = torch.float64 if meta["precision"] == "64" else torch.float32
    model = DetectorModel(bcfg, dcfg).to(dtype)

    state = {}
    for name, tensor in model.state_dict().items():
        arr_name = "model/" + _key(name)
        if arr_name not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name}")
        state[name] = torch.from_numpy(arrays[arr_name]).to(tensor.dtype).reshape(tensor.shape)
    model.load_state_dict(state)

    opt_state = None
    opt_meta = meta["optimizer"]
    if opt_meta.get("present"):
        opt_state = {"param_groups": opt_meta["param_groups"], "state": {}}
        for pid_str, keys in opt_meta["state_keys"].items():
            pid = int(pid_str)
            entry = {}
            for k in keys:
                arr = arrays[f"optimizer/{pid}/{k}"]
                if k == "step":
                    entry[k] = torch.as_tensor(arr.reshape(arr.shape)).to(torch.float32).reshape(())
                else:
                    entry[k] = torch.from_numpy(arr).to(dtype)
            opt_state["state"][pid] = entry
    return model, opt_state, meta["user"]
