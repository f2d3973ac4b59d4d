"""Language-neutral checkpoint file for trained models.

Layout (all integers little-endian):

    magic   4 bytes ASCII ``FRCK``
    hlen    4 bytes unsigned header length
    header  UTF-8 JSON with keys:
              format_version  1
              model           "dual" | "branch"
              arch            constructor arguments of the model
              epoch, val_loss, config_hash   training provenance
              dtype           "f32" | "f64"
              tensors         ordered list of {name, shape, offset, nbytes}
    blob    raw little-endian tensor data, concatenated in ``tensors`` order

Offsets are relative to the end of the header. Writes are atomic
(temp file + rename). Loading restores parameters bit-exactly.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import BsrFormatError
from .network import Branch, DualBranchModel

MAGIC = b"FRCK"
_DTYPES = {"f32": (torch.float32, "<f4"), "f64": (torch.float64, "<f8")}


def _dtype_tag(module: nn.Module) -> str:
    dtype = next(module.parameters()).dtype
    for tag, (tdt, _) in _DTYPES.items():
        if tdt == dtype:
            return tag
    raise ValueError(f"unsupported parameter dtype {dtype}")


def save_checkpoint(
    path: str | Path,
    model: nn.Module,
    epoch: int = 0,
    val_loss: float = float("nan"),
    config_hash: str = "",
) -> None:
    path = Path(path)
    if isinstance(model, DualBranchModel):
        kind, arch = "dual", model.arch
    elif isinstance(model, Branch):
        kind = "branch"
        arch = {
            "in_channels": model.backbone.in_channels,
            "base_channels": model.backbone.base_channels,
            "with_projector": model.projector is not None,
        }
    else:
        raise ValueError(f"cannot checkpoint a {type(model).__name__}")

    tag = _dtype_tag(model)
    _, np_dtype = _DTYPES[tag]
    manifest = []
    chunks = []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype=np_dtype)
        raw = arr.tobytes()
        manifest.append(
            {"name": name, "shape": list(tensor.shape), "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)

    header = {
        "format_version": 1,
        "model": kind,
        "arch": arch,
        "epoch": int(epoch),
        "val_loss": float(val_loss),
        "config_hash": config_hash,
        "dtype": tag,
        "tensors": manifest,
    }
    header_bytes = json.dumps(header).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(header_bytes)))
            fh.write(header_bytes)
            for raw in chunks:
                fh.write(raw)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_checkpoint(path: str | Path) -> tuple[nn.Module, dict]:
    """Rebuild the model from the header and restore its parameters."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise BsrFormatError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    torch_dtype, np_dtype = _DTYPES[header["dtype"]]
    arch = header["arch"]

    if header["model"] == "dual":
        model: nn.Module = DualBranchModel(**arch)
    elif header["model"] == "branch":
        model = Branch(**arch)
    else:
        raise BsrFormatError(f"{path}: unknown model kind {header['model']!r}")
    model.to(torch_dtype)

    blob = raw[8 + hlen :]
    state = {}
    for entry in header["tensors"]:
        start = entry["offset"]
        chunk = blob[start : start + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise BsrFormatError(f"{path}: tensor {entry['name']} truncated")
        arr = np.frombuffer(chunk, dtype=np_dtype).reshape(entry["shape"]).copy()
        state[entry["name"]] = torch.from_numpy(arr)
    model.load_state_dict(state)
    model.eval()
    return model, header
