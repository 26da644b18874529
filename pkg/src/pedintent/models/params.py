"""Parameter accounting, freezing and the named-tensor checkpoint container.

Checkpoint layout (all integers little-endian u32 unless noted)::

    b"GSCK" | version | n_tensors
    per tensor: name_len | name (UTF-8) | dtype tag (u8) | rank | dims... | payload

The JSON sidecar (same stem, ``.json``) carries configs and training metadata.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

MAGIC = b"GSCK"
VERSION = 1
_DTYPES = {
    0: torch.float32,
    1: torch.float64,
    2: torch.int64,
    3: torch.int32,
    4: torch.uint8,
    5: torch.bool,
}
_TAGS = {v: k for k, v in _DTYPES.items()}
_NP = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.uint8: "u1",
    torch.bool: "?",
}


@dataclass
class ParamReport:
    per_module: dict[str, int] = field(default_factory=dict)
    per_module_bytes: dict[str, int] = field(default_factory=dict)
    total: int = 0
    total_bytes: int = 0
    buffer_bytes: int = 0

    def to_dict(self) -> dict:
        return {
            "per_module": self.per_module,
            "per_module_bytes": self.per_module_bytes,
            "total": self.total,
            "total_bytes": self.total_bytes,
            "buffer_bytes": self.buffer_bytes,
        }


def parameter_count(params) -> ParamReport:
    """Count parameters of an ``nn.Module`` or a ``{name: tensor}`` mapping.

    Per-module keys are the first dotted component of each name. Buffers
    (batchnorm running statistics) are tallied in ``buffer_bytes`` only.
    """
    report = ParamReport()
    if isinstance(params, nn.Module):
        named = list(params.named_parameters())
        report.buffer_bytes = sum(b.numel() * b.element_size() for b in params.buffers())
    else:
        named = list(params.items())
    for name, t in named:
        top = name.split(".", 1)[0]
        n, nbytes = t.numel(), t.numel() * t.element_size()
        report.per_module[top] = report.per_module.get(top, 0) + n
        report.per_module_bytes[top] = report.per_module_bytes.get(top, 0) + nbytes
        report.total += n
        report.total_bytes += nbytes
    return report


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()
    return module


def trainable_flags(module: nn.Module) -> dict[str, bool]:
    return {name: p.requires_grad for name, p in module.named_parameters()}


def serialize_tensors(tensors: dict[str, torch.Tensor]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name, t in tensors.items():
        t = t.detach().cpu().contiguous()
        raw_name = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<BI", _TAGS[t.dtype], t.dim()))
        buf.write(struct.pack(f"<{t.dim()}I", *t.shape))
        buf.write(np.ascontiguousarray(t.numpy(), dtype=_NP[t.dtype]).tobytes())
    return buf.getvalue()


def deserialize_tensors(data: bytes) -> dict[str, torch.Tensor]:
    if data[:4] != MAGIC:
        raise OSError("not a GSCK checkpoint")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise OSError(f"unsupported checkpoint version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos : pos + n].decode("utf-8")
        pos += n
        tag, rank = struct.unpack_from("<BI", data, pos)
        pos += 5
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        dtype = _DTYPES[tag]
        np_dtype = np.dtype(_NP[dtype])
        size = int(np.prod(dims, dtype=np.int64)) * np_dtype.itemsize
        arr = np.frombuffer(data[pos : pos + size], dtype=np_dtype).reshape(dims)
        pos += size
        out[name] = torch.from_numpy(arr.copy())
    return out


def sidecar_path(path: Path | str) -> Path:
    return Path(path).with_suffix(".json")


def save_checkpoint(path: Path | str, tensors: dict[str, torch.Tensor], meta: dict | None = None) -> str:
    """Write the container and its sidecar; return the container's sha256."""
    path = Path(path)
    data = serialize_tensors(tensors)
    path.write_bytes(data)
    sidecar_path(path).write_text(json.dumps(meta or {}, indent=2, sort_keys=True))
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path: Path | str) -> tuple[dict[str, torch.Tensor], dict]:
    path = Path(path)
    if not path.exists():
        raise OSError(f"checkpoint not found: {path}")
    tensors = deserialize_tensors(path.read_bytes())
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    return tensors, meta


def file_hash(path: Path | str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def tensors_hash(tensors: dict[str, torch.Tensor]) -> str:
    return hashlib.sha256(serialize_tensors(tensors)).hexdigest()
