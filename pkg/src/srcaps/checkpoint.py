"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"SRCAPS1"  u32 version
    u32 n + n bytes          JSON config echo (sorted keys)
    u64 seed
    u32 count, then per tensor: name, u8 dtype, u32 ndim, u64 dims..., raw data
    u64 step, u64 epoch
    u32 count, then per moment pair: name, tensor (first moment), tensor (second moment)

Strings are ``u32 length + utf-8``. Parameters appear in model declaration
order followed by loss parameters (prefixed ``loss.``).
"""

from __future__ import annotations

import io
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"SRCAPS1"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {torch.float32: 0, torch.float64: 1}


@dataclass
class Checkpoint:
    config: dict
    seed: int
    params: "OrderedDict[str, torch.Tensor]"
    step: int = 0
    epoch: int = 0
    moments: "OrderedDict[str, tuple[torch.Tensor, torch.Tensor]]" = field(default_factory=OrderedDict)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", VERSION))
        _write_str(buf, json.dumps(self.config, sort_keys=True))
        buf.write(struct.pack("<Q", self.seed))
        buf.write(struct.pack("<I", len(self.params)))
        for name, t in self.params.items():
            _write_str(buf, name)
            _write_tensor(buf, t)
        buf.write(struct.pack("<QQ", self.step, self.epoch))
        buf.write(struct.pack("<I", len(self.moments)))
        for name, (m, v) in self.moments.items():
            _write_str(buf, name)
            _write_tensor(buf, m)
            _write_tensor(buf, v)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        buf = io.BytesIO(data)
        if buf.read(len(MAGIC)) != MAGIC:
            raise CheckpointError("not an SRCAPS1 checkpoint (bad magic)")
        (version,) = _unpack(buf, "<I")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        config = json.loads(_read_str(buf))
        (seed,) = _unpack(buf, "<Q")
        params = OrderedDict()
        for _ in range(_unpack(buf, "<I")[0]):
            name = _read_str(buf)
            params[name] = _read_tensor(buf)
        step, epoch = _unpack(buf, "<QQ")
        moments = OrderedDict()
        for _ in range(_unpack(buf, "<I")[0]):
            name = _read_str(buf)
            moments[name] = (_read_tensor(buf), _read_tensor(buf))
        if buf.read(1):
            raise CheckpointError("trailing bytes after checkpoint payload")
        return cls(config, seed, params, step, epoch, moments)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_bytes(data)


def _unpack(buf, fmt):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, raw)


def _write_str(buf, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _read_str(buf) -> str:
    (n,) = _unpack(buf, "<I")
    raw = buf.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated checkpoint")
    return raw.decode("utf-8")


def _write_tensor(buf, t: torch.Tensor) -> None:
    t = t.detach().cpu()
    if t.dtype not in _CODES:
        t = t.to(torch.float32)
    code = _CODES[t.dtype]
    buf.write(struct.pack("<BI", code, t.dim()))
    buf.write(struct.pack(f"<{t.dim()}Q", *t.shape))
    buf.write(t.contiguous().numpy().astype(_DTYPES[code], copy=False).tobytes())


def _read_tensor(buf) -> torch.Tensor:
    code, ndim = _unpack(buf, "<BI")
    if code not in _DTYPES:
        raise CheckpointError(f"unknown dtype code {code}")
    shape = _unpack(buf, f"<{ndim}Q") if ndim else ()
    dtype = _DTYPES[code]
    count = int(np.prod(shape)) if shape else 1
    raw = buf.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise CheckpointError("truncated tensor data")
    return torch.from_numpy(np.frombuffer(raw, dtype=dtype).copy().reshape(shape))


def shape_diff(expected: "OrderedDict[str, torch.Tensor]",
               found: "OrderedDict[str, torch.Tensor]") -> list[str]:
    """Human-readable differences between two name->tensor mappings."""
    lines = []
    for name in expected.keys() - found.keys():
        lines.append(f"missing {name} {tuple(expected[name].shape)}")
    for name in found.keys() - expected.keys():
        lines.append(f"unexpected {name} {tuple(found[name].shape)}")
    for name in expected.keys() & found.keys():
        if tuple(expected[name].shape) != tuple(found[name].shape):
            lines.append(f"{name}: expected {tuple(expected[name].shape)}, "
                         f"found {tuple(found[name].shape)}")
    return sorted(lines)
