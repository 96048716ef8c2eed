"""Named parameter storage and the binary checkpoint format.

Checkpoint layout (all integers little-endian)::

    magic      8 bytes  b"MPTPARCK"
    version    u32      (currently 1)
    meta_len   u32      length of the UTF-8 metadata text that follows
    meta       bytes    free-form key=value lines (model config snapshot)
    count      u32      number of parameters
    per parameter, sorted by name:
        name_len u16, name (UTF-8)
        ndim     u8, extents u32 * ndim
        data     float64 LE, row-major, prod(extents) values
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import DTYPE, Tensor

CHECKPOINT_MAGIC = b"MPTPARCK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ParamStore:
    """Parameters by name plus Adam moment buffers and a step counter."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        arr = np.array(value, dtype=DTYPE)
        t = Tensor(arr, requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Current gradients (zeros where a parameter was not reached)."""
        return {n: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for n, t in self.params.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_snapshot(self, values: dict[str, np.ndarray]) -> None:
        for n, arr in values.items():
            if self.params[n].shape != np.shape(arr):
                raise ValueError(f"shape mismatch for {n}")
            self.params[n].data[...] = arr

    def num_scalars(self) -> int:
        return sum(t.data.size for t in self.params.values())

    # -------------------------------------------------------------- checkpoint

    def to_bytes(self, meta: str = "") -> bytes:
        meta_b = meta.encode("utf-8")
        out = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(meta_b)), meta_b,
               struct.pack("<I", len(self.params))]
        for name in sorted(self.params):
            arr = self.params[name].data
            nb = name.encode("utf-8")
            out.append(struct.pack("<H", len(nb)) + nb)
            out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
            out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> tuple["ParamStore", str]:
        if buf[:8] != CHECKPOINT_MAGIC:
            raise CheckpointError("not a checkpoint file")
        try:
            version, meta_len = struct.unpack_from("<II", buf, 8)
            if version != CHECKPOINT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version}")
            pos = 16
            meta = buf[pos:pos + meta_len].decode("utf-8")
            pos += meta_len
            (count,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            store = cls()
            for _ in range(count):
                (nlen,) = struct.unpack_from("<H", buf, pos)
                pos += 2
                name = buf[pos:pos + nlen].decode("utf-8")
                pos += nlen
                (ndim,) = struct.unpack_from("<B", buf, pos)
                pos += 1
                shape = struct.unpack_from(f"<{ndim}I", buf, pos)
                pos += 4 * ndim
                size = int(np.prod(shape, dtype=np.int64))
                if pos + 8 * size > len(buf):
                    raise CheckpointError("truncated checkpoint")
                arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape)
                pos += 8 * size
                store.add(name, arr)
        except struct.error as exc:
            raise CheckpointError("truncated checkpoint") from exc
        if pos != len(buf):
            raise CheckpointError("trailing bytes in checkpoint")
        return store, meta

    def save(self, path, meta: str = "") -> None:
        Path(path).write_bytes(self.to_bytes(meta))

    @classmethod
    def load(cls, path) -> tuple["ParamStore", str]:
        return cls.from_bytes(Path(path).read_bytes())
