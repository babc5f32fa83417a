"""Binary checkpoints.

Layout (all little-endian):

    magic ``SHLF`` | u32 version | u64 iteration
    u32 meta length   | meta JSON  (rng seed, dtype, optimizer hyperparams)
    u32 arch length   | canonical architecture JSON
    u32 tensor count  | per tensor: u16 name len, name, u8 dtype tag,
                        u8 ndim, u32 dims..., raw payload
    u32 CRC32 of everything before it

Tensors carry ``param/``, ``running/`` and ``optim/`` prefixes for
parameters, batch-norm running stats and optimizer velocities.  A shared
kernel is a single parameter, so it is stored exactly once.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .arch import BlockGraph
from .errors import CheckpointError
from .net import ExecutableNet, instantiate
from .optim import SGD

MAGIC = b"SHLF"
VERSION = 1

_DTYPE_TAGS = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_TAG_FOR = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}


@dataclass
class Checkpoint:
    arch_json: str
    tensors: Dict[str, np.ndarray]
    iteration: int = 0
    meta: Dict = field(default_factory=dict)
    version: int = VERSION


def save_checkpoint(path: str, ckpt: Checkpoint):
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<IQ", ckpt.version, ckpt.iteration)
    meta_bytes = json.dumps(ckpt.meta, sort_keys=True).encode()
    buf += struct.pack("<I", len(meta_bytes)) + meta_bytes
    arch_bytes = ckpt.arch_json.encode()
    buf += struct.pack("<I", len(arch_bytes)) + arch_bytes
    buf += struct.pack("<I", len(ckpt.tensors))
    for name, arr in ckpt.tensors.items():
        if arr.dtype not in _TAG_FOR:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        nb = name.encode()
        buf += struct.pack("<H", len(nb)) + nb
        buf += struct.pack("<BB", _TAG_FOR[arr.dtype], arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    with open(path, "wb") as f:
        f.write(bytes(buf))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 + 4:
        raise CheckpointError("checkpoint truncated")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) != stored_crc:
        raise CheckpointError("checkpoint CRC mismatch (corrupt or truncated file)")
    r = _Reader(data[:-4])
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, iteration = r.unpack("<IQ")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode())
    (arch_len,) = r.unpack("<I")
    arch_json = r.take(arch_len).decode()
    (count,) = r.unpack("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        tag, ndim = r.unpack("<BB")
        if tag not in _DTYPE_TAGS:
            raise CheckpointError(f"tensor {name!r} has unknown dtype tag {tag}")
        shape = r.unpack(f"<{ndim}I")
        dtype = _DTYPE_TAGS[tag]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(r.take(n_bytes), dtype=dtype).reshape(shape)
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="))
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after tensor table")
    return Checkpoint(arch_json, tensors, iteration, meta, version)


# --- net binding -------------------------------------------------------------

def checkpoint_from_net(net: ExecutableNet, optimizer: Optional[SGD] = None,
                        iteration: int = 0, rng_seed: int = 0) -> Checkpoint:
    tensors = {k: v.copy() for k, v in net.state_arrays().items()}
    meta = {
        "rng": {"seed": int(rng_seed), "scheme": "stateless-per-step"},
        "dtype": str(net.dtype),
        "init_seed": net.seed,
    }
    if optimizer is not None:
        for name, v in optimizer.state_dict().items():
            tensors[f"optim/{name}"] = v
        meta["optimizer"] = {"momentum": optimizer.momentum,
                             "weight_decay": optimizer.weight_decay}
    return Checkpoint(net.graph.to_json(), tensors, iteration, meta)


def net_from_checkpoint(ckpt: Checkpoint, expected_graph: Optional[BlockGraph] = None
                        ) -> ExecutableNet:
    """Rebuild the architecture embedded in the checkpoint and load its state.

    When ``expected_graph`` is given, its canonical JSON must match the
    stored one exactly; there is no silent reshaping.
    """
    graph = BlockGraph.from_json(ckpt.arch_json)
    if expected_graph is not None and expected_graph.to_json() != ckpt.arch_json:
        raise CheckpointError(
            "checkpoint architecture does not match the requested configuration "
            f"(stored hash {graph.arch_hash()[:12]}, "
            f"requested {expected_graph.arch_hash()[:12]})")
    dtype = np.dtype(ckpt.meta.get("dtype", "float64"))
    net = instantiate(graph, seed=ckpt.meta.get("init_seed", 0), dtype=dtype)
    state = {k: v for k, v in ckpt.tensors.items() if not k.startswith("optim/")}
    net.load_state(state)
    return net


def optimizer_from_checkpoint(ckpt: Checkpoint, net: ExecutableNet) -> SGD:
    hyper = ckpt.meta.get("optimizer", {})
    opt = SGD(net.parameters(), momentum=hyper.get("momentum", 0.9),
              weight_decay=hyper.get("weight_decay", 1e-4))
    vel = {k[len("optim/"):]: v for k, v in ckpt.tensors.items() if k.startswith("optim/")}
    if vel:
        opt.load_state_dict(vel)
    return opt
