"""Binary checkpoint container ("GFR1").

Layout, all little-endian::

    b"GFR1" | u32 version | u32 n_tensors | tensor * n
    tensor = u16 name_len | name (utf-8) | u8 group | u8 dtype | u8 rank | u64 dims[rank] | raw data
    footer = u64 blob_len | blob (utf-8 JSON: rng state, stage cursor, optimizer scalars)
             | u32 n_opt | tensor * n_opt          (optimizer moments, group 255)
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptionError, FormatError
from .optim import AdamWState
from .params import GROUPS, ParameterStore

MAGIC = b"GFR1"
VERSION = 1
NO_GROUP = 255
DTYPE_CODES = {np.dtype("<f8"): 0, np.dtype("<f4"): 1}
CODE_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


@dataclass
class Checkpoint:
    params: ParameterStore
    cursor: dict = field(default_factory=dict)  # regime_id, stage_index, stage name, step
    rng_state: dict | None = None
    optimizer: AdamWState | None = None
    version: int = VERSION


def _write_tensor(buf, name: str, group: int, arr: np.ndarray):
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    if np.dtype(dt) not in DTYPE_CODES:
        raise FormatError(f"unsupported dtype {arr.dtype} for {name}")
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<BBB", group, DTYPE_CODES[np.dtype(dt)], arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype=np.dtype(dt).newbyteorder("<")).tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptionError(f"truncated checkpoint: need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensor(self):
        (nlen,) = self.unpack("<H")
        try:
            name = self.take(nlen).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorruptionError(f"bad tensor name at offset {self.pos}") from e
        group, code, rank = self.unpack("<BBB")
        if code not in CODE_DTYPES:
            raise CorruptionError(f"unknown dtype code {code} for {name}")
        if group != NO_GROUP and group >= len(GROUPS):
            raise CorruptionError(f"unknown group tag {group} for {name}")
        dims = self.unpack(f"<{rank}Q")
        dt = CODE_DTYPES[code]
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(self.take(count * dt.itemsize), dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
        return name, group, arr


def dumps(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    names = ckpt.params.names()
    buf.write(struct.pack("<II", VERSION, len(names)))
    for n in names:
        _write_tensor(buf, n, GROUPS.index(ckpt.params.group_of(n)), ckpt.params[n].data)
    blob = {"rng": ckpt.rng_state, "cursor": ckpt.cursor, "trainable": ckpt.params.trainable_names()}
    opt = ckpt.optimizer
    if opt is not None:
        blob["optimizer"] = {
            k: getattr(opt, k) for k in ("lr", "beta1", "beta2", "eps", "weight_decay", "warmup_steps", "t")
        }
    raw = json.dumps(blob, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<Q", len(raw)))
    buf.write(raw)
    moments = [] if opt is None else [(f"m/{k}", v) for k, v in opt.m.items()] + [(f"v/{k}", v) for k, v in opt.v.items()]
    buf.write(struct.pack("<I", len(moments)))
    for n, arr in moments:
        _write_tensor(buf, n, NO_GROUP, arr)
    return buf.getvalue()


def loads(data: bytes) -> Checkpoint:
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}; expected {MAGIC!r}")
    r = _Reader(data)
    r.take(4)
    version, count = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    store = ParameterStore()
    for _ in range(count):
        name, group, arr = r.tensor()
        if group == NO_GROUP:
            raise CorruptionError(f"parameter {name} has no group tag")
        store.add(name, arr, GROUPS[group], trainable=False)
        store[name].data = arr  # keep the stored dtype exactly
    (blen,) = r.unpack("<Q")
    try:
        blob = json.loads(r.take(blen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptionError("unreadable footer blob") from e
    for n in blob.get("trainable", []):
        store[n].requires_grad = True
    (n_opt,) = r.unpack("<I")
    moments = {}
    for _ in range(n_opt):
        name, _, arr = r.tensor()
        moments[name] = arr
    if r.pos != len(data):
        raise CorruptionError(f"{len(data) - r.pos} trailing bytes after footer")
    opt = None
    if "optimizer" in blob:
        opt = AdamWState(**blob["optimizer"])
        opt.m = {k[2:]: v for k, v in moments.items() if k.startswith("m/")}
        opt.v = {k[2:]: v for k, v in moments.items() if k.startswith("v/")}
    return Checkpoint(store, blob.get("cursor", {}), blob.get("rng"), opt, version)


def save_checkpoint(path, ckpt: Checkpoint) -> str:
    """Write atomically; returns the sha256 of the written bytes."""
    data = dumps(ckpt)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        return loads(f.read())


def rng_to_json(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def rng_from_json(state: dict) -> np.random.Generator:
    bg = getattr(np.random, state["bit_generator"])()
    bg.state = state
    return np.random.Generator(bg)
