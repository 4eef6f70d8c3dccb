"""Binary checkpoint format.

Layout (little-endian)::

    magic        8 bytes   b"DVITCKPT"
    version      u32
    config_hash  32 bytes  raw sha256
    file_size    u64
    count        u32
    count x entry:
        name_len u16, name (utf-8)
        dtype    u8        1=float32 2=float64 3=int64 4=uint8
        ndim     u8, dims u32 * ndim
        offset   u64       absolute byte offset of the payload
        nbytes   u64
    payloads, C order, in entry order
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"DVITCKPT"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("u1")}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ConfigHashMismatch(CheckpointError):
    pass


@dataclass
class CheckpointHeader:
    version: int
    config_hash: str
    file_size: int
    entries: list[tuple[str, np.dtype, tuple[int, ...], int, int]] = field(default_factory=list)


@dataclass
class TrainState:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0
    lr: float = 0.0
    seed: int = 0
    config_hash: str = ""
    config_text: str = ""
    best_nme: float = float("inf")

    def tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, arr in self.params.items():
            out[f"param/{name}"] = arr
        for name, arr in self.m.items():
            out[f"adam_m/{name}"] = arr
        for name, arr in self.v.items():
            out[f"adam_v/{name}"] = arr
        out["meta/step"] = np.array([self.step], dtype=np.int64)
        out["meta/epoch"] = np.array([self.epoch], dtype=np.int64)
        out["meta/seed"] = np.array([self.seed], dtype=np.int64)
        out["meta/lr"] = np.array([self.lr], dtype=np.float64)
        out["meta/best_nme"] = np.array([self.best_nme], dtype=np.float64)
        out["meta/config"] = np.frombuffer(self.config_text.encode("utf-8"), dtype=np.uint8)
        return out

    @classmethod
    def from_tensors(cls, t: dict[str, np.ndarray], config_hash: str) -> "TrainState":
        def group(prefix):
            return {k[len(prefix):]: v for k, v in t.items() if k.startswith(prefix)}

        try:
            return cls(
                params=group("param/"),
                m=group("adam_m/"),
                v=group("adam_v/"),
                step=int(t["meta/step"][0]),
                epoch=int(t["meta/epoch"][0]),
                lr=float(t["meta/lr"][0]),
                seed=int(t["meta/seed"][0]),
                config_hash=config_hash,
                config_text=t["meta/config"].tobytes().decode("utf-8"),
                best_nme=float(t["meta/best_nme"][0]),
            )
        except KeyError as exc:
            raise CorruptCheckpointError(f"checkpoint lacks required entry {exc}") from exc


def checkpoint_save(state: TrainState, path: str | Path) -> Path:
    path = Path(path)
    tensors = state.tensors()
    arrays = []
    entry_sizes = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        if np.dtype(dt) not in _CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        arrays.append((name, arr.astype(dt, copy=False)))
        entry_sizes += 2 + len(name.encode()) + 1 + 1 + 4 * arr.ndim + 16
    head_size = 8 + 4 + 32 + 8 + 4 + entry_sizes
    offset = head_size
    entries = []
    for name, arr in arrays:
        entries.append((name, arr, offset))
        offset += arr.nbytes
    file_size = offset

    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    buf += bytes.fromhex(state.config_hash) if state.config_hash else bytes(32)
    buf += struct.pack("<QI", file_size, len(entries))
    for name, arr, off in entries:
        nb = name.encode("utf-8")
        buf += struct.pack("<H", len(nb)) + nb
        buf += struct.pack("<BB", _CODES[np.dtype(arr.dtype)], arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += struct.pack("<QQ", off, arr.nbytes)
    assert len(buf) == head_size
    for _, arr, _ in entries:
        buf += arr.tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(buf))
    os.replace(tmp, path)
    return path


def read_header(raw: bytes) -> CheckpointHeader:
    def need(pos, n):
        if pos + n > len(raw):
            raise CorruptCheckpointError(f"checkpoint truncated in header at byte {pos}")

    need(0, 8 + 4)
    if raw[:8] != MAGIC:
        raise CorruptCheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version} is not supported (expected {VERSION}); "
            "re-save it with the release that wrote it, or retrain"
        )
    need(12, 32 + 12)
    config_hash = raw[12:44].hex()
    file_size, count = struct.unpack_from("<QI", raw, 44)
    if file_size != len(raw):
        raise CorruptCheckpointError(f"checkpoint truncated or padded: header says {file_size} bytes, file has {len(raw)}")
    pos = 56
    entries = []
    for _ in range(count):
        need(pos, 2)
        (nlen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        need(pos, nlen + 2)
        name = raw[pos : pos + nlen].decode("utf-8")
        pos += nlen
        code, ndim = struct.unpack_from("<BB", raw, pos)
        pos += 2
        if code not in _DTYPES:
            raise CorruptCheckpointError(f"entry {name!r}: unknown dtype code {code}")
        need(pos, 4 * ndim + 16)
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        offset, nbytes = struct.unpack_from("<QQ", raw, pos)
        pos += 16
        entries.append((name, _DTYPES[code], tuple(shape), offset, nbytes))
    spans = sorted((off, off + nb, name) for name, _, _, off, nb in entries)
    cursor = pos
    for lo, hi, name in spans:
        if lo < cursor or hi > len(raw):
            raise CorruptCheckpointError(f"entry {name!r}: payload [{lo}, {hi}) overlaps or exceeds file")
        cursor = hi
    return CheckpointHeader(version, config_hash, file_size, entries)


def checkpoint_load(path: str | Path, expected_hash: str | None = None) -> TrainState:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    header = read_header(raw)
    if expected_hash is not None and header.config_hash != expected_hash:
        raise ConfigHashMismatch(
            f"{path}: checkpoint config hash {header.config_hash[:12]}... does not match {expected_hash[:12]}..."
        )
    tensors = {}
    for name, dt, shape, off, nb in header.entries:
        count = int(np.prod(shape)) if shape else 1
        if count * dt.itemsize != nb:
            raise CorruptCheckpointError(f"entry {name!r}: {nb} bytes for shape {shape} {dt}")
        tensors[name] = np.frombuffer(raw, dtype=dt, count=count, offset=off).reshape(shape).copy()
    return TrainState.from_tensors(tensors, header.config_hash)
