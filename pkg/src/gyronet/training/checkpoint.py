"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PRN1" | u32 version | u32 header_len | header JSON (utf-8) | f64 blobs

The header holds the architecture, a table of ``(name, shape)`` entries in
blob order, optimizer hyperparameters and step, the epoch and the generator
state.  Blobs are raw little-endian float64 in table order.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import FormatError
from ..layers import BnState
from ..models import ArchSpec, Model

MAGIC = b"PRN1"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


@dataclass
class Checkpoint:
    model: Model
    epoch: int = 0
    optimizer: dict = field(default_factory=dict)  # kind, step, hyper, state arrays
    rng_state: dict | None = None


def _to_json(obj):
    # generator states hold small integer arrays
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, dict):
        return {k: _to_json(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return obj


def _from_json(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["__ndarray__"], dtype=obj["dtype"])
        return {k: _from_json(v) for k, v in obj.items()}
    return obj


def _entries(ckpt: Checkpoint):
    model = ckpt.model
    for name in sorted(model.params):
        yield f"param.{name}", model.params[name]
    for prefix in sorted(model.stats):
        st = model.stats[prefix]
        if st.last_mu is not None:
            yield f"stat.{prefix}.mu", st.last_mu
            yield f"stat.{prefix}.var", np.asarray(st.last_var, dtype=np.float64)
    for key in sorted(ckpt.optimizer.get("state", {})):
        yield f"opt.{key}", ckpt.optimizer["state"][key]


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    """Write ``ckpt`` atomically (temporary file, then rename)."""
    entries = [(name, np.array(arr, dtype="<f8", order="C")) for name, arr in _entries(ckpt)]
    opt = {k: v for k, v in ckpt.optimizer.items() if k != "state"}
    header = {
        "arch": ckpt.model.spec.to_dict(),
        "metadata": ckpt.model.metadata,
        "epoch": ckpt.epoch,
        "optimizer": opt,
        "rng_state": _to_json(ckpt.rng_state),
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in entries],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for _, arr in entries:
            fh.write(arr.tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Checkpoint:
    """Read a checkpoint; any layout mismatch raises :class:`FormatError`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: file too short for a checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {VERSION}")
    start = _PREFIX.size + hlen
    if len(raw) < start:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from exc
    table = header["tensors"]
    expected = start + 8 * sum(int(np.prod(t["shape"], dtype=np.int64)) for t in table)
    if len(raw) != expected:
        raise FormatError(f"{path}: {len(raw)} bytes, expected {expected}")

    arrays, offset = {}, start
    for t in table:
        shape = tuple(t["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arrays[t["name"]] = np.frombuffer(raw, "<f8", count, offset).reshape(shape).copy()
        offset += 8 * count

    model = Model(ArchSpec(**header["arch"]), {}, metadata=header.get("metadata", {}))
    opt = dict(header.get("optimizer") or {})
    opt["state"] = {}
    for name, arr in arrays.items():
        kind, rest = name.split(".", 1)
        if kind == "param":
            model.params[rest] = arr
        elif kind == "opt":
            opt["state"][rest] = arr
        elif kind == "stat":
            prefix, which = rest.rsplit(".", 1)
            st = model.stats.setdefault(prefix, BnState(bias=None))
            if which == "mu":
                st.last_mu = arr
            else:
                st.last_var = float(arr)
    return Checkpoint(model, header.get("epoch", 0), opt, _from_json(header.get("rng_state")))
