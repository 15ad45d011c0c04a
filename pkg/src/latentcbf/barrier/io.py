"""Binary container for barrier banks ("CBFB") plus a JSON sidecar.

Layout (all little-endian):

    magic      4s   b"CBFB"
    version    u16
    K          u32  number of heads
    d_h        u32  input dimension
    per head:  kind u8 (0 mlp, 1 half-space, 2 ball-inside, 3 ball-outside),
               n_dims u16, dims u32 * n_dims (MLP hidden widths)
    weights    float64, head by head, row-major:
               mlp:        per block W (in x out), b, gain, shift; head_w, head_b
               half-space: w (d_h), c
               ball:       center (d_h), radius

The sidecar ``<path>.json`` carries category names, the training config and
the package version.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from latentcbf.barrier.analytic import HalfSpace, Sphere
from latentcbf.barrier.bank import BarrierBank
from latentcbf.barrier.net import MLPBarrier
from latentcbf.core import DataContractError

MAGIC = b"CBFB"
VERSION = 1
_KIND_CODES = {"mlp": 0, "halfspace": 1, "ball_in": 2, "ball_out": 3}
_F8 = np.dtype("<f8")


class BankFormatError(DataContractError):
    pass


def _heads(bank: BarrierBank):
    for comp in bank.components:
        for k in range(comp.n_heads):
            yield comp.head(k) if comp.n_heads > 1 else comp


def _kind(head) -> str:
    if head.kind == "sphere":
        return "ball_in" if head.inside else "ball_out"
    return head.kind


def _head_arrays(head):
    if head.kind == "mlp":
        for arr in head.parameters():
            yield arr[0]
    elif head.kind == "halfspace":
        yield head.w
        yield np.array([head.c])
    else:
        yield head.center
        yield np.array([head.radius])


def encode_bank(bank: BarrierBank) -> bytes:
    heads = list(_heads(bank))
    parts = [MAGIC, struct.pack("<HII", VERSION, len(heads), bank.input_dim)]
    for head in heads:
        dims = head.hidden_dims if head.kind == "mlp" else ()
        parts.append(struct.pack("<BH", _KIND_CODES[_kind(head)], len(dims)))
        parts.append(struct.pack(f"<{len(dims)}I", *dims))
    for head in heads:
        for arr in _head_arrays(head):
            parts.append(np.ascontiguousarray(arr, dtype=_F8).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise BankFormatError(f"truncated model file at byte offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        arr = np.frombuffer(self.take(count * 8), dtype=_F8).astype(np.float64)
        return arr.reshape(shape)


def decode_bank(data: bytes, category_names=None) -> BarrierBank:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BankFormatError("not a CBFB model file (bad magic)")
    version, K, d = r.unpack("<HII")
    if version != VERSION:
        raise BankFormatError(f"unsupported CBFB version {version}")
    if K < 1 or d < 1:
        raise BankFormatError("model file declares no heads or zero dimension")
    codes = {v: k for k, v in _KIND_CODES.items()}
    specs = []
    for _ in range(K):
        code, n_dims = r.unpack("<BH")
        if code not in codes:
            raise BankFormatError(f"unknown head kind {code}")
        dims = r.unpack(f"<{n_dims}I") if n_dims else ()
        specs.append((codes[code], tuple(dims)))
    heads = []
    for kind, dims in specs:
        if kind == "mlp":
            if not dims:
                raise BankFormatError("MLP head without hidden layers")
            layers, fan_in = [], d
            for width in dims:
                layers.append({"W": r.floats((1, fan_in, width)), "b": r.floats((1, width)),
                               "gain": r.floats((1, width)), "shift": r.floats((1, width))})
                fan_in = width
            params = {"layers": layers, "head_w": r.floats((1, fan_in)), "head_b": r.floats((1,))}
            heads.append(MLPBarrier(d, dims, 1, params=params))
        elif kind == "halfspace":
            heads.append(HalfSpace(r.floats((d,)), r.floats((1,))[0]))
        else:
            center, radius = r.floats((d,)), r.floats((1,))[0]
            heads.append(Sphere(center, radius, inside=(kind == "ball_in")))
    if r.pos != len(data):
        raise BankFormatError(f"{len(data) - r.pos} trailing bytes after weights")
    # restack runs of same-architecture MLP heads
    components = []
    for head in heads:
        prev = components[-1] if components else None
        if (head.kind == "mlp" and prev is not None and prev.kind == "mlp"
                and prev.hidden_dims == head.hidden_dims):
            components[-1] = MLPBarrier.stack([prev, head])
        else:
            components.append(head)
    return BarrierBank(components, category_names)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_bank(bank: BarrierBank, path, train_config=None, extra: dict | None = None):
    from latentcbf import __version__

    path = Path(path)
    path.write_bytes(encode_bank(bank))
    meta = {
        "format": "CBFB",
        "format_version": VERSION,
        "artifact_version": __version__,
        "K": bank.n_heads,
        "d_h": bank.input_dim,
        "category_names": bank.category_names,
        "train_config": train_config.to_dict() if hasattr(train_config, "to_dict") else train_config,
    }
    if extra:
        meta.update(extra)
    sidecar_path(path).write_text(json.dumps(meta, indent=2))


def load_bank(path) -> BarrierBank:
    path = Path(path)
    data = path.read_bytes()
    names = None
    side = sidecar_path(path)
    if side.exists():
        try:
            names = json.loads(side.read_text()).get("category_names")
        except json.JSONDecodeError as exc:
            raise BankFormatError(f"unreadable sidecar {side}: {exc}") from exc
    return decode_bank(data, names)
