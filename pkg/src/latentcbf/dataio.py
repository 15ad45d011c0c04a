"""Labeled latent-state datasets: CBFA binary dumps, JSONL fixtures,
behavior-level splits and synthetic generators.

CBFA layout (little-endian):

    header   magic b"CBFA", version u16, d_h u32, count u64, layer_index u32
    record   label i8 (+1 safe / -1 unsafe), source_id_len u16,
             source_id (utf-8), d_h float32 values
"""
from __future__ import annotations

import enum
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from latentcbf.core import DataContractError, SafetyLabel

MAGIC = b"CBFA"
VERSION = 1
_HEADER = struct.Struct("<4sHIQI")
_RECORD_HEAD = struct.Struct("<bH")


class DumpFormatError(DataContractError):
    """Header is missing, has the wrong magic, or an unsupported version."""


class DumpCorruptionError(DataContractError):
    """The body is truncated or a record is malformed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class SafetyDataset:
    states: np.ndarray                 # (N, d_h) float64
    labels: np.ndarray                 # (N,) int8, +1 safe / -1 unsafe
    source_ids: list[str]
    layer_index: int = 0
    rejected: int = field(default=0, compare=False)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 1 and self.states.size == 0:
            self.states = self.states.reshape(0, 0)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.source_ids = [str(s) for s in self.source_ids]
        n = self.states.shape[0]
        if self.states.ndim != 2 or self.labels.shape != (n,) or len(self.source_ids) != n:
            raise DataContractError("states, labels and source_ids must have matching lengths")
        if not np.all(np.isin(self.labels, (-1, 1))):
            raise DataContractError("labels must be +1 (safe) or -1 (unsafe)")

    def __len__(self):
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def subset(self, mask_or_idx) -> "SafetyDataset":
        idx = np.arange(len(self))[mask_or_idx]
        return SafetyDataset(self.states[idx], self.labels[idx], [self.source_ids[i] for i in idx],
                             self.layer_index)

    def same_as(self, other: "SafetyDataset") -> bool:
        return (self.layer_index == other.layer_index and self.source_ids == other.source_ids
                and np.array_equal(self.labels, other.labels)
                and self.states.shape == other.states.shape
                and np.array_equal(self.states, other.states))

    def sequences(self) -> dict[str, np.ndarray]:
        """Records grouped by source id, in file order."""
        groups: dict[str, list[int]] = {}
        for i, sid in enumerate(self.source_ids):
            groups.setdefault(sid, []).append(i)
        return {sid: self.states[idx] for sid, idx in groups.items()}


# -- binary dumps -----------------------------------------------------------

def write_dump(dataset: SafetyDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, dataset.dim, len(dataset), dataset.layer_index))
        vecs = dataset.states.astype("<f4")
        for label, sid, vec in zip(dataset.labels, dataset.source_ids, vecs):
            raw = sid.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise DataContractError(f"source id longer than 65535 bytes: {sid[:40]}...")
            fh.write(_RECORD_HEAD.pack(int(label), len(raw)))
            fh.write(raw)
            fh.write(vec.tobytes())


_CHUNK = 1 << 20


def _read_exact(fh, n: int, offset: int, what: str) -> bytes:
    # Chunked so a corrupted length field cannot trigger a huge allocation.
    if n <= _CHUNK:
        data = fh.read(n)
    else:
        parts, got = [], 0
        while got < n:
            part = fh.read(min(_CHUNK, n - got))
            if not part:
                break
            parts.append(part)
            got += len(part)
        data = b"".join(parts)
    if len(data) != n:
        raise DumpCorruptionError(f"truncated {what}", offset + len(data))
    return data


def iter_dump(fh):
    """Yield (label, source_id, vector or None) records from an open binary stream.

    The first item yielded is the header dict. Non-finite vectors come back as
    None so the caller can count them.
    """
    head = fh.read(_HEADER.size)
    if len(head) < 4 or head[:4] != MAGIC:
        raise DumpFormatError("not a CBFA activation dump (bad or missing magic)")
    if len(head) < _HEADER.size:
        raise DumpFormatError("truncated CBFA header")
    _, version, d, count, layer = _HEADER.unpack(head)
    if version != VERSION:
        raise DumpFormatError(f"unsupported CBFA version {version}")
    if d < 1:
        raise DumpFormatError("CBFA header declares zero dimension")
    yield {"version": version, "d_h": d, "count": count, "layer_index": layer}
    offset = _HEADER.size
    vec_bytes = 4 * d
    for _ in range(count):
        label, n = _RECORD_HEAD.unpack(_read_exact(fh, _RECORD_HEAD.size, offset, "record header"))
        if label not in (-1, 1):
            raise DumpCorruptionError(f"invalid label {label}", offset)
        offset += _RECORD_HEAD.size
        raw = _read_exact(fh, n, offset, "source id")
        try:
            sid = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise DumpCorruptionError("source id is not valid utf-8", offset) from None
        offset += n
        vec = np.frombuffer(_read_exact(fh, vec_bytes, offset, "state vector"), dtype="<f4")
        offset += vec_bytes
        yield label, sid, (vec.astype(np.float64) if np.all(np.isfinite(vec)) else None)
    if fh.read(1):
        raise DumpCorruptionError("trailing bytes after the declared records", offset)


def read_dump(path) -> SafetyDataset:
    """Load a CBFA dump. Records with non-finite vectors are dropped and counted."""
    with open(path, "rb") as fh:
        return _collect(iter_dump(fh))


def decode_dump(data: bytes) -> SafetyDataset:
    return _collect(iter_dump(io.BytesIO(data)))


def _collect(records) -> SafetyDataset:
    header = next(records)
    states, labels, ids, rejected = [], [], [], 0
    for label, sid, vec in records:
        if vec is None:
            rejected += 1
            continue
        states.append(vec)
        labels.append(label)
        ids.append(sid)
    X = np.array(states, dtype=np.float64).reshape(len(states), header["d_h"])
    return SafetyDataset(X, labels, ids, header["layer_index"], rejected=rejected)


# -- JSON lines -------------------------------------------------------------

def read_jsonl(path) -> SafetyDataset:
    """Line-delimited {id, label, layer, vector} records."""
    states, labels, ids, layer, rejected = [], [], [], 0, 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                vec = np.asarray(rec["vector"], dtype=np.float64)
                label = int(SafetyLabel.parse(rec["label"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataContractError(f"{path}:{lineno}: bad record ({exc})") from exc
            if vec.ndim != 1 or (states and vec.shape != states[0].shape):
                raise DataContractError(f"{path}:{lineno}: vector has inconsistent length")
            if not np.all(np.isfinite(vec)):
                rejected += 1
                continue
            states.append(vec)
            labels.append(label)
            ids.append(str(rec.get("id", lineno)))
            layer = int(rec.get("layer", layer))
    if not states:
        raise DataContractError(f"{path}: no usable records")
    return SafetyDataset(np.array(states), labels, ids, layer, rejected=rejected)


def write_jsonl(dataset: SafetyDataset, path) -> None:
    with open(path, "w") as fh:
        for x, y, sid in zip(dataset.states, dataset.labels, dataset.source_ids):
            fh.write(json.dumps({"id": sid, "label": int(y), "layer": dataset.layer_index,
                                 "vector": x.tolist()}) + "\n")


def load_dataset(path) -> SafetyDataset:
    """Read a dump, choosing the format from the file contents."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == MAGIC:
        return read_dump(path)
    if magic[:1] == b"{":
        return read_jsonl(path)
    return read_dump(path)  # raises DumpFormatError with the usual message


# -- splitting ----------------------------------------------------------------

def split(dataset: SafetyDataset, train_fraction: float, seed: int = 0):
    """Split by source id so no behavior appears on both sides."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    ids = list(dict.fromkeys(dataset.source_ids))
    if len(ids) < 2:
        raise DataContractError("need at least two distinct source ids to split")
    n_train = int(round(train_fraction * len(ids)))
    n_train = min(max(n_train, 1), len(ids) - 1)
    perm = np.random.default_rng(seed).permutation(len(ids))
    train_ids = {ids[i] for i in perm[:n_train]}
    mask = np.array([sid in train_ids for sid in dataset.source_ids], dtype=bool)
    return dataset.subset(mask), dataset.subset(~mask)


# -- synthetic data -------------------------------------------------------------

class SyntheticKind(str, enum.Enum):
    TWO_MOONS = "two_moons"
    GAUSSIAN_CLUSTERS = "gaussian_clusters"
    ANNULUS_VS_CORE = "annulus_vs_core"


@dataclass(frozen=True)
class SyntheticSpec:
    kind: SyntheticKind = SyntheticKind.TWO_MOONS
    n_per_class: int = 500
    noise: float = 0.1
    d_h: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", SyntheticKind(self.kind))
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be at least 1")
        if self.d_h < 2:
            raise ValueError("d_h must be at least 2")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")


def _moons(n: int):
    t_safe = np.linspace(0.0, np.pi, n) if n > 1 else np.array([np.pi / 2])
    t_unsafe = t_safe.copy()
    safe = np.column_stack([np.cos(t_safe), np.sin(t_safe)])
    unsafe = np.column_stack([1.0 - np.cos(t_unsafe), 0.5 - np.sin(t_unsafe)])
    return safe, unsafe


def generate_synthetic(spec: SyntheticSpec) -> SafetyDataset:
    """Balanced two-class dataset; the first two coordinates carry the structure."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_per_class
    if spec.kind is SyntheticKind.TWO_MOONS:
        safe, unsafe = _moons(n)
    elif spec.kind is SyntheticKind.GAUSSIAN_CLUSTERS:
        safe = rng.normal(0.0, 0.5, size=(n, 2))
        unsafe = rng.normal(0.0, 0.5, size=(n, 2)) + np.array([2.5, 0.0])
    else:
        r_safe = np.sqrt(rng.uniform(0.0, 1.0, n))
        r_unsafe = np.sqrt(rng.uniform(4.0, 9.0, n))
        th = rng.uniform(0.0, 2 * np.pi, size=(2, n))
        safe = np.column_stack([r_safe * np.cos(th[0]), r_safe * np.sin(th[0])])
        unsafe = np.column_stack([r_unsafe * np.cos(th[1]), r_unsafe * np.sin(th[1])])
    X = np.vstack([safe, unsafe])
    X = X + spec.noise * rng.normal(size=X.shape)
    if spec.d_h > 2:
        X = np.hstack([X, spec.noise * rng.normal(size=(X.shape[0], spec.d_h - 2))])
    y = np.concatenate([np.ones(n, dtype=np.int8), -np.ones(n, dtype=np.int8)])
    ids = [f"synth-{i:06d}" for i in range(2 * n)]
    return SafetyDataset(X, y, ids)
