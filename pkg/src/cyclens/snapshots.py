"""Bit-exact on-disk policy snapshots.

Layout (all integers little-endian)::

    8 bytes   magic b"SEERLSNP"
    u32       format version (1)
    u32       byte length of the metadata block
    ...       metadata: UTF-8 "key=value\\n" lines, keys sorted
    u64       parameter count
    ...       parameters as float64 (IEEE-754, little-endian)
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArchitectureMismatch, BadMagic, IoFailure, LengthMismatch, UnsupportedVersion
from .learner import Architecture, PolicyParams

MAGIC = b"SEERLSNP"
VERSION = 1


@dataclass(frozen=True)
class SnapshotMeta:
    run_id: str
    env_id: str
    learner_config_hash: str
    cycle_index: int
    step: int
    alpha0: float
    T: int
    M: int
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict[str, str]:
        d = {
            "run_id": self.run_id,
            "env_id": self.env_id,
            "learner_config_hash": self.learner_config_hash,
            "cycle_index": str(self.cycle_index),
            "step": str(self.step),
            "alpha0": repr(float(self.alpha0)),
            "T": str(self.T),
            "M": str(self.M),
        }
        for k, v in self.extra.items():
            d[k] = str(v)
        return d


@dataclass(frozen=True)
class PolicySnapshot:
    params: PolicyParams
    meta: SnapshotMeta

    def __eq__(self, other):
        if not isinstance(other, PolicySnapshot):
            return NotImplemented
        return self.params == other.params and self.meta == other.meta

    @property
    def filename(self) -> str:
        return snapshot_filename(self.meta.run_id, self.meta.cycle_index)


def snapshot_filename(run_id: str, cycle_index: int) -> str:
    return f"{run_id}_cycle{cycle_index}.snap"


def make_snapshot(params: PolicyParams, *, run_id: str, env_id: str, cycle_index: int, step: int,
                  alpha0: float, T: int, M: int, **extra) -> PolicySnapshot:
    arch = params.arch
    arch_meta = {
        "state_dim": arch.state_dim,
        "hidden": arch.hidden,
        "n_out": arch.n_out,
        "continuous": int(arch.continuous),
    }
    meta = SnapshotMeta(run_id, env_id, arch.config_hash, cycle_index, step, alpha0, T, M,
                        {**arch_meta, **{k: str(v) for k, v in extra.items()}})
    return PolicySnapshot(params.frozen(), meta)


def _validate_text(value: str, key: str) -> None:
    if "\n" in value or "\n" in key or "=" in key:
        raise IoFailure(f"metadata {key!r} contains a reserved character")


def to_bytes(snapshot: PolicySnapshot) -> bytes:
    meta = snapshot.meta.as_dict()
    for k, v in meta.items():
        _validate_text(v, k)
    text = "".join(f"{k}={meta[k]}\n" for k in sorted(meta)).encode("utf-8")
    flat = np.ascontiguousarray(snapshot.params.flat, dtype="<f8")
    return b"".join([
        MAGIC,
        struct.pack("<II", VERSION, len(text)),
        text,
        struct.pack("<Q", flat.size),
        flat.tobytes(),
    ])


def from_bytes(data: bytes) -> PolicySnapshot:
    if len(data) < 8 or data[:8] != MAGIC:
        raise BadMagic("not a snapshot file (bad magic)")
    if len(data) < 16:
        raise LengthMismatch("truncated header")
    version, meta_len = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise UnsupportedVersion(f"snapshot version {version} is not supported (expected {VERSION})")
    pos = 16
    if len(data) < pos + meta_len + 8:
        raise LengthMismatch("truncated metadata block")
    try:
        text = data[pos:pos + meta_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise IoFailure(f"metadata is not valid UTF-8: {exc}") from None
    pos += meta_len
    (count,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if len(data) - pos != 8 * count:
        raise LengthMismatch(f"expected {count} parameters ({8 * count} bytes), found {len(data) - pos} bytes")
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)

    fields = dict(line.split("=", 1) for line in text.splitlines() if line)
    try:
        arch = Architecture(
            state_dim=int(fields.pop("state_dim")),
            n_out=int(fields.pop("n_out")),
            continuous=bool(int(fields.pop("continuous"))),
            hidden=int(fields.pop("hidden")),
        )
        meta = SnapshotMeta(
            run_id=fields.pop("run_id"),
            env_id=fields.pop("env_id"),
            learner_config_hash=fields.pop("learner_config_hash"),
            cycle_index=int(fields.pop("cycle_index")),
            step=int(fields.pop("step")),
            alpha0=float(fields.pop("alpha0")),
            T=int(fields.pop("T")),
            M=int(fields.pop("M")),
            extra={},
        )
    except (KeyError, ValueError) as exc:
        raise IoFailure(f"malformed metadata: {exc}") from None
    if arch.config_hash != meta.learner_config_hash:
        raise ArchitectureMismatch("architecture fields do not match learner_config_hash")
    if count != arch.size:
        raise LengthMismatch(f"{count} parameters stored but architecture needs {arch.size}")
    extra = {"state_dim": arch.state_dim, "hidden": arch.hidden, "n_out": arch.n_out,
             "continuous": int(arch.continuous)}
    extra.update(fields)
    meta = SnapshotMeta(meta.run_id, meta.env_id, meta.learner_config_hash, meta.cycle_index,
                        meta.step, meta.alpha0, meta.T, meta.M, extra)
    params = PolicyParams(arch, flat)
    return PolicySnapshot(params.frozen(), meta)


def save(snapshot: PolicySnapshot, path) -> None:
    path = Path(path)
    try:
        path.write_bytes(to_bytes(snapshot))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None


def load(path, expected_hash: str | None = None) -> PolicySnapshot:
    """Read a snapshot; ``expected_hash`` rejects files from a different architecture."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
    snap = from_bytes(data)
    if expected_hash is not None and snap.meta.learner_config_hash != expected_hash:
        raise ArchitectureMismatch(
            f"{path}: learner_config_hash {snap.meta.learner_config_hash} != expected {expected_hash}")
    return snap


def save_all(snapshots, directory) -> list[Path]:
    directory = Path(directory)
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {directory}: {exc}") from None
    paths = []
    for snap in snapshots:
        p = directory / snap.filename
        save(snap, p)
        paths.append(p)
    return paths


def load_run(directory, run_id: str | None = None) -> list[PolicySnapshot]:
    """Load every ``*_cycle{i}.snap`` in ``directory`` ordered by cycle index."""
    directory = Path(directory)
    pattern = f"{run_id}_cycle*.snap" if run_id else "*_cycle*.snap"
    snaps = [load(p) for p in directory.glob(pattern)]
    snaps.sort(key=lambda s: (s.meta.run_id, s.meta.cycle_index))
    return snaps
