"""Binary checkpoint of an orbital matrix plus trajectory metadata.

Layout (all integers little-endian)::

    magic      8 bytes   b"MFGSCKPT"
    version    uint32    FORMAT_VERSION
    hdr_len    uint64    length of the JSON header in bytes
    header     hdr_len   UTF-8 JSON: L, N, dimension, extents, time,
                         rng_state, plus protocol-specific ``extra``
    payload    L*N*16    row-major complex entries, each as two
                         little-endian float64 (real, imag)
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .exceptions import TrajectoryInterrupted

MAGIC = b"MFGSCKPT"
FORMAT_VERSION = 1


def write_checkpoint(path, U: np.ndarray, *, extents, time: float, rng_state, extra=None) -> None:
    U = np.asarray(U, dtype=np.complex128)
    L, N = U.shape
    header = {
        "format_version": FORMAT_VERSION,
        "L": int(L),
        "N": int(N),
        "dimension": len(extents),
        "extents": [int(e) for e in extents],
        "time": float(time),
        "rng_state": rng_state,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = U.astype("<c16", copy=False).tobytes(order="C")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(payload)
    os.replace(tmp, path)


def read_checkpoint(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, hdr_len = struct.unpack("<IQ", fh.read(12))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hdr_len).decode("utf-8"))
        payload = fh.read()
    L, N = header["L"], header["N"]
    if len(payload) != 16 * L * N:
        raise ValueError(f"{path}: truncated payload")
    U = np.frombuffer(payload, dtype="<c16").reshape(L, N).astype(np.complex128)
    return U, header


class CheckpointPolicy:
    """Where and how often a trajectory checkpoints.

    ``every`` is in units of simulated time. ``halt_after`` raises
    :class:`~monitored_fermions.exceptions.TrajectoryInterrupted` after that
    many checkpoints have been written, which is how tests emulate a crash.
    """

    def __init__(self, path, every: float, halt_after: int | None = None):
        self.path = Path(path)
        self.every = float(every)
        self.halt_after = halt_after
        self.written = 0

    @staticmethod
    def cadence(t_max: float) -> float:
        return max(1.0, t_max / 10.0)

    def exists(self) -> bool:
        return self.path.exists()

    def load(self):
        return read_checkpoint(self.path)

    def save(self, U, **kw):
        write_checkpoint(self.path, U, **kw)
        self.written += 1
        if self.halt_after is not None and self.written >= self.halt_after:
            raise TrajectoryInterrupted(f"halted after {self.written} checkpoints")

    def clear(self):
        if self.path.exists():
            self.path.unlink()
