"""The FEA1 feature archive codec.

The byte layout is a compatibility contract with the lattice engine
that consumes these archives, so it is fixed: little-endian throughout,
magic ``FEA1``, version, record count, then per record a
length-prefixed utf-8 utterance id, frame count, dimension, frame
shift, and float32 row-major data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"FEA1"
VERSION = 1


class CorruptArchive(ValueError):
    """Archive bytes do not parse: bad magic, bad version, or truncation."""


class DuplicateUttId(ValueError):
    """Two matrices in one archive share an utterance id."""


@dataclass
class FeatureMatrix:
    """A (T, dim) float32 matrix of per-frame vectors for one utterance."""

    data: np.ndarray
    frame_shift: float
    utt_id: str = ""

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValueError("feature data must be a (T, dim) matrix with T >= 1")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature data must be finite")
        if self.frame_shift <= 0:
            raise ValueError("frame_shift must be positive")


def write_fea(feats_list, path) -> None:
    """Write matrices to a FEA1 archive; values are stored as float32."""
    seen: set[str] = set()
    for fm in feats_list:
        if fm.utt_id in seen:
            raise DuplicateUttId(f"duplicate utterance id {fm.utt_id!r}")
        seen.add(fm.utt_id)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(feats_list)))
        for fm in feats_list:
            ident = fm.utt_id.encode("utf-8")
            if len(ident) > 0xFFFF:
                raise ValueError("utterance id longer than 65535 bytes")
            t, d = fm.data.shape
            f.write(struct.pack("<H", len(ident)))
            f.write(ident)
            f.write(struct.pack("<IIf", t, d, fm.frame_shift))
            f.write(np.ascontiguousarray(fm.data, dtype="<f4").tobytes())


def read_fea(path) -> list[FeatureMatrix]:
    """Read back every matrix in a FEA1 archive, in file order."""
    with open(path, "rb") as f:
        blob = f.read()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CorruptArchive(f"truncated archive: needed {n} bytes at {pos}")
        out = blob[pos : pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise CorruptArchive("bad magic")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CorruptArchive(f"unsupported version {version}")
    out: list[FeatureMatrix] = []
    seen: set[str] = set()
    for _ in range(count):
        (id_len,) = struct.unpack("<H", take(2))
        utt_id = take(id_len).decode("utf-8")
        t, d, frame_shift = struct.unpack("<IIf", take(12))
        data = np.frombuffer(take(4 * t * d), dtype="<f4").reshape(t, d)
        if utt_id in seen:
            raise DuplicateUttId(f"duplicate utterance id {utt_id!r}")
        seen.add(utt_id)
        out.append(FeatureMatrix(data, float(frame_shift), utt_id))
    if pos != len(blob):
        raise CorruptArchive(f"{len(blob) - pos} trailing bytes after last record")
    return out
