"""Binary coverage matrix: which half-sphere samples each candidate view covers.

A sample direction ``u`` is covered by a view whose source-to-VOI direction is
``d`` when ``|d . u| < sin(delta_gamma)``, i.e. ``u`` is within ``delta_gamma``
of being a normal of a plane containing the ray.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument
from .geometry import SphereSampling, ViewCandidate, Voi, detector_hit, view_direction

MAGIC = b"CTCOVMAT"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class CompletenessConfig:
    delta_gamma_rad: float
    sin_delta_gamma: float = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.delta_gamma_rad < math.pi / 2):
            raise InvalidArgument("delta_gamma_rad must lie in (0, pi/2)")
        object.__setattr__(self, "sin_delta_gamma", math.sin(self.delta_gamma_rad))


def n_words(n_bits: int) -> int:
    return (n_bits + 63) // 64


def pack_bits(mask) -> np.ndarray:
    """Pack a boolean vector into little-endian uint64 words (bit i of the set = sample i)."""
    mask = np.asarray(mask, dtype=bool)
    nw = n_words(mask.size)
    padded = np.zeros(nw * 64, dtype=bool)
    padded[: mask.size] = mask
    return np.packbits(padded, bitorder="little").view("<u8").astype(np.uint64)


def unpack_bits(words: np.ndarray, n_bits: int) -> np.ndarray:
    w = np.ascontiguousarray(words, dtype="<u8")
    return np.unpackbits(w.view(np.uint8), bitorder="little", axis=-1)[..., :n_bits].astype(bool)


def words_to_int(words: np.ndarray) -> int:
    return int.from_bytes(np.ascontiguousarray(words, dtype="<u8").tobytes(), "little")


@dataclass(frozen=True, eq=False)
class CoverageMatrix:
    """Candidate x sample bit matrix stored as rows of 64-bit words.

    ``voi_offsets[j]`` is the first column belonging to VOI ``j``.
    """

    n_candidates: int
    n_samples: int
    words: np.ndarray  # (n_candidates, n_words) uint64
    voi_offsets: tuple = (0,)

    def __post_init__(self):
        if self.words.shape != (self.n_candidates, n_words(self.n_samples)):
            raise InvalidArgument("word array shape does not match matrix dimensions")
        offs = tuple(int(o) for o in self.voi_offsets)
        if not offs or offs[0] != 0 or any(b <= a for a, b in zip(offs, offs[1:])):
            raise InvalidArgument("voi_offsets must start at 0 and strictly increase")
        if offs[-1] >= self.n_samples and self.n_samples > 0:
            raise InvalidArgument("voi_offsets exceed the sample count")
        object.__setattr__(self, "voi_offsets", offs)
        self.words.setflags(write=False)

    @classmethod
    def from_dense(cls, dense, voi_offsets=(0,)) -> "CoverageMatrix":
        dense = np.atleast_2d(np.asarray(dense, dtype=bool))
        n_c, n_s = dense.shape
        words = np.zeros((n_c, n_words(n_s)), dtype=np.uint64)
        for i in range(n_c):
            words[i] = pack_bits(dense[i])
        return cls(n_c, n_s, words, tuple(voi_offsets))

    def to_dense(self) -> np.ndarray:
        return unpack_bits(self.words, self.n_samples)

    def row_ints(self) -> list[int]:
        """Rows as Python integers (bit i = sample i)."""
        return [words_to_int(r) for r in self.words]

    def row_counts(self) -> np.ndarray:
        return np.bitwise_count(self.words).sum(axis=1).astype(np.int64)

    def take(self, rows: Sequence[int]) -> "CoverageMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        return CoverageMatrix(len(rows), self.n_samples, self.words[rows].copy(), self.voi_offsets)


def coverage_mask(view: ViewCandidate, voi: Voi, sampling: SphereSampling, cfg: CompletenessConfig) -> np.ndarray:
    """Boolean coverage of one VOI's samples by one view."""
    if sampling.count == 0:
        raise InvalidArgument("empty sphere sampling")
    d = view_direction(view, voi).as_array()
    if not detector_hit(view, voi.center_array):
        return np.zeros(sampling.count, dtype=bool)
    return np.abs(sampling.points @ d) < cfg.sin_delta_gamma


def coverage_row(view: ViewCandidate, voi: Voi, sampling: SphereSampling, cfg: CompletenessConfig) -> np.ndarray:
    """Bitset row (uint64 words) for one view and one VOI."""
    return pack_bits(coverage_mask(view, voi, sampling, cfg))


def build_coverage_matrix(
    views: Sequence[ViewCandidate],
    vois: Sequence[Voi],
    samplings: Sequence[SphereSampling],
    cfg: CompletenessConfig,
) -> CoverageMatrix:
    if len(vois) != len(samplings) or not vois:
        raise InvalidArgument("need exactly one sampling per VOI")
    for voi, s in zip(vois, samplings):
        if s.voi_id != voi.id:
            raise InvalidArgument(f"sampling for {s.voi_id!r} paired with VOI {voi.id!r}")
    offsets = np.cumsum([0] + [s.count for s in samplings])
    n_s = int(offsets[-1])
    dense = np.zeros((len(views), n_s), dtype=bool)
    for i, view in enumerate(views):
        for j, (voi, s) in enumerate(zip(vois, samplings)):
            dense[i, offsets[j]:offsets[j + 1]] = coverage_mask(view, voi, s, cfg)
    return CoverageMatrix.from_dense(dense, tuple(int(o) for o in offsets[:-1]))


def coverage_of(selected: Iterable[int], matrix: CoverageMatrix) -> tuple[int, float]:
    """Samples covered by the union of the selected rows, and that count as a fraction."""
    sel = list(selected)
    for i in sel:
        if not (0 <= i < matrix.n_candidates):
            raise InvalidArgument(f"candidate index {i} out of range")
    if not sel or matrix.n_samples == 0:
        return 0, 0.0
    union = np.bitwise_or.reduce(matrix.words[sel], axis=0)
    count = int(np.bitwise_count(union).sum())
    return count, count / matrix.n_samples


# --- export -------------------------------------------------------------------

def to_bytes(matrix: CoverageMatrix) -> bytes:
    """Binary layout (little-endian): magic, u32 version, u64 n_candidates,
    u64 n_samples, u64 n_vois, n_vois x u64 offsets, then row-major uint64 words."""
    head = MAGIC + struct.pack("<IQQQ", FORMAT_VERSION, matrix.n_candidates, matrix.n_samples,
                               len(matrix.voi_offsets))
    head += struct.pack(f"<{len(matrix.voi_offsets)}Q", *matrix.voi_offsets)
    return head + np.ascontiguousarray(matrix.words, dtype="<u8").tobytes()


def from_bytes(data: bytes) -> CoverageMatrix:
    if data[:8] != MAGIC:
        raise InvalidArgument("not a coverage matrix file")
    version, n_c, n_s, n_v = struct.unpack_from("<IQQQ", data, 8)
    if version != FORMAT_VERSION:
        raise InvalidArgument(f"unsupported coverage format version {version}")
    pos = 8 + struct.calcsize("<IQQQ")
    offsets = struct.unpack_from(f"<{n_v}Q", data, pos)
    pos += 8 * n_v
    words = np.frombuffer(data, dtype="<u8", count=n_c * n_words(n_s), offset=pos)
    return CoverageMatrix(n_c, n_s, words.reshape(n_c, n_words(n_s)).astype(np.uint64), offsets)


def write_matrix(path, matrix: CoverageMatrix) -> None:
    from .io import atomic_write_bytes

    atomic_write_bytes(path, to_bytes(matrix))


def read_matrix(path) -> CoverageMatrix:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def write_matrix_csv(path, matrix: CoverageMatrix) -> None:
    """Dense 0/1 table, one row per candidate; meant for small instances."""
    import io as _io
    from .io import atomic_write_text

    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["candidate"] + [f"s{j}" for j in range(matrix.n_samples)])
    for i, row in enumerate(matrix.to_dense()):
        w.writerow([i] + row.astype(int).tolist())
    atomic_write_text(path, buf.getvalue())
