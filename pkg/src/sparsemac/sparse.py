"""Binary-mask compression and the zero-skipping operand pipeline.

A compressed vector is a zero-free payload plus a binary occupancy mask: bit
i set means logical element i is non-zero and the next payload entry belongs
there.  Tensors are compressed row-wise along their lowest-varying axis (W
for NCHW activations, S for KCRS weights), rows ordered by the remaining
axes row-major, so activations linearize N-major, then C, then H.

Before a dot product the two masks are combined: the output mask is the AND
of the operand masks, and each operand's filter mask (operand XOR output)
flags its "dangling" non-zeros, elements whose partner at the same logical
index is zero.  A sequential scan turns each payload into a same-length
vector with the dangling entries zeroed, and a zero-collapsing pass removes
them, leaving two aligned zero-free sequences that pair exactly the indices
where both inputs are non-zero.  Multiply-accumulate over those pairs equals
the dense dot product bit for bit.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .fixedpoint import (
    FixedPointValue,
    Lfsr,
    QFormat,
    SaturationCounter,
    WideAccumulator,
    round_nearest,
    round_stochastic,
    saturate_raw,
)

__all__ = [
    "BinaryMask",
    "MaskedVector",
    "MaskedTensor",
    "AlignedPair",
    "compress",
    "decompress",
    "compression_ratio",
    "generate_masks",
    "filter_dangling",
    "collapse_zeros",
    "align",
    "sparse_dot",
]

_MAGIC = b"SMMT"
_VERSION = 1


class BinaryMask:
    """Bit-sequence marking the non-zero positions of a compressed vector."""

    __slots__ = ("bits",)

    def __init__(self, bits):
        self.bits = np.asarray(bits, dtype=bool)
        if self.bits.ndim != 1:
            raise ValueError("mask must be one-dimensional")

    def __len__(self):
        return self.bits.size

    def popcount(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __and__(self, other: "BinaryMask") -> "BinaryMask":
        return BinaryMask(self.bits & other.bits)

    def __or__(self, other: "BinaryMask") -> "BinaryMask":
        return BinaryMask(self.bits | other.bits)

    def __xor__(self, other: "BinaryMask") -> "BinaryMask":
        return BinaryMask(self.bits ^ other.bits)

    def __eq__(self, other):
        return isinstance(other, BinaryMask) and np.array_equal(self.bits, other.bits)

    def __repr__(self):
        return "BinaryMask(%s)" % "".join("1" if b else "0" for b in self.bits)


@dataclass(frozen=True)
class MaskedVector:
    """Zero-free payload (raw integers) plus its occupancy mask."""

    mask: BinaryMask
    payload: np.ndarray  # int64 raw values, all non-zero, in set-bit order
    fmt: QFormat

    def __post_init__(self):
        object.__setattr__(self, "payload", np.asarray(self.payload, dtype=np.int64))
        if self.payload.ndim != 1:
            raise ValueError("payload must be one-dimensional")
        if self.mask.popcount() != self.payload.size:
            raise ValueError(
                f"mask popcount {self.mask.popcount()} != payload length {self.payload.size}"
            )
        if np.any(self.payload == 0):
            raise ValueError("payload must be zero-free")

    @property
    def logical_length(self) -> int:
        return len(self.mask)

    @property
    def values(self) -> list[FixedPointValue]:
        return [FixedPointValue(int(r), self.fmt) for r in self.payload]


@dataclass(frozen=True)
class AlignedPair:
    """Zero-free activation/weight sequences pairing common non-zero indices."""

    activations: np.ndarray
    weights: np.ndarray
    out_mask: BinaryMask
    fmt: QFormat

    def __post_init__(self):
        object.__setattr__(self, "activations", np.asarray(self.activations, dtype=np.int64))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.int64))
        n = self.out_mask.popcount()
        if self.activations.size != n or self.weights.size != n:
            raise ValueError("aligned sequences must have length == popcount(out_mask)")


def _as_raw(dense, fmt: QFormat | None):
    """Accept either raw int arrays (with fmt) or FixedPointValue sequences."""
    if isinstance(dense, np.ndarray):
        if fmt is None:
            raise ValueError("fmt required for raw arrays")
        return np.asarray(dense, dtype=np.int64), fmt
    dense = list(dense)
    if dense and isinstance(dense[0], FixedPointValue):
        fmt = dense[0].fmt
        return np.array([v.raw for v in dense], dtype=np.int64), fmt
    if fmt is None:
        raise ValueError("fmt required for raw sequences")
    return np.array(dense, dtype=np.int64), fmt


def compress(dense, fmt: QFormat | None = None) -> MaskedVector:
    """Mask bit i = 1 iff dense[i] != 0; payload keeps the non-zeros in order."""
    raw, fmt = _as_raw(dense, fmt)
    mask = raw != 0
    return MaskedVector(BinaryMask(mask), raw[mask], fmt)


def decompress(mv: MaskedVector) -> np.ndarray:
    """Exact inverse of `compress`; returns the dense raw vector."""
    dense = np.zeros(mv.logical_length, dtype=np.int64)
    dense[mv.mask.bits] = mv.payload
    return dense


def compression_ratio(mv: MaskedVector, element_bits: int) -> float:
    """Dense bits over (payload bits + one mask bit per logical element)."""
    if element_bits <= 0:
        raise ValueError("element_bits must be positive")
    length = mv.logical_length
    return (length * element_bits) / (mv.payload.size * element_bits + length)


def generate_masks(act_mask: BinaryMask, wt_mask: BinaryMask):
    """Output mask = AND of the operand masks; filters = operand XOR output."""
    if len(act_mask) != len(wt_mask):
        raise ValueError(f"mask length mismatch: {len(act_mask)} vs {len(wt_mask)}")
    out = act_mask & wt_mask
    return out, act_mask ^ out, wt_mask ^ out


def filter_dangling(payload, out_mask: BinaryMask, filter_mask: BinaryMask) -> np.ndarray:
    """Sequential scan replacing dangling payload entries with zeros.

    Walks the masks once; an output-mask bit passes the current payload
    element through, a filter-mask bit blocks it (emits 0), and positions
    where both are clear were never stored.  Output length equals the
    payload length.
    """
    payload = np.asarray(payload, dtype=np.int64)
    if len(out_mask) != len(filter_mask):
        raise ValueError("mask length mismatch")
    if np.any(out_mask.bits & filter_mask.bits):
        raise ValueError("out_mask and filter_mask must be disjoint")
    n_set = int(np.count_nonzero(out_mask.bits | filter_mask.bits))
    if payload.size != n_set:
        raise ValueError(f"payload length {payload.size} != popcount(out|filter) {n_set}")

    out_data = np.zeros(payload.size, dtype=np.int64)
    data_pointer = 0
    for mask_pointer in range(len(out_mask)):
        if out_mask.bits[mask_pointer]:
            out_data[data_pointer] = payload[data_pointer]
            data_pointer += 1
        elif filter_mask.bits[mask_pointer]:
            out_data[data_pointer] = 0
            data_pointer += 1
    return out_data


def collapse_zeros(data) -> np.ndarray:
    """Shift out the zeros, preserving order of the survivors."""
    data = np.asarray(data, dtype=np.int64)
    return data[data != 0]


def align(act: MaskedVector, wt: MaskedVector) -> AlignedPair:
    """Full pre-compute pipeline: mask generation, dangling filter, collapse."""
    if act.logical_length != wt.logical_length:
        raise ValueError("operands must have equal logical lengths")
    out_mask, act_filter, wt_filter = generate_masks(act.mask, wt.mask)
    a = collapse_zeros(filter_dangling(act.payload, out_mask, act_filter))
    w = collapse_zeros(filter_dangling(wt.payload, out_mask, wt_filter))
    return AlignedPair(a, w, out_mask, act.fmt)


def sparse_dot(
    pair: AlignedPair,
    mode: str = "nearest",
    rng: Lfsr | None = None,
    counter: SaturationCounter | None = None,
) -> tuple[FixedPointValue, Lfsr | None]:
    """MAC over the aligned pair, one rounding at the end.

    Products and the running sum use the wide format; the sum is exact and
    clamped once at the wide boundary, then rounded to narrow.  Skipping the
    zero terms of the dense product cannot change an exact integer sum, so
    this is bit-identical to the dense dot under the same rounding draw.
    """
    fmt = pair.fmt
    total = int(np.sum(pair.activations.astype(object) * pair.weights.astype(object))) if pair.activations.size else 0
    if total > fmt.wide_raw_max:
        if counter is not None:
            counter.add()
        total = fmt.wide_raw_max
    elif total < fmt.wide_raw_min:
        if counter is not None:
            counter.add()
        total = fmt.wide_raw_min
    wide = WideAccumulator(total, fmt)
    if mode == "nearest":
        return round_nearest(wide, counter), rng
    if mode == "stochastic":
        if rng is None:
            raise ValueError("stochastic mode needs an rng")
        value, rng = round_stochastic(wide, rng, counter)
        return value, rng
    raise ValueError(f"unknown rounding mode {mode!r}")


# ---------------------------------------------------------------------------
# tensors
# ---------------------------------------------------------------------------

class MaskedTensor:
    """Row-compressed tensor: per-row masks plus one concatenated payload.

    Rows run along the last axis (length `row_len`); row r of the 2D views
    corresponds to the r-th slice of the tensor flattened over the leading
    axes in row-major order.
    """

    def __init__(self, shape, fmt: QFormat, mask2d: np.ndarray, payload: np.ndarray):
        self.shape = tuple(int(d) for d in shape)
        self.fmt = fmt
        self.mask2d = np.asarray(mask2d, dtype=bool)
        self.payload = np.asarray(payload, dtype=np.int64)
        n_rows = int(np.prod(self.shape[:-1])) if len(self.shape) > 1 else 1
        row_len = self.shape[-1]
        if self.mask2d.shape != (n_rows, row_len):
            raise ValueError(f"mask shape {self.mask2d.shape} != ({n_rows}, {row_len})")
        counts = self.mask2d.sum(axis=1)
        if int(counts.sum()) != self.payload.size:
            raise ValueError("payload size does not match mask popcounts")
        self.row_starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self._dense = None

    # construction ---------------------------------------------------------

    @classmethod
    def from_dense(cls, dense_raw: np.ndarray, fmt: QFormat) -> "MaskedTensor":
        dense_raw = np.asarray(dense_raw, dtype=np.int64)
        flat = dense_raw.reshape(-1, dense_raw.shape[-1]) if dense_raw.ndim > 1 else dense_raw.reshape(1, -1)
        mask2d = flat != 0
        mt = cls(dense_raw.shape, fmt, mask2d, flat[mask2d])
        mt._dense = dense_raw
        return mt

    @classmethod
    def from_real(cls, values: np.ndarray, fmt: QFormat, mode: str = "nearest",
                  seed: int = 0, counter_base: int = 0) -> "MaskedTensor":
        from .fixedpoint import quantize_real_raw

        raw, _ = quantize_real_raw(np.asarray(values, dtype=np.float64), fmt, mode, seed, counter_base)
        return cls.from_dense(raw, fmt)

    # views ------------------------------------------------------------------

    def to_dense(self) -> np.ndarray:
        if self._dense is None:
            flat = np.zeros(self.mask2d.shape, dtype=np.int64)
            flat[self.mask2d] = self.payload
            self._dense = flat.reshape(self.shape)
        return self._dense

    def to_real(self) -> np.ndarray:
        return self.to_dense().astype(np.float64) * self.fmt.eps

    @property
    def n_rows(self) -> int:
        return self.mask2d.shape[0]

    @property
    def row_len(self) -> int:
        return self.mask2d.shape[1]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def nnz(self) -> int:
        return int(self.payload.size)

    @property
    def density(self) -> float:
        return self.nnz / self.size if self.size else 0.0

    def row(self, r: int) -> MaskedVector:
        lo, hi = self.row_starts[r], self.row_starts[r + 1]
        return MaskedVector(BinaryMask(self.mask2d[r]), self.payload[lo:hi], self.fmt)

    def rows(self):
        for r in range(self.n_rows):
            yield self.row(r)

    # serialization ----------------------------------------------------------
    #
    # little-endian layout:
    #   magic "SMMT", version u16, il u8, fl u8, ndim u8, dims u32[ndim],
    #   row_len u32, n_rows u32
    # then per row: ceil(row_len/8) mask bytes (LSB-first within each byte),
    # followed by popcount payload values as i32 two's complement.

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<HBBB", _VERSION, self.fmt.il, self.fmt.fl, len(self.shape)))
        buf.write(struct.pack(f"<{len(self.shape)}I", *self.shape))
        buf.write(struct.pack("<II", self.row_len, self.n_rows))
        for r in range(self.n_rows):
            buf.write(np.packbits(self.mask2d[r], bitorder="little").tobytes())
            lo, hi = self.row_starts[r], self.row_starts[r + 1]
            buf.write(self.payload[lo:hi].astype("<i4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MaskedTensor":
        buf = io.BytesIO(blob)
        if buf.read(4) != _MAGIC:
            raise ValueError("bad magic")
        version, il, fl, ndim = struct.unpack("<HBBB", buf.read(5))
        if version != _VERSION:
            raise ValueError(f"unsupported version {version}")
        shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
        row_len, n_rows = struct.unpack("<II", buf.read(8))
        fmt = QFormat(il, fl)
        mask_bytes = (row_len + 7) // 8
        mask2d = np.zeros((n_rows, row_len), dtype=bool)
        chunks = []
        for r in range(n_rows):
            row_mask = np.unpackbits(
                np.frombuffer(buf.read(mask_bytes), dtype=np.uint8), bitorder="little"
            )[:row_len].astype(bool)
            mask2d[r] = row_mask
            n = int(row_mask.sum())
            chunks.append(np.frombuffer(buf.read(4 * n), dtype="<i4").astype(np.int64))
        payload = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
        return cls(shape, fmt, mask2d, payload)

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "MaskedTensor":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())

    def __eq__(self, other):
        return (
            isinstance(other, MaskedTensor)
            and self.shape == other.shape
            and self.fmt == other.fmt
            and np.array_equal(self.mask2d, other.mask2d)
            and np.array_equal(self.payload, other.payload)
        )
