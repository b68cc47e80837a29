"""Reduced-precision fixed-point arithmetic with stochastic rounding.

Values are Q(IL,FL) scaled integers: IL integer bits (sign included), FL
fraction bits, so the quantization step is eps = 2**-FL and the stored raw
integer is value * 2**FL in two's complement of IL+FL bits.  Products and
running sums live in a widened format with 2*IL integer bits and 2*FL
fraction bits, which makes every product of two in-range narrow values
exactly representable.

Rounding back to the narrow format is either deterministic round-to-nearest
(ties away from the floor) or stochastic: round up with probability equal to
the sub-step residue divided by eps.  Randomness comes from a Fibonacci
linear-feedback shift register so that every draw is reproducible from the
seed.  For data-parallel kernels the per-element streams are derived from a
(seed, counter) pair via a splitmix64-style mixer; see `derive_lfsr_states`.

Scalar ops work on `FixedPointValue` / `WideAccumulator` wrappers holding
Python ints (arbitrary precision, no hidden overflow).  The `*_raw` helpers
are the vectorized equivalents on int64 numpy arrays and are bit-compatible
with the scalar path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "QFormat",
    "FixedPointValue",
    "WideAccumulator",
    "Lfsr",
    "SaturationCounter",
    "round_nearest",
    "round_stochastic",
    "multiply",
    "accumulate",
    "quantize_real",
    "lfsr_next",
    "mix64",
    "derive_lfsr_states",
    "lfsr_bits_vec",
    "saturate_raw",
    "round_nearest_raw",
    "round_stochastic_raw",
    "quantize_real_raw",
    "to_real",
]

# Default maximal-length polynomial: taps 32,22,2,1 (period 2**32 - 1).
LFSR_TAPS_32 = (32, 22, 2, 1)
# Downscaled 8-bit variant used by exhaustive period tests: taps 8,6,5,4.
LFSR_TAPS_8 = (8, 6, 5, 4)

_MIX_GAMMA = 0x9E3779B97F4A7C15
_MIX_M1 = 0xBF58476D1CE4E5B9
_MIX_M2 = 0x94D049BB133111EB
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class QFormat:
    """Q(IL,FL) layout. IL counts the sign bit, so the representable value
    range is [-2**(IL-1), 2**(IL-1) - 2**-FL]."""

    il: int
    fl: int

    def __post_init__(self):
        if self.il < 1 or self.fl < 1:
            raise ValueError(f"il and fl must be >= 1, got Q{self.il}.{self.fl}")
        if self.il + self.fl > 32:
            raise ValueError(f"il + fl must be <= 32, got {self.il + self.fl}")

    @property
    def width(self) -> int:
        return self.il + self.fl

    @property
    def wide_width(self) -> int:
        return 2 * (self.il + self.fl)

    @property
    def eps(self) -> float:
        return 2.0 ** (-self.fl)

    @property
    def raw_min(self) -> int:
        return -(1 << (self.width - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.width - 1)) - 1

    @property
    def wide_raw_min(self) -> int:
        return -(1 << (self.wide_width - 1))

    @property
    def wide_raw_max(self) -> int:
        return (1 << (self.wide_width - 1)) - 1

    @property
    def max_value(self) -> float:
        return self.raw_max * self.eps

    @property
    def min_value(self) -> float:
        return self.raw_min * self.eps


@dataclass(frozen=True)
class FixedPointValue:
    """Narrow Q(IL,FL) value: raw two's-complement integer of IL+FL bits."""

    raw: int
    fmt: QFormat

    def __post_init__(self):
        if not (self.fmt.raw_min <= self.raw <= self.fmt.raw_max):
            raise ValueError(f"raw {self.raw} out of range for Q{self.fmt.il}.{self.fmt.fl}")

    @property
    def value(self) -> float:
        return self.raw * self.fmt.eps

    def widen(self) -> "WideAccumulator":
        # Shifting left by fl aligns the narrow value in the 2*FL-fraction grid.
        return WideAccumulator(self.raw << self.fmt.fl, self.fmt)


@dataclass(frozen=True)
class WideAccumulator:
    """Product/sum register: 2*(IL+FL) bits with 2*FL fraction bits."""

    raw: int
    fmt: QFormat

    def __post_init__(self):
        if not (self.fmt.wide_raw_min <= self.raw <= self.fmt.wide_raw_max):
            raise ValueError(f"wide raw {self.raw} out of range for Q{self.fmt.il}.{self.fmt.fl}")

    @property
    def value(self) -> float:
        return self.raw * 2.0 ** (-2 * self.fmt.fl)


class SaturationCounter:
    """Mutable tally of silent range clamps. Ops take one optionally."""

    def __init__(self):
        self.count = 0

    def add(self, n: int = 1):
        self.count += n


@dataclass(frozen=True)
class Lfsr:
    """Fibonacci LFSR over a maximal-length polynomial.

    `state` is never zero.  One step shifts right; the feedback bit (XOR of
    the tap positions) enters at the MSB and the bit shifted out at the LSB
    is the output bit.  `next_bits` returns the first-drawn bit as the MSB
    of the result, and the advanced register, leaving `self` untouched.
    """

    state: int
    width: int = 32
    taps: tuple = LFSR_TAPS_32

    def __post_init__(self):
        mask = (1 << self.width) - 1
        if not (0 < self.state <= mask):
            raise ValueError(f"LFSR state must be a nonzero {self.width}-bit value")
        if max(self.taps) != self.width:
            raise ValueError("highest tap must equal the register width")

    def next_bits(self, nbits: int) -> tuple[int, "Lfsr"]:
        if not (1 <= nbits <= self.width):
            raise ValueError(f"nbits must be in [1, {self.width}], got {nbits}")
        s = self.state
        out = 0
        for _ in range(nbits):
            out = (out << 1) | (s & 1)
            fb = 0
            for t in self.taps:
                fb ^= s >> (self.width - t)  # tap t counts from the output end
            s = (s >> 1) | ((fb & 1) << (self.width - 1))
        return out, Lfsr(s, self.width, self.taps)


def lfsr_next(rng: Lfsr, nbits: int) -> tuple[int, Lfsr]:
    """Draw `nbits` pseudo-random bits; returns (bits, advanced rng)."""
    return rng.next_bits(nbits)


def mix64(*words: int) -> int:
    """splitmix64-style finalizer folded over the input words.

    Used to derive independent per-element LFSR seeds from a (seed, counter,
    ...) tuple.  Deterministic and stateless.
    """
    z = 0
    for w in words:
        z = (z + (w & _U64) + _MIX_GAMMA) & _U64
        z ^= z >> 30
        z = (z * _MIX_M1) & _U64
        z ^= z >> 27
        z = (z * _MIX_M2) & _U64
        z ^= z >> 31
    return z


def derive_lfsr_state(seed: int, counter: int) -> int:
    """Nonzero 32-bit LFSR register for stream `counter` of stream family `seed`."""
    s = mix64(seed, counter) & 0xFFFFFFFF
    return s if s != 0 else 0x5EED5EED


def derive_lfsr_states(seed: int, counters: np.ndarray) -> np.ndarray:
    """Vectorized `derive_lfsr_state`: uint32 array of nonzero registers."""
    with np.errstate(over="ignore"):
        z = np.zeros(counters.shape, dtype=np.uint64)
        for w in (np.uint64(seed & _U64), counters.astype(np.uint64)):
            z = z + w + np.uint64(_MIX_GAMMA)
            z ^= z >> np.uint64(30)
            z = z * np.uint64(_MIX_M1)
            z ^= z >> np.uint64(27)
            z = z * np.uint64(_MIX_M2)
            z ^= z >> np.uint64(31)
    s = (z & np.uint64(0xFFFFFFFF)).astype(np.uint32)
    s[s == 0] = np.uint32(0x5EED5EED)
    return s


def lfsr_bits_vec(states: np.ndarray, nbits: int, taps: tuple = LFSR_TAPS_32, width: int = 32) -> np.ndarray:
    """Step many LFSRs in lockstep, drawing `nbits` from each.

    Bit-compatible with `Lfsr.next_bits`: first-drawn bit lands in the MSB
    of each result.  Returns int64 values in [0, 2**nbits).
    """
    s = states.astype(np.uint32, copy=True)
    out = np.zeros(s.shape, dtype=np.int64)
    one = np.uint32(1)
    top = np.uint32(width - 1)
    for _ in range(nbits):
        out = (out << 1) | (s & one).astype(np.int64)
        fb = np.zeros_like(s)
        for t in taps:
            fb ^= s >> np.uint32(width - t)
        s = (s >> one) | ((fb & one) << top)
    return out


# ---------------------------------------------------------------------------
# scalar ops
# ---------------------------------------------------------------------------

def _saturate_narrow(raw: int, fmt: QFormat, counter: SaturationCounter | None) -> int:
    if raw > fmt.raw_max:
        if counter is not None:
            counter.add()
        return fmt.raw_max
    if raw < fmt.raw_min:
        if counter is not None:
            counter.add()
        return fmt.raw_min
    return raw


def round_nearest(x: WideAccumulator, counter: SaturationCounter | None = None) -> FixedPointValue:
    """Round to the nearest narrow multiple of eps, half residues upward.

    floor(x) here is the largest multiple of eps <= x; the result is that
    floor unless the residue reaches eps/2.  Saturates silently at the
    narrow range boundary.
    """
    fmt = x.fmt
    floor = x.raw >> fmt.fl  # arithmetic shift == floor toward -inf
    residue = x.raw & ((1 << fmt.fl) - 1)
    if residue >= 1 << (fmt.fl - 1):
        floor += 1
    return FixedPointValue(_saturate_narrow(floor, fmt, counter), fmt)


def round_stochastic(
    x: WideAccumulator,
    rng: Lfsr,
    counter: SaturationCounter | None = None,
) -> tuple[FixedPointValue, Lfsr]:
    """Stochastic rounding: round up with probability residue/eps.

    residue/eps has exactly FL bits in the wide format, so drawing u as FL
    fresh LFSR bits and rounding up iff u < residue realizes the up
    probability exactly.
    """
    fmt = x.fmt
    floor = x.raw >> fmt.fl
    residue = x.raw & ((1 << fmt.fl) - 1)
    u, rng = rng.next_bits(fmt.fl)
    if u < residue:
        floor += 1
    return FixedPointValue(_saturate_narrow(floor, fmt, counter), fmt), rng


def multiply(a: FixedPointValue, b: FixedPointValue) -> WideAccumulator:
    """Exact product; 2*(IL+FL) wide bits make overflow impossible."""
    if a.fmt != b.fmt:
        raise ValueError(f"format mismatch: Q{a.fmt.il}.{a.fmt.fl} vs Q{b.fmt.il}.{b.fmt.fl}")
    return WideAccumulator(a.raw * b.raw, a.fmt)


def accumulate(
    acc: WideAccumulator,
    p: WideAccumulator,
    counter: SaturationCounter | None = None,
) -> WideAccumulator:
    """Wide add, clamped at the wide range boundary.

    Unsaturated chains are exact integer sums, hence associative and
    order-independent.
    """
    if acc.fmt != p.fmt:
        raise ValueError("format mismatch in accumulate")
    fmt = acc.fmt
    raw = acc.raw + p.raw
    if raw > fmt.wide_raw_max:
        if counter is not None:
            counter.add()
        raw = fmt.wide_raw_max
    elif raw < fmt.wide_raw_min:
        if counter is not None:
            counter.add()
        raw = fmt.wide_raw_min
    return WideAccumulator(raw, fmt)


def quantize_real(
    v: float,
    fmt: QFormat,
    mode: str = "nearest",
    rng: Lfsr | None = None,
    counter: SaturationCounter | None = None,
) -> tuple[FixedPointValue, Lfsr | None]:
    """Quantize a real number into the narrow format.

    Floats are dyadic rationals, so the residue below eps is computed
    exactly via Fraction.  Stochastic mode draws FL bits u and rounds up iff
    u/2**FL < residue, i.e. with probability ceil(residue * 2**FL) / 2**FL.
    """
    if isinstance(v, float) and (math.isnan(v) or math.isinf(v)):
        raise ValueError(f"cannot quantize {v}")
    scaled = Fraction(v) * (1 << fmt.fl)
    floor = math.floor(scaled)
    residue = scaled - floor  # exact rational in [0, 1)
    if mode == "nearest":
        if residue >= Fraction(1, 2):
            floor += 1
    elif mode == "stochastic":
        if rng is None:
            raise ValueError("stochastic mode needs an rng")
        u, rng = rng.next_bits(fmt.fl)
        if Fraction(u, 1 << fmt.fl) < residue:
            floor += 1
    else:
        raise ValueError(f"unknown rounding mode {mode!r}")
    return FixedPointValue(_saturate_narrow(floor, fmt, counter), fmt), rng


# ---------------------------------------------------------------------------
# vectorized raw helpers (int64 arrays of raw integers)
# ---------------------------------------------------------------------------

def saturate_raw(raw: np.ndarray, lo: int, hi: int) -> tuple[np.ndarray, int]:
    """Clip raw integers into [lo, hi]; returns (clipped, clamp count)."""
    n = int(np.count_nonzero((raw < lo) | (raw > hi)))
    if n:
        raw = np.clip(raw, lo, hi)
    return raw, n


def round_nearest_raw(wide: np.ndarray, fmt: QFormat) -> tuple[np.ndarray, int]:
    """Vectorized `round_nearest` on wide raw int64 arrays."""
    floor = wide >> fmt.fl
    residue = wide & ((1 << fmt.fl) - 1)
    out = floor + (residue >= (1 << (fmt.fl - 1)))
    return saturate_raw(out, fmt.raw_min, fmt.raw_max)


def round_stochastic_raw(
    wide: np.ndarray,
    fmt: QFormat,
    seed: int,
    counter_base: int = 0,
) -> tuple[np.ndarray, int]:
    """Vectorized stochastic rounding with counter-derived streams.

    Element i uses the LFSR seeded from (seed, counter_base + i), so results
    do not depend on evaluation order or array partitioning.
    """
    flat = np.ascontiguousarray(wide, dtype=np.int64).ravel()
    floor = flat >> fmt.fl
    residue = flat & ((1 << fmt.fl) - 1)
    counters = counter_base + np.arange(flat.size, dtype=np.int64)
    states = derive_lfsr_states(seed, counters)
    u = lfsr_bits_vec(states, fmt.fl)
    out = floor + (u < residue)
    out, sat = saturate_raw(out, fmt.raw_min, fmt.raw_max)
    return out.reshape(wide.shape), sat


def quantize_real_raw(
    values: np.ndarray,
    fmt: QFormat,
    mode: str = "nearest",
    seed: int = 0,
    counter_base: int = 0,
) -> tuple[np.ndarray, int]:
    """Quantize a float64 array to narrow raw integers.

    Exact as long as |v| * 2**(2*FL) stays under 2**52, which holds for
    every in-range Q(IL,FL) value with IL+FL <= 26 (and for the defaults).
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot quantize non-finite values")
    scaled = v * float(1 << fmt.fl)
    floor = np.floor(scaled)
    residue = scaled - floor
    if mode == "nearest":
        out = floor + (residue >= 0.5)
    elif mode == "stochastic":
        counters = counter_base + np.arange(v.size, dtype=np.int64)
        states = derive_lfsr_states(seed, counters)
        u = lfsr_bits_vec(states, fmt.fl).reshape(v.shape)
        out = floor + (u.astype(np.float64) < residue * float(1 << fmt.fl))
    else:
        raise ValueError(f"unknown rounding mode {mode!r}")
    out = out.astype(np.int64)
    return saturate_raw(out, fmt.raw_min, fmt.raw_max)


def to_real(raw: np.ndarray, fmt: QFormat) -> np.ndarray:
    """Dequantize narrow raw integers to float64."""
    return np.asarray(raw, dtype=np.float64) * fmt.eps
