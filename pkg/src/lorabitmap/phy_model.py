"""Symbol-level LoRa model: frames, superposition of synchronized frames, airtime."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Sequence

# Fixed part of the preamble that is not configurable (sync word + SFD).
PREAMBLE_TAIL_SYMBOLS = 4.25


class PayloadModel(str, Enum):
    SCALED = "paper"  # symbol count scaled linearly from payload bytes
    SEMTECH = "semtech"


@dataclass(frozen=True)
class SfParams:
    sf: int = 12
    bw: float = 125_000.0
    n_preamble: int = 10
    payload_model: PayloadModel = PayloadModel.SCALED

    def __post_init__(self) -> None:
        if not 7 <= self.sf <= 12:
            raise ValueError(f"spreading factor must be in 7..12, got {self.sf}")
        if self.bw <= 0:
            raise ValueError("bandwidth must be positive")
        if self.n_preamble < 0:
            raise ValueError("preamble length must be non-negative")
        object.__setattr__(self, "payload_model", PayloadModel(self.payload_model))

    @property
    def alphabet_size(self) -> int:
        return 1 << self.sf


@dataclass(frozen=True)
class Frame:
    ed_id: int
    symbols: tuple[int, ...]
    payload_bytes: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "symbols", tuple(self.symbols))
        if not self.symbols:
            raise ValueError("a frame needs at least one symbol")
        if any(s < 0 for s in self.symbols):
            raise ValueError("symbol values must be non-negative")

    def __len__(self) -> int:
        return len(self.symbols)

    def check_alphabet(self, p: SfParams) -> None:
        if any(s >= p.alphabet_size for s in self.symbols):
            raise ValueError(f"symbol out of range for SF{p.sf}")


@dataclass(frozen=True)
class SuperposedObservation:
    """What the gateway extracts from a synchronized collision: one symbol set per position."""

    positions: tuple[frozenset[int], ...]
    n_devices: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "positions", tuple(frozenset(s) for s in self.positions))
        for j, s in enumerate(self.positions):
            if not s:
                raise ValueError(f"position {j} has an empty symbol set")
            if len(s) > self.n_devices:
                raise ValueError(f"position {j} has more symbols than devices")

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class Bitmap:
    ed_id: int
    round: int
    bits: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "bits", tuple(self.bits))
        if self.round < 1:
            raise ValueError("bitmap rounds are numbered from 1")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("bitmap bits must be 0 or 1")


def symbol_duration(p: SfParams) -> float:
    return (1 << p.sf) / p.bw


def _scale_factor(sf: int) -> Fraction:
    # 1.5 symbols/byte at SF7 down to 1.0 at SF12, linear in between
    return Fraction(15 - (sf - 7), 10)


def payload_symbol_count(payload_bytes: int, p: SfParams) -> int:
    """Number of payload symbols needed for ``payload_bytes`` under ``p.payload_model``.

    The ``semtech`` model uses coding rate 4/5, CRC on, explicit header and no
    low-data-rate optimisation.
    """
    if payload_bytes < 1:
        raise ValueError("payload_bytes must be >= 1")
    if p.payload_model is PayloadModel.SCALED:
        return math.ceil(payload_bytes * _scale_factor(p.sf))
    cr, crc, implicit_header, ldro = 1, 1, 0, 0
    num = 8 * payload_bytes - 4 * p.sf + 28 + 16 * crc - 20 * implicit_header
    extra = math.ceil(num / (4 * (p.sf - 2 * ldro))) * (cr + 4)
    return 8 + max(extra, 0)


def time_on_air(n_payload_symbols: int, p: SfParams) -> float:
    if n_payload_symbols < 0:
        raise ValueError("symbol count must be non-negative")
    return (n_payload_symbols + p.n_preamble + PREAMBLE_TAIL_SYMBOLS) * symbol_duration(p)


def preamble_time(p: SfParams) -> float:
    return (p.n_preamble + PREAMBLE_TAIL_SYMBOLS) * symbol_duration(p)


def superpose(frames: Sequence[Frame]) -> SuperposedObservation:
    if not frames:
        raise ValueError("need at least one frame")
    length = len(frames[0])
    if any(len(f) != length for f in frames):
        raise ValueError("all superposed frames must have the same length")
    positions = tuple(frozenset(f.symbols[j] for f in frames) for j in range(length))
    return SuperposedObservation(positions, len(frames))


def make_bitmap(frame: Frame, guess: Sequence[int], round: int) -> Bitmap:
    """Per-position agreement of ``frame`` with the gateway's guessed symbols.

    ``guess`` may be a plain symbol sequence or anything with a ``symbols`` attribute.
    """
    symbols = getattr(guess, "symbols", guess)
    if len(symbols) != len(frame.symbols):
        raise ValueError("guess and frame lengths differ")
    bits = tuple(int(a == b) for a, b in zip(frame.symbols, symbols))
    return Bitmap(frame.ed_id, round, bits)


def bitmap_payload_bytes(frame_symbols: int) -> int:
    """A bitmap carries one bit per frame symbol."""
    return math.ceil(frame_symbols / 8)


def data_frame_airtime(payload_bytes: int, p: SfParams) -> float:
    return time_on_air(payload_symbol_count(payload_bytes, p), p)


def bitmap_airtime(frame_symbols: int, p: SfParams) -> float:
    return time_on_air(payload_symbol_count(bitmap_payload_bytes(frame_symbols), p), p)


def gateway_frame_airtime(frame_symbols: int, p: SfParams) -> float:
    # guessed symbols plus one symbol carrying the reply order
    return time_on_air(frame_symbols + 1, p)
