"""Slot geometry and transmission start times for the bitmap MAC protocol.

All times are in seconds. ``duty_factor`` is the start-to-start spacing, in
multiples of the previous airtime, that keeps a transmitter at a 1% duty cycle.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class TimingConfig:
    d_ed: float
    d_gw: float
    d_bitmap: float
    gap: float = 30e-9
    delta_max: float = 0.0
    nmaxslots: int = 1000
    duty_factor: float = 100.0

    def __post_init__(self) -> None:
        if min(self.d_ed, self.d_gw, self.d_bitmap) <= 0:
            raise ValueError("airtimes must be positive")
        if not 0 <= self.delta_max < 1:
            raise ValueError("delta_max must be in [0, 1)")
        if self.nmaxslots < 1:
            raise ValueError("nmaxslots must be >= 1")
        if self.gap < 0:
            raise ValueError("gap must be non-negative")
        if self.duty_factor < 1:
            raise ValueError("duty_factor must be >= 1")


def first_gateway_start(t0: float, cfg: TimingConfig) -> float:
    if t0 < 0:
        raise ValueError("t0 must be non-negative")
    return t0 + cfg.d_ed


def bitmap_start(slot_start: float, device_index: int, cfg: TimingConfig) -> float:
    """Start of the ``device_index``-th bitmap (1-based) in a slot."""
    if device_index < 1:
        raise ValueError("device_index is 1-based")
    return slot_start + (device_index - 1) * (cfg.d_bitmap + cfg.gap)


def guard_satisfied(t_prev: float, d_prev: float, t_next: float, cfg: TimingConfig) -> bool:
    return (t_prev + d_prev) * (1 + cfg.delta_max) <= t_next * (1 - cfg.delta_max)


def slot_duration(x: int, cfg: TimingConfig) -> float:
    if x < 1:
        raise ValueError("x must be >= 1")
    return max(cfg.d_ed + cfg.d_gw, cfg.d_bitmap * x + cfg.gap * (x - 1) + cfg.d_gw)


def subsequent_bitmap_start(
    t_prev_bitmap: float, d_prev_bitmap: float, t_gw: float, cfg: TimingConfig
) -> float:
    """Earliest start for a device's next bitmap.

    Both the device (after its last uplink) and the gateway (after its last
    guess frame at ``t_gw``) must respect the duty cycle.
    """
    return max(t_prev_bitmap + cfg.duty_factor * d_prev_bitmap, t_gw + cfg.duty_factor * cfg.d_gw)


def frame_retransmission_start(t_prev_frame: float, cfg: TimingConfig) -> float:
    if t_prev_frame < 0:
        raise ValueError("t_prev_frame must be non-negative")
    return t_prev_frame + cfg.duty_factor * cfg.d_ed


def bitmap_frame_collision(y: int, cfg: TimingConfig) -> bool:
    """True when a data frame is long enough to cover all ``y`` bitmaps of a slot."""
    if y < 1:
        raise ValueError("y must be >= 1")
    return cfg.d_ed >= y * cfg.d_bitmap + (y - 1) * cfg.gap


def last_slot_start(cfg: TimingConfig, x: int) -> float:
    return slot_duration(x, cfg) * (cfg.nmaxslots - 1)
