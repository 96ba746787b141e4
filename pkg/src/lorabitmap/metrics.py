"""Per-device delay, energy and throughput, and the replication aggregate."""

from __future__ import annotations

import math
import statistics
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

from .phy_model import PREAMBLE_TAIL_SYMBOLS

if TYPE_CHECKING:
    from .simulator import DeviceOutcome, TransmissionRecord


class EnergyAccounting(str, Enum):
    WITH_PREAMBLE = "with-preamble"
    # bitmaps are charged for their payload symbols only; data frames keep full airtime
    PAYLOAD_ONLY = "payload-only"


@dataclass(frozen=True)
class EnergyConfig:
    p_cons_watts: float = 0.4
    p_tr_dbm: float = 14.0
    n_preamble: int = 10
    bw: float = 125_000.0
    accounting: EnergyAccounting = EnergyAccounting.WITH_PREAMBLE

    def __post_init__(self) -> None:
        if self.p_cons_watts <= 0:
            raise ValueError("p_cons_watts must be positive")
        object.__setattr__(self, "accounting", EnergyAccounting(self.accounting))


def delay(outcome: DeviceOutcome) -> Optional[float]:
    """Decoding time minus first send time; ``None`` for a lost frame."""
    if outcome.decode_time is None:
        return None
    return outcome.decode_time - outcome.first_send


def energy_per_bit(n_payload_symbols: int, payload_bytes: int, sf: int, ecfg: EnergyConfig) -> float:
    if payload_bytes <= 0:
        raise ValueError("payload_bytes must be positive")
    symbols = n_payload_symbols + ecfg.n_preamble + PREAMBLE_TAIL_SYMBOLS
    return ecfg.p_cons_watts * symbols * (1 << sf) / (8 * payload_bytes * ecfg.bw)


def device_energy(
    records: Iterable[TransmissionRecord],
    ecfg: EnergyConfig,
    sf: int,
    until: Optional[float] = None,
) -> float:
    """Transmit energy of one device's records starting before ``until``."""
    overhead = (ecfg.n_preamble + PREAMBLE_TAIL_SYMBOLS) * (1 << sf) / ecfg.bw
    airtime = 0.0
    for rec in records:
        if rec.kind not in ("data_frame", "bitmap"):
            continue
        if until is not None and rec.start >= until:
            continue
        d = rec.duration
        if rec.kind == "bitmap" and ecfg.accounting is EnergyAccounting.PAYLOAD_ONLY:
            d -= overhead
        airtime += d
    return ecfg.p_cons_watts * airtime


def throughput(outcome: DeviceOutcome, payload_bytes: int) -> float:
    d = delay(outcome)
    if d is None:
        return 0.0
    return 8 * payload_bytes / d


FIELDS = (
    "delay_s",
    "energy_j",
    "energy_per_bit_j",
    "throughput_bps",
    "frame_tx",
    "bitmap_tx",
    "loss_rate",
    "rounds",
)


@dataclass
class ReplicationSummary:
    """Device-averaged figures of one replication. ``delay_s`` is over delivered frames."""

    delay_s: Optional[float]
    energy_j: float
    energy_per_bit_j: Optional[float]
    throughput_bps: float
    frame_tx: float
    bitmap_tx: float
    loss_rate: float
    rounds: int


def summarize(outcomes: Sequence[DeviceOutcome], payload_bytes: int, rounds: int = 0) -> ReplicationSummary:
    delays = [d for d in map(delay, outcomes) if d is not None]
    delivered = [o for o in outcomes if o.decode_time is not None]
    n = len(outcomes)
    return ReplicationSummary(
        delay_s=statistics.fmean(delays) if delays else None,
        energy_j=statistics.fmean(o.energy_joules for o in outcomes),
        energy_per_bit_j=(
            statistics.fmean(o.energy_joules for o in delivered) / (8 * payload_bytes) if delivered else None
        ),
        throughput_bps=sum(throughput(o, payload_bytes) for o in outcomes) / n,
        frame_tx=sum(o.n_frame_tx for o in outcomes) / n,
        bitmap_tx=sum(o.n_bitmap_tx for o in outcomes) / n,
        loss_rate=(n - len(delivered)) / n,
        rounds=rounds,
    )


@dataclass
class AggregateReport:
    """Mean and sample standard deviation across replications.

    A std is ``None`` when fewer than two replications contribute.
    """

    replications: int
    mean: dict[str, Optional[float]] = field(default_factory=dict)
    std: dict[str, Optional[float]] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def aggregate(summaries: Sequence[ReplicationSummary], config: Optional[dict] = None) -> AggregateReport:
    report = AggregateReport(len(summaries), config=dict(config or {}))
    for name in FIELDS:
        values = [getattr(s, name) for s in summaries]
        values = [float(v) for v in values if v is not None]
        report.mean[name] = statistics.fmean(values) if values else None
        report.std[name] = statistics.stdev(values) if len(values) > 1 else None
    loss = report.mean["loss_rate"]
    assert loss is None or 0.0 <= loss <= 1.0
    return report


def standard_error(values: Sequence[float]) -> float:
    return statistics.stdev(values) / math.sqrt(len(values))
