"""Seeded discrete-event runs of the bitmap protocol and of the LoRaWAN baseline.

Every replication starts with ``n_devices`` end-devices transmitting in the
same slot at t = 0, so their frames collide completely. The two protocols then
differ only in how the collision is resolved:

* ``proposed``: the gateway broadcasts guess frames and solicited devices
  answer with bitmaps until every frame is decoded;
* ``lorawan``: colliding devices retransmit their whole frame in one of the
  next ``lorawan_window`` slots once every pending device of the collision has
  cleared its duty-cycle wait, up to ``lorawan_max_retx`` times.

Replication ``k`` draws from a generator seeded by
``numpy.random.SeedSequence(seed, spawn_key=(k,))`` so results do not depend
on execution order.
"""

from __future__ import annotations

import math
import random
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import decoder as dec
from .metrics import (
    AggregateReport,
    EnergyAccounting,
    EnergyConfig,
    ReplicationSummary,
    aggregate,
    device_energy,
    summarize,
)
from .phy_model import (
    Frame,
    SfParams,
    bitmap_airtime,
    gateway_frame_airtime,
    make_bitmap,
    payload_symbol_count,
    superpose,
    time_on_air,
)
from .mac_timing import (
    TimingConfig,
    bitmap_start,
    first_gateway_start,
    frame_retransmission_start,
    guard_satisfied,
    slot_duration,
    subsequent_bitmap_start,
)

GATEWAY = "gateway"
_EPS = 1e-9


class SimulationHorizonExceeded(RuntimeError):
    pass


class ScheduleError(RuntimeError):
    pass


class Protocol(str, Enum):
    PROPOSED = "proposed"
    LORAWAN = "lorawan"


@dataclass(frozen=True)
class Interferer:
    """A late data frame sent at the start of protocol slot ``slot``.

    Slots are counted as in the protocol timeline: slot 1 carries the initial
    collision and every later bitmap transmission opens the next slot.
    """

    slot: int
    device: int

    def __post_init__(self) -> None:
        if self.slot < 2:
            raise ValueError("the interferer must arrive after the initial collision slot")


@dataclass(frozen=True)
class Scenario:
    n_devices: int = 2
    sf_params: SfParams = field(default_factory=SfParams)
    payload_bytes: int = 30
    protocol: Protocol = Protocol.PROPOSED
    replications: int = 1000
    seed: int = 0
    interferer: Optional[Interferer] = None
    lorawan_window: int = 2
    lorawan_max_retx: int = 8
    guess: dec.Strategy = dec.Strategy.RANDOM_UNSENT
    gap: float = 30e-9
    delta_max: float = 0.0
    nmaxslots: int = 1000
    duty_factor: float = 100.0
    energy: EnergyConfig = field(default_factory=EnergyConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "guess", dec.Strategy(self.guess))
        if self.n_devices < 2:
            raise ValueError("n_devices must be >= 2 for a collision")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.lorawan_max_retx < 1:
            raise ValueError("lorawan_max_retx must be >= 1")
        if self.lorawan_window < 1:
            raise ValueError("lorawan_window must be >= 1")
        if self.payload_bytes < 1:
            raise ValueError("payload_bytes must be >= 1")
        if self.interferer is not None and 1 <= self.interferer.device <= self.n_devices:
            raise ValueError("the interferer needs a device id outside 1..n_devices")

    @property
    def frame_symbols(self) -> int:
        return payload_symbol_count(self.payload_bytes, self.sf_params)

    def timing(self, frame_symbols: Optional[int] = None) -> TimingConfig:
        n = self.frame_symbols if frame_symbols is None else frame_symbols
        p = self.sf_params
        return TimingConfig(
            d_ed=time_on_air(n, p),
            d_gw=gateway_frame_airtime(n, p),
            d_bitmap=bitmap_airtime(n, p),
            gap=self.gap,
            delta_max=self.delta_max,
            nmaxslots=self.nmaxslots,
            duty_factor=self.duty_factor,
        )

    def energy_config(self) -> EnergyConfig:
        return replace(self.energy, n_preamble=self.sf_params.n_preamble, bw=self.sf_params.bw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["protocol"] = self.protocol.value
        d["guess"] = self.guess.value
        d["sf_params"]["payload_model"] = self.sf_params.payload_model.value
        d["energy"]["accounting"] = self.energy.accounting.value
        return d


@dataclass(frozen=True)
class TransmissionRecord:
    device: int | str
    kind: str  # data_frame | bitmap | gateway_frame | beacon
    start: float
    duration: float
    slot: int
    outcome: str = "delivered"  # delivered | collided

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass
class DeviceOutcome:
    device: int
    first_send: float
    decode_time: Optional[float]
    n_frame_tx: int
    n_bitmap_tx: int
    energy_joules: float = 0.0

    @property
    def lost(self) -> bool:
        return self.decode_time is None


@dataclass
class RunResult:
    outcomes: list[DeviceOutcome]
    records: list[TransmissionRecord]
    rounds: int = 0
    max_set_size: int = 0
    decoder_bitmaps: dict[int, int] = field(default_factory=dict)
    guesses: list[dec.GuessFrame] = field(default_factory=list)


class _SlotGrid:
    def __init__(self, length: float, nmaxslots: int) -> None:
        self.length = length
        self.nmaxslots = nmaxslots

    def at_or_after(self, t: float) -> int:
        return self.check(max(0, math.ceil(t / self.length - _EPS)))

    def check(self, k: int) -> int:
        if k > self.nmaxslots - 1:
            raise SimulationHorizonExceeded(
                f"transmission needs slot {k + 1}, beyond the {self.nmaxslots}-slot horizon"
            )
        return k

    def start(self, k: int) -> float:
        return k * self.length


def replication_rng(seed: int, k: int) -> random.Random:
    state = np.random.SeedSequence(seed, spawn_key=(k,)).generate_state(2, dtype=np.uint64)
    return random.Random(int(state[0]) << 64 | int(state[1]))


def random_frames(scenario: Scenario, rng: random.Random) -> list[Frame]:
    n = scenario.frame_symbols
    top = scenario.sf_params.alphabet_size
    return [
        Frame(ed, tuple(rng.randrange(top) for _ in range(n)), scenario.payload_bytes)
        for ed in range(1, scenario.n_devices + 1)
    ]


def _finish_outcomes(
    outcomes: dict[int, DeviceOutcome], records: list[TransmissionRecord], scenario: Scenario
) -> list[DeviceOutcome]:
    ecfg = scenario.energy_config()
    by_dev: dict[int, list[TransmissionRecord]] = {d: [] for d in outcomes}
    for rec in records:
        if rec.device in by_dev:
            by_dev[rec.device].append(rec)
    for d, o in outcomes.items():
        o.energy_joules = device_energy(by_dev[d], ecfg, scenario.sf_params.sf, o.decode_time)
    return [outcomes[d] for d in sorted(outcomes)]


class _Interference:
    """Tracks the optional late frame and resolves its overlaps with the protocol traffic."""

    def __init__(self, late: Optional[Interferer], scenario: Scenario, cfg: TimingConfig, grid: _SlotGrid):
        self.late = late
        self.cfg = cfg
        self.grid = grid
        self.max_tx = scenario.lorawan_max_retx + 1
        self.pending: Optional[float] = None
        self.n_tx = 0
        self.records: list[TransmissionRecord] = []

    def arrive(self, logical_slot: int, slot_start: float) -> None:
        if self.late is not None and self.n_tx == 0 and self.pending is None and logical_slot == self.late.slot:
            self.pending = slot_start

    def _emit(self, outcome: str) -> None:
        start = self.pending
        k = round(start / self.grid.length)
        self.records.append(
            TransmissionRecord(self.late.device, "data_frame", start, self.cfg.d_ed, k + 1, outcome)
        )
        self.n_tx += 1
        self.pending = None
        if outcome == "collided" and self.n_tx < self.max_tx:
            nxt = frame_retransmission_start(start, self.cfg)
            self.pending = self.grid.start(self.grid.at_or_after(nxt))

    def overlaps(self, a: float, b: float) -> bool:
        """Settle the pending frame against channel activity on [a, b)."""
        if self.pending is None:
            return False
        end = self.pending + self.cfg.d_ed
        if end <= a:
            self._emit("delivered")
            return False
        if self.pending >= b:
            return False
        return True

    def collide(self) -> None:
        self._emit("collided")

    def flush(self) -> None:
        while self.pending is not None:
            self._emit("delivered")


def run_proposed(
    scenario: Scenario,
    rng: Optional[random.Random] = None,
    frames: Optional[Sequence[Frame]] = None,
    script: Sequence[Sequence[int]] = (),
) -> RunResult:
    if scenario.protocol is not Protocol.PROPOSED:
        raise ValueError("run_proposed needs a proposed-protocol scenario")
    rng = rng if rng is not None else replication_rng(scenario.seed, 0)
    if frames is None:
        frames = random_frames(scenario, rng)
        cfg = scenario.timing()
    else:
        if len(frames) != scenario.n_devices:
            raise ValueError("one frame per device is required")
        cfg = scenario.timing(len(frames[0]))
    x = scenario.n_devices
    grid = _SlotGrid(slot_duration(x, cfg), cfg.nmaxslots)
    interference = _Interference(scenario.interferer, scenario, cfg, grid)

    obs = superpose(frames)
    by_id = {f.ed_id: f for f in frames}
    ed_ids = sorted(by_id)
    state = dec.init_state(obs, ed_ids, script)

    records = [TransmissionRecord(ed, "data_frame", 0.0, cfg.d_ed, 1, "collided") for ed in ed_ids]
    last_uplink = {ed: (0.0, cfg.d_ed) for ed in ed_ids}
    outcomes = {ed: DeviceOutcome(ed, 0.0, None, 1, 0) for ed in ed_ids}
    decoder_bitmaps = {ed: 0 for ed in ed_ids}
    guesses: list[dec.GuessFrame] = []

    def mark_decoded(t: float) -> None:
        for ed in ed_ids:
            if outcomes[ed].decode_time is None and state.partials[ed].complete:
                outcomes[ed].decode_time = t

    if state.complete:
        # identical frames: the gateway simply received one clean frame
        records = [replace(r, outcome="delivered") for r in records]
        mark_decoded(cfg.d_ed)

    t_gw = first_gateway_start(0.0, cfg)
    logical_slot = 1
    bound = max(len(s) for s in obs.positions)
    while not state.complete:
        if state.round >= bound and scenario.guess is not dec.Strategy.SCRIPTED:
            raise RuntimeError("decoder exceeded its termination bound")
        guess = dec.next_guess(state, scenario.guess, rng)
        guesses.append(guess)
        if interference.overlaps(t_gw, t_gw + cfg.d_gw):
            interference.collide()
        records.append(TransmissionRecord(GATEWAY, "gateway_frame", t_gw, cfg.d_gw, round(t_gw / grid.length) + 1))

        to_send = list(guess.solicited)
        round_end = t_gw + cfg.d_gw
        while to_send:
            earliest = max(
                subsequent_bitmap_start(*last_uplink[ed], t_gw, cfg) for ed in to_send
            )
            k = grid.at_or_after(earliest)
            slot_start = grid.start(k)
            logical_slot += 1
            interference.arrive(logical_slot, slot_start)
            sent = []
            for pos, ed in enumerate(to_send, start=1):
                start = bitmap_start(slot_start, pos, cfg)
                if pos > 1 and not guard_satisfied(
                    sent[-1][1] - slot_start, cfg.d_bitmap, start - slot_start, cfg
                ):
                    raise ScheduleError("guard interval too short for the configured clock drift")
                sent.append((ed, start))
            block_end = sent[-1][1] + cfg.d_bitmap
            hit = interference.overlaps(slot_start, block_end)
            i_start = interference.pending
            retry = []
            for ed, start in sent:
                collided = hit and start < i_start + cfg.d_ed and i_start < start + cfg.d_bitmap
                records.append(
                    TransmissionRecord(ed, "bitmap", start, cfg.d_bitmap, k + 1, "collided" if collided else "delivered")
                )
                last_uplink[ed] = (start, cfg.d_bitmap)
                outcomes[ed].n_bitmap_tx += 1
                if collided:
                    retry.append(ed)
                    continue
                decoder_bitmaps[ed] += 1
                dec.apply_bitmap(state, make_bitmap(by_id[ed], guess.symbols, guess.round), guess)
                mark_decoded(start + cfg.d_bitmap)
            if hit:
                interference.collide()
            round_end = block_end
            to_send = retry
        dec.eliminate(state)
        mark_decoded(round_end)
        t_gw = round_end

    interference.flush()
    records.extend(interference.records)
    records.sort(key=lambda r: (r.start, str(r.device)))
    return RunResult(
        _finish_outcomes(outcomes, records, scenario),
        records,
        rounds=state.round,
        max_set_size=max(len(s) for s in obs.positions),
        decoder_bitmaps=decoder_bitmaps,
        guesses=guesses,
    )


def run_lorawan(scenario: Scenario, rng: Optional[random.Random] = None) -> RunResult:
    if scenario.protocol is not Protocol.LORAWAN:
        raise ValueError("run_lorawan needs a lorawan scenario")
    rng = rng if rng is not None else replication_rng(scenario.seed, 0)
    cfg = scenario.timing()
    x = scenario.n_devices
    grid = _SlotGrid(slot_duration(x, cfg), cfg.nmaxslots)
    ed_ids = list(range(1, x + 1))

    records = [TransmissionRecord(ed, "data_frame", 0.0, cfg.d_ed, 1, "collided") for ed in ed_ids]
    outcomes = {ed: DeviceOutcome(ed, 0.0, None, 1, 0) for ed in ed_ids}
    last_start = {ed: 0.0 for ed in ed_ids}
    pending = list(ed_ids)
    for _ in range(scenario.lorawan_max_retx):
        if not pending:
            break
        k0 = grid.at_or_after(max(frame_retransmission_start(last_start[ed], cfg) for ed in pending))
        grid.check(k0 + scenario.lorawan_window - 1)
        choice = {ed: k0 + rng.randrange(scenario.lorawan_window) for ed in pending}
        occupancy: dict[int, int] = {}
        for k in choice.values():
            occupancy[k] = occupancy.get(k, 0) + 1
        still = []
        for ed in pending:
            k = choice[ed]
            start = grid.start(k)
            ok = occupancy[k] == 1
            records.append(TransmissionRecord(ed, "data_frame", start, cfg.d_ed, k + 1, "delivered" if ok else "collided"))
            outcomes[ed].n_frame_tx += 1
            last_start[ed] = start
            if ok:
                outcomes[ed].decode_time = start + cfg.d_ed
            else:
                still.append(ed)
        pending = still
    records.sort(key=lambda r: (r.start, str(r.device)))
    return RunResult(_finish_outcomes(outcomes, records, scenario), records)


def run_once(scenario: Scenario, k: int = 0) -> RunResult:
    rng = replication_rng(scenario.seed, k)
    if scenario.protocol is Protocol.PROPOSED:
        return run_proposed(scenario, rng)
    return run_lorawan(scenario, rng)


@dataclass
class Replication:
    index: int
    summary: ReplicationSummary
    result: Optional[RunResult] = None


def replicate(scenario: Scenario, keep_events: bool = False) -> list[Replication]:
    reps = []
    for k in range(scenario.replications):
        res = run_once(scenario, k)
        summary = summarize(res.outcomes, scenario.payload_bytes, res.rounds)
        reps.append(Replication(k, summary, res if keep_events else None))
    return reps


def run_replications(scenario: Scenario) -> AggregateReport:
    reps = replicate(scenario)
    return aggregate([r.summary for r in reps], scenario.to_dict())
