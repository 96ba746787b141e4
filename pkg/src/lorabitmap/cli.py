"""Command-line front end: ``run``, ``sweep`` and ``replay-example``.

Exit codes: 0 success, 2 usage error, 3 simulation horizon exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import decoder as dec
from .metrics import AggregateReport, EnergyAccounting, EnergyConfig, aggregate
from .phy_model import Frame, PayloadModel, SfParams, make_bitmap, superpose
from .simulator import Protocol, Scenario, SimulationHorizonExceeded, replicate

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_HORIZON = 3

CSV_COLUMNS = (
    "protocol",
    "sf",
    "devices",
    "replications",
    "seed",
    "mean_delay_s",
    "std_delay_s",
    "mean_energy_j",
    "mean_energy_per_bit_j",
    "mean_throughput_bps",
    "mean_frame_tx",
    "mean_bitmap_tx",
    "loss_rate",
)

EVENT_COLUMNS = ("replication", "device", "kind", "start", "duration", "slot", "outcome")

# Three synchronized SF7 frames and the two guess sequences of the worked example.
EXAMPLE_FRAMES = (
    Frame(1, (64, 32, 32)),
    Frame(2, (96, 0, 32)),
    Frame(3, (96, 64, 32)),
)
EXAMPLE_SEQUENCES = {
    "A": ((64, 0, 32), (96, 0, 32), (96, 32, 32)),
    "B": ((64, 0, 32), (96, 32, 32)),
}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    protocol: Optional[str] = None  # run: proposed; sweep: both
    sf: str = "12"
    devices: str = "2"
    payload_bytes: int = 30
    replications: int = 1000
    seed: int = 0
    gap: float = 30e-9
    window: int = 2
    max_retx: int = 8
    guess: str = "random_unsent"
    payload_model: str = "paper"
    energy_accounting: str = "with-preamble"
    p_cons: float = 0.4
    delta_max: float = 0.0
    nmaxslots: int = 1000
    out: Optional[str] = None
    format: str = "csv"
    emit_events: bool = False
    jobs: int = 1

    def scenario(self, protocol: str, sf: int, devices: int) -> Scenario:
        return Scenario(
            n_devices=devices,
            sf_params=SfParams(sf=sf, payload_model=PayloadModel(self.payload_model)),
            payload_bytes=self.payload_bytes,
            protocol=Protocol(protocol),
            replications=self.replications,
            seed=self.seed,
            lorawan_window=self.window,
            lorawan_max_retx=self.max_retx,
            guess=dec.Strategy(self.guess),
            gap=self.gap,
            delta_max=self.delta_max,
            nmaxslots=self.nmaxslots,
            energy=EnergyConfig(p_cons_watts=self.p_cons, accounting=EnergyAccounting(self.energy_accounting)),
        )


def parse_devices(text: str) -> list[int]:
    text = str(text).strip()
    try:
        if ".." in text:
            a, b = (int(v) for v in text.split("..", 1))
            values = list(range(a, b + 1))
        else:
            values = [int(text)]
    except ValueError:
        raise UsageError(f"bad device count or range: {text!r}") from None
    if not values:
        raise UsageError(f"empty device range: {text!r}")
    if any(not 2 <= v <= 8 for v in values):
        raise UsageError("device counts must lie in 2..8")
    return values


def parse_sfs(text: str) -> list[int]:
    try:
        values = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad spreading factor list: {text!r}") from None
    if not values or any(v not in (7, 12) for v in values):
        raise UsageError("spreading factors must be 7 and/or 12")
    return values


def _add_common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", help="flat key: value file; flags override it")
    p.add_argument("--protocol", default=S, help="proposed | lorawan")
    p.add_argument("--sf", default=S, help="7, 12 or 7,12")
    p.add_argument("--devices", default=S, help="N or A..B within 2..8")
    p.add_argument("--payload-bytes", type=int, default=S)
    p.add_argument("--replications", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--gap", type=float, default=S, help="guard interval in seconds (default 3e-8)")
    p.add_argument("--window", type=int, default=S, help="LoRaWAN backoff window in slots (default 2)")
    p.add_argument("--max-retx", type=int, default=S, help="LoRaWAN retransmission limit (default 8)")
    p.add_argument("--guess", default=S, choices=["random_unsent", "first_unsent"])
    p.add_argument("--payload-model", default=S, choices=[m.value for m in PayloadModel])
    p.add_argument("--energy-accounting", default=S, choices=[a.value for a in EnergyAccounting])
    p.add_argument("--p-cons", type=float, default=S, help="consumed power while transmitting, W")
    p.add_argument("--delta-max", type=float, default=S)
    p.add_argument("--nmaxslots", type=int, default=S)
    p.add_argument("--out", default=S, help="output path (stdout when omitted)")
    p.add_argument("--format", default=S, choices=["csv", "json"])
    p.add_argument("--emit-events", action="store_true", default=S)
    p.add_argument("--jobs", type=int, default=S, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lorabitmap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="simulate one scenario"))
    _add_common(sub.add_parser("sweep", help="simulate protocols x SFs x device counts into one table"))
    sub.add_parser("replay-example", help="replay the three-device worked example")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        try:
            loaded = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must be a flat key: value mapping")
        values.update({str(k).replace("-", "_"): v for k, v in loaded.items()})
    values.update({k: v for k, v in vars(args).items() if k not in ("command", "config")})
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    if cfg.format not in ("csv", "json"):
        raise UsageError("format must be csv or json")
    if cfg.emit_events and not cfg.out:
        raise UsageError("--emit-events needs --out")
    if cfg.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    return cfg


def _csv_row(s: Scenario, report: AggregateReport) -> dict:
    m = report.mean
    return {
        "protocol": s.protocol.value,
        "sf": s.sf_params.sf,
        "devices": s.n_devices,
        "replications": s.replications,
        "seed": s.seed,
        "mean_delay_s": m["delay_s"],
        "std_delay_s": report.std["delay_s"],
        "mean_energy_j": m["energy_j"],
        "mean_energy_per_bit_j": m["energy_per_bit_j"],
        "mean_throughput_bps": m["throughput_bps"],
        "mean_frame_tx": m["frame_tx"],
        "mean_bitmap_tx": m["bitmap_tx"],
        "loss_rate": m["loss_rate"],
    }


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_csv(rows: Sequence[dict], config: dict) -> str:
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def render_json(cells: Sequence[tuple[Scenario, AggregateReport]], config: dict) -> str:
    doc = {
        "config": config,
        "results": [
            {"row": _csv_row(s, r), "mean": r.mean, "std": r.std, "scenario": r.config} for s, r in cells
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _run_cell(scenario: Scenario, keep_events: bool):
    reps = replicate(scenario, keep_events=keep_events)
    report = aggregate([r.summary for r in reps], scenario.to_dict())
    events = []
    if keep_events:
        for r in reps:
            for rec in r.result.records:
                events.append((r.index, rec.device, rec.kind, rec.start, rec.duration, rec.slot, rec.outcome))
    return report, events


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _events_path(out: str, fmt: str) -> Path:
    p = Path(out)
    return p.with_name(p.stem + ".events." + fmt)


def execute(cfg: RunConfig, cells: Sequence[Scenario]) -> None:
    if cfg.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_cell, cells, [cfg.emit_events] * len(cells)))
    else:
        results = [_run_cell(s, cfg.emit_events) for s in cells]
    config = asdict(cfg)
    pairs = [(s, r) for s, (r, _) in zip(cells, results)]
    if cfg.format == "csv":
        _write(render_csv([_csv_row(s, r) for s, r in pairs], config), cfg.out)
    else:
        _write(render_json(pairs, config), cfg.out)
    if cfg.emit_events:
        rows = [
            dict(zip(("protocol", "sf", "devices") + EVENT_COLUMNS, (s.protocol.value, s.sf_params.sf, s.n_devices) + ev))
            for s, (_, events) in zip(cells, results)
            for ev in events
        ]
        path = _events_path(cfg.out, cfg.format)
        if cfg.format == "csv":
            buf = io.StringIO()
            buf.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
            writer = csv.DictWriter(buf, fieldnames=list(rows[0]) if rows else list(EVENT_COLUMNS), lineterminator="\n")
            writer.writeheader()
            writer.writerows({k: _fmt(v) for k, v in row.items()} for row in rows)
            path.write_text(buf.getvalue())
        else:
            path.write_text(json.dumps({"config": config, "events": rows}, sort_keys=True) + "\n")


def _check_protocol(name: str) -> str:
    if name not in [p.value for p in Protocol]:
        raise UsageError(f"unknown protocol {name!r}")
    return name


def cmd_run(cfg: RunConfig) -> None:
    protocol = _check_protocol(cfg.protocol or Protocol.PROPOSED.value)
    sfs = parse_sfs(cfg.sf)
    devices = parse_devices(cfg.devices)
    if len(sfs) != 1 or len(devices) != 1:
        raise UsageError("run takes a single --sf and a single --devices value; use sweep for ranges")
    execute(cfg, [cfg.scenario(protocol, sfs[0], devices[0])])


def cmd_sweep(cfg: RunConfig) -> None:
    protocols = [_check_protocol(cfg.protocol)] if cfg.protocol else [p.value for p in Protocol]
    sfs = parse_sfs(cfg.sf)
    devices = parse_devices(cfg.devices)
    cells = [cfg.scenario(p, sf, x) for p in protocols for sf in sfs for x in devices]
    execute(cfg, cells)


def replay_example(sequence: Sequence[Sequence[int]], frames: Sequence[Frame] = EXAMPLE_FRAMES):
    """Decode ``frames`` with a scripted guess list; returns (transcript lines, result)."""
    obs = superpose(frames)
    by_id = {f.ed_id: f for f in frames}
    state = dec.init_state(obs, sorted(by_id), sequence)
    counts = {ed: 0 for ed in by_id}
    lines = ["superposed symbols: " + ", ".join("{" + ", ".join(map(str, sorted(s))) + "}" for s in obs.positions)]
    guesses = []
    while not state.complete:
        guess = dec.next_guess(state, dec.Strategy.SCRIPTED)
        guesses.append(guess)
        lines.append(f"step {guess.round}: gateway sends {guess.symbols}")
        for ed in guess.solicited:
            bm = make_bitmap(by_id[ed], guess.symbols, guess.round)
            dec.apply_bitmap(state, bm, guess)
            counts[ed] += 1
            lines.append(f"  ED{ed} replies {bm.bits}")
        for ed in sorted(by_id):
            if ed not in guess.solicited:
                lines.append(f"  ED{ed} does not reply (already decoded)")
        dec.eliminate(state)
        for ed in sorted(by_id):
            lines.append(f"  f{ed} = {state.partials[ed]}")
    avg = Fraction(sum(counts.values()), len(counts))
    shown = math.floor(avg * 100) / 100
    lines.append(f"bitmaps per device: {[counts[ed] for ed in sorted(counts)]}")
    lines.append(f"average bitmap transmissions per device: {avg} ({shown:.2f})")
    result = dec.DecodeResult(
        [Frame(ed, tuple(state.partials[ed].cells)) for ed in sorted(by_id)], state.round, counts, guesses
    )
    return lines, result


def cmd_replay_example() -> None:
    for name, seq in EXAMPLE_SEQUENCES.items():
        lines, _ = replay_example(seq)
        print(f"== guess sequence {name} ==")
        print("\n".join(lines))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay-example":
            cmd_replay_example()
            return EXIT_OK
        cfg = resolve_config(args)
        if args.command == "run":
            cmd_run(cfg)
        else:
            cmd_sweep(cfg)
    except (UsageError, ValueError) as exc:
        print(f"lorabitmap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SimulationHorizonExceeded as exc:
        print(f"lorabitmap: simulation horizon exceeded: {exc}", file=sys.stderr)
        return EXIT_HORIZON
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
