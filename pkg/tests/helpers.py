"""Independent oracles and event-log checks shared by the test modules."""

import itertools
from collections import defaultdict
from fractions import Fraction
from functools import lru_cache

from lorabitmap.mac_timing import guard_satisfied

UPLINK = ("data_frame", "bitmap")

# one "criterion N: PASS|FAIL ..." line per acceptance check, printed at session end
ACCEPTANCE_LINES: list = []


def report(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@lru_cache(maxsize=None)
def _survivors(m: int, w: int) -> tuple:
    """Exact distribution of devices still pending after one window of ``w`` slots."""
    counts = defaultdict(int)
    for choice in itertools.product(range(w), repeat=m):
        occ = [choice.count(k) for k in range(w)]
        counts[m - sum(1 for c in occ if c == 1)] += 1
    total = w**m
    return tuple((left, Fraction(c, total)) for left, c in sorted(counts.items()))


def lorawan_exact(x: int, w: int = 2, max_retx: int = 8) -> tuple[Fraction, Fraction]:
    """Mean retransmissions per device and loss rate of the synchronized-window baseline.

    Pending devices pick one of ``w`` slots per window; a lone device succeeds
    and leaves; the rest try again, ``max_retx`` windows at most.
    """
    dist = {x: Fraction(1)}
    retx = Fraction(0)
    for _ in range(max_retx):
        nxt = defaultdict(Fraction)
        for m, p in dist.items():
            if m == 0:
                nxt[0] += p
                continue
            retx += p * m
            for left, q in _survivors(m, w):
                nxt[left] += p * q
        dist = nxt
    lost = sum(p * m for m, p in dist.items())
    return retx / x, lost / x


def closed_form(x: int, max_retx: int = 8) -> tuple[float, float]:
    q = 1 - 0.5 ** (x - 1)
    return (1 - q**max_retx) / (1 - q), q**max_retx


def check_event_log(result, cfg, duty_factor=100.0):
    """Assert the channel and regulatory invariants on one run's records."""
    recs = result.records
    tol = 1e-9
    by_dev = defaultdict(list)
    for r in recs:
        by_dev[r.device].append(r)
    for dev, rs in by_dev.items():
        rs = sorted(rs, key=lambda r: r.start)
        for a, b in zip(rs, rs[1:]):
            assert b.start >= a.end - tol, f"{dev} overlaps itself"
            assert b.start - a.start >= duty_factor * a.duration - tol * max(1, b.start), f"{dev} breaks duty cycle"
    uplinks = [r for r in recs if r.kind in UPLINK]
    for r in uplinks:
        if r.outcome != "delivered":
            continue
        for o in uplinks:
            if o is r:
                continue
            assert not (o.start < r.end - tol and r.start < o.end - tol), f"delivered {r} overlaps {o}"
    per_slot = defaultdict(list)
    for r in recs:
        if r.kind == "bitmap":
            per_slot[r.slot].append(r)
    for slot, rs in per_slot.items():
        rs.sort(key=lambda r: r.start)
        base = rs[0].start
        for a, b in zip(rs, rs[1:]):
            assert guard_satisfied(a.start - base, a.duration, b.start - base, cfg)
    for o in result.outcomes:
        if o.decode_time is not None:
            assert o.decode_time >= o.first_send + cfg.d_ed - tol
