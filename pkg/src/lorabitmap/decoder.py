"""Gateway-side decoding of fully synchronized collisions with guess frames and bitmaps.

The gateway keeps one partial frame per colliding device. Each round it
broadcasts a guess (one candidate symbol per position), solicited devices
answer with a bitmap, and cells are filled from three rules:

* bit 1: the device sent the guessed symbol;
* bit 0 at a position holding exactly two symbols: the device sent the other one;
* elimination: a single undecided device at a position gets the one symbol
  nobody else accounts for.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence

from .phy_model import Bitmap, Frame, SuperposedObservation, make_bitmap, superpose

WILDCARD = None


class DecodingError(Exception):
    pass


class InconsistentBitmapError(DecodingError):
    """A bitmap contradicts a cell that is already decided."""


class InvalidStateError(DecodingError):
    pass


class Strategy(str, Enum):
    RANDOM_UNSENT = "random_unsent"
    FIRST_UNSENT = "first_unsent"
    SCRIPTED = "scripted"


@dataclass
class PartialFrame:
    ed_id: int
    cells: list[Optional[int]]

    @property
    def complete(self) -> bool:
        return WILDCARD not in self.cells

    @property
    def wildcards(self) -> int:
        return sum(c is WILDCARD for c in self.cells)

    def __str__(self) -> str:
        return "(" + ", ".join("*" if c is WILDCARD else str(c) for c in self.cells) + ")"


@dataclass(frozen=True)
class GuessFrame:
    symbols: tuple[int, ...]
    solicited: tuple[int, ...]
    round: int


@dataclass
class DecoderState:
    observation: SuperposedObservation
    partials: dict[int, PartialFrame]
    guessed_history: list[set[int]]
    round: int = 0
    script: list[Sequence[int]] = field(default_factory=list)

    @property
    def ed_ids(self) -> list[int]:
        return sorted(self.partials)

    @property
    def complete(self) -> bool:
        return all(p.complete for p in self.partials.values())

    @property
    def wildcards(self) -> int:
        return sum(p.wildcards for p in self.partials.values())

    def undecided(self) -> list[int]:
        return [ed for ed in self.ed_ids if not self.partials[ed].complete]


@dataclass
class DecodeResult:
    decoded: list[Frame]
    rounds: int
    bitmaps_sent: dict[int, int]
    guesses: list[GuessFrame]

    @property
    def mean_bitmaps(self) -> float:
        return sum(self.bitmaps_sent.values()) / len(self.bitmaps_sent)


def init_state(
    obs: SuperposedObservation,
    ed_ids: Sequence[int],
    script: Iterable[Sequence[int]] = (),
) -> DecoderState:
    if len(ed_ids) != obs.n_devices:
        raise ValueError("one device id per colliding transmitter is required")
    if obs.n_devices < 2:
        raise ValueError("at least two devices are needed for a collision")
    if len(set(ed_ids)) != len(ed_ids):
        raise ValueError("device ids must be unique")
    # a singleton set at j means every device sent that symbol
    template = [next(iter(s)) if len(s) == 1 else WILDCARD for s in obs.positions]
    partials = {ed: PartialFrame(ed, list(template)) for ed in sorted(ed_ids)}
    history = [set() for _ in obs.positions]
    return DecoderState(obs, partials, history, 0, [tuple(g) for g in script])


def _solicited(state: DecoderState) -> tuple[int, ...]:
    pending = state.undecided()
    if state.observation.n_devices == 2:
        # the other device is recovered by elimination
        return tuple(pending[:1])
    return tuple(pending)


def next_guess(
    state: DecoderState,
    strategy: Strategy | str = Strategy.RANDOM_UNSENT,
    rng: Optional[random.Random] = None,
) -> GuessFrame:
    """Build the next guess frame and record its symbols in ``guessed_history``."""
    if state.complete:
        raise InvalidStateError("all frames are already decoded")
    strategy = Strategy(strategy)
    positions = state.observation.positions
    if strategy is Strategy.SCRIPTED:
        if not state.script:
            raise InvalidStateError("scripted guess list exhausted")
        symbols = tuple(state.script.pop(0))
        if len(symbols) != len(positions):
            raise ValueError("scripted guess has the wrong length")
        for j, s in enumerate(symbols):
            if s not in positions[j]:
                raise ValueError(f"scripted symbol {s} not observed at position {j}")
    else:
        if strategy is Strategy.RANDOM_UNSENT and rng is None:
            raise ValueError("random_unsent needs a seeded generator")
        chosen = []
        for s_j, sent in zip(positions, state.guessed_history):
            fresh = s_j - sent if sent else s_j
            if not fresh:
                chosen.append(min(s_j))
            elif len(fresh) == 1:
                chosen.append(next(iter(fresh)))
            elif strategy is Strategy.FIRST_UNSENT:
                chosen.append(min(fresh))
            else:
                chosen.append(rng.choice(sorted(fresh)))
        symbols = tuple(chosen)
    for sent, s in zip(state.guessed_history, symbols):
        sent.add(s)
    state.round += 1
    return GuessFrame(symbols, _solicited(state), state.round)


def _assign(partial: PartialFrame, j: int, value: int) -> bool:
    current = partial.cells[j]
    if current is WILDCARD:
        partial.cells[j] = value
        return True
    if current != value:
        raise InconsistentBitmapError(
            f"ED{partial.ed_id} position {j}: bitmap implies {value}, already decoded as {current}"
        )
    return False


def apply_bitmap(state: DecoderState, bm: Bitmap, guess: GuessFrame) -> DecoderState:
    if bm.ed_id not in guess.solicited:
        raise ValueError(f"ED{bm.ed_id} was not asked to reply to round {guess.round}")
    if len(bm.bits) != len(guess.symbols):
        raise ValueError("bitmap length does not match the guess frame")
    partial = state.partials[bm.ed_id]
    for j, (bit, g) in enumerate(zip(bm.bits, guess.symbols)):
        s_j = state.observation.positions[j]
        if bit:
            _assign(partial, j, g)
        elif partial.cells[j] == g:
            raise InconsistentBitmapError(f"ED{bm.ed_id} denies symbol {g} at position {j}")
        elif len(s_j) == 2:
            (other,) = s_j - {g}
            _assign(partial, j, other)
    return state


def eliminate(state: DecoderState) -> DecoderState:
    positions = state.observation.positions
    partials = list(state.partials.values())
    changed = True
    while changed:
        changed = False
        for j, s_j in enumerate(positions):
            undecided = [p for p in partials if p.cells[j] is WILDCARD]
            if len(undecided) != 1:
                continue
            remaining = s_j - {p.cells[j] for p in partials if p.cells[j] is not WILDCARD}
            # every symbol of s_j was sent by someone, so at most one is unaccounted for
            assert len(remaining) <= 1, f"elimination lemma violated at position {j}"
            if remaining:
                undecided[0].cells[j] = next(iter(remaining))
                changed = True
    return state


ReplyOracle = Callable[[int, GuessFrame], Bitmap]


def decode_round(
    state: DecoderState,
    strategy: Strategy | str,
    rng: Optional[random.Random],
    reply_oracle: ReplyOracle,
) -> tuple[DecoderState, GuessFrame, list[Bitmap]]:
    guess = next_guess(state, strategy, rng)
    bitmaps = [reply_oracle(ed, guess) for ed in guess.solicited]
    for bm in bitmaps:
        apply_bitmap(state, bm, guess)
    eliminate(state)
    return state, guess, bitmaps


def truthful_oracle(frames: Sequence[Frame]) -> ReplyOracle:
    by_id = {f.ed_id: f for f in frames}

    def reply(ed_id: int, guess: GuessFrame) -> Bitmap:
        return make_bitmap(by_id[ed_id], guess.symbols, guess.round)

    return reply


def decode(
    obs: SuperposedObservation,
    true_frames: Sequence[Frame],
    strategy: Strategy | str = Strategy.RANDOM_UNSENT,
    rng: Optional[random.Random] = None,
    script: Iterable[Sequence[int]] = (),
) -> DecodeResult:
    """Run rounds until every partial frame is complete, with truthful device replies."""
    if superpose(true_frames).positions != obs.positions:
        raise ValueError("frames are inconsistent with the observation")
    state = init_state(obs, [f.ed_id for f in true_frames], script)
    oracle = truthful_oracle(true_frames)
    bound = max(len(s) for s in obs.positions)
    counts = {ed: 0 for ed in state.ed_ids}
    guesses: list[GuessFrame] = []
    scripted = Strategy(strategy) is Strategy.SCRIPTED
    while not state.complete:
        if state.round >= bound and not scripted:
            raise RuntimeError(f"decoding exceeded the {bound}-round termination bound")
        _, guess, bitmaps = decode_round(state, strategy, rng, oracle)
        guesses.append(guess)
        for bm in bitmaps:
            counts[bm.ed_id] += 1
    decoded = [
        Frame(ed, tuple(state.partials[ed].cells), f.payload_bytes)
        for ed, f in zip(state.ed_ids, sorted(true_frames, key=lambda f: f.ed_id))
    ]
    return DecodeResult(decoded, state.round, counts, guesses)
