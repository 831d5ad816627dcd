"""Event representation for post-tonal keyboard material.

An event is a single note or chord encoded as 13 numbers::

    [p1, ..., p10, velocity, duration_ms, ioi_ms]

Sounded pitches occupy the leading slots in ascending order and the
remaining slots hold the fill value ``-1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

N_SLOTS = 10
VECTOR_SIZE = N_SLOTS + 3
FILL = -1
MAX_TIME_MS = 20000.0
PITCH_RANGE = (0, 120)
VELOCITY_RANGE = (0, 127)

VEL, DUR, IOI = N_SLOTS, N_SLOTS + 1, N_SLOTS + 2

CSV_HEADER = [f"p{i}" for i in range(1, N_SLOTS + 1)] + ["vel", "dur_ms", "ioi_ms", "piece"]


class EventError(ValueError):
    """Raised when values cannot form a valid :class:`Event`."""


@dataclass(frozen=True)
class TimedNote:
    onset_ms: float
    pitch: int
    velocity: int
    duration_ms: float

    def __post_init__(self):
        if not PITCH_RANGE[0] <= self.pitch <= PITCH_RANGE[1]:
            raise EventError(f"pitch {self.pitch} outside {PITCH_RANGE}")
        if not VELOCITY_RANGE[0] <= self.velocity <= VELOCITY_RANGE[1]:
            raise EventError(f"velocity {self.velocity} outside {VELOCITY_RANGE}")
        if self.onset_ms < 0 or self.duration_ms < 0:
            raise EventError("negative onset or duration")
        if self.duration_ms > MAX_TIME_MS:
            # input clamping: nothing sounds longer than 20 s on a piano
            object.__setattr__(self, "duration_ms", MAX_TIME_MS)


@dataclass(frozen=True)
class Event:
    """One note or chord.

    ``pitches`` holds only the sounded pitches; :meth:`slots` gives the
    padded 10-slot form.
    """

    pitches: tuple[int, ...]
    velocity: int
    duration_ms: float
    ioi_ms: float

    def __post_init__(self):
        p = tuple(int(x) for x in self.pitches)
        object.__setattr__(self, "pitches", p)
        if not p:
            raise EventError("no sounded pitch")
        if len(p) > N_SLOTS:
            raise EventError(f"{len(p)} sounded pitches, at most {N_SLOTS} allowed")
        if any(b <= a for a, b in zip(p, p[1:])):
            raise EventError(f"pitches {p} not strictly ascending")
        if p[0] < PITCH_RANGE[0] or p[-1] > PITCH_RANGE[1]:
            raise EventError(f"pitch outside {PITCH_RANGE}: {p}")
        if not VELOCITY_RANGE[0] <= self.velocity <= VELOCITY_RANGE[1]:
            raise EventError(f"velocity {self.velocity} outside {VELOCITY_RANGE}")
        for name in ("duration_ms", "ioi_ms"):
            v = getattr(self, name)
            if not math.isfinite(v) or not 0.0 <= v <= MAX_TIME_MS:
                raise EventError(f"{name} {v} outside [0, {MAX_TIME_MS:g}]")

    @property
    def is_chord(self) -> bool:
        return len(self.pitches) > 1

    def slots(self) -> tuple[int, ...]:
        return self.pitches + (FILL,) * (N_SLOTS - len(self.pitches))

    def transposed(self, offset: int) -> Event:
        return Event(tuple(p + offset for p in self.pitches), self.velocity,
                     self.duration_ms, self.ioi_ms)


@dataclass
class GroupingResult:
    events: list[Event]
    discarded: int = 0
    # number of source notes per event, before the 10-pitch cap
    sizes: list[int] = field(default_factory=list)


def group_notes_to_events(notes: Sequence[TimedNote], threshold_ms: float = 35.0) -> GroupingResult:
    """Merge notes into chord events.

    A group holds every note whose onset lies within ``threshold_ms`` of the
    group's first (anchor) note; grouping is not chained. Duplicate pitches
    within a group collapse to one. Groups of more than 10 distinct pitches
    keep the 10 lowest and the rest are tallied in ``discarded``.
    """
    out = GroupingResult(events=[])
    if not notes:
        return out
    for a, b in zip(notes, notes[1:]):
        if b.onset_ms < a.onset_ms:
            raise ValueError("notes must be sorted by onset_ms")

    groups: list[list[TimedNote]] = []
    for note in notes:
        if groups and note.onset_ms - groups[-1][0].onset_ms <= threshold_ms:
            groups[-1].append(note)
        else:
            groups.append([note])

    for i, group in enumerate(groups):
        pitches = sorted({n.pitch for n in group})
        if len(pitches) > N_SLOTS:
            logger.debug("chord at %.1f ms has %d pitches, keeping lowest %d",
                         group[0].onset_ms, len(pitches), N_SLOTS)
            out.discarded += len(pitches) - N_SLOTS
            pitches = pitches[:N_SLOTS]
        velocity = int(_round_half_away(sum(n.velocity for n in group) / len(group)))
        first = min(group, key=lambda n: (n.onset_ms, n.pitch))
        if i + 1 < len(groups):
            ioi = groups[i + 1][0].onset_ms - group[0].onset_ms
        else:
            ioi = first.duration_ms
        out.events.append(Event(tuple(pitches), velocity, first.duration_ms,
                                min(ioi, MAX_TIME_MS)))
        out.sizes.append(len(group))
    return out


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def event_to_vector(e: Event) -> np.ndarray:
    v = np.empty(VECTOR_SIZE)
    v[:N_SLOTS] = e.slots()
    v[VEL] = e.velocity
    v[DUR] = e.duration_ms
    v[IOI] = e.ioi_ms
    return v


def events_to_matrix(events: Iterable[Event]) -> np.ndarray:
    rows = [event_to_vector(e) for e in events]
    if not rows:
        return np.empty((0, VECTOR_SIZE))
    return np.vstack(rows)


def vector_to_event(v: Sequence[float]) -> Event:
    """Decode a 13-vector into an Event.

    Pitch slots above -0.5 count as sounded and are rounded to the nearest
    integer, as is velocity. Sounded pitches are re-sorted and deduplicated.
    Raises :class:`EventError` naming the violated invariant.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (VECTOR_SIZE,):
        raise EventError(f"expected {VECTOR_SIZE} values, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise EventError("non-finite value")
    slots = v[:N_SLOTS]
    sounded = sorted({int(_round_half_away(p)) for p in slots if p > -0.5})
    if not sounded:
        raise EventError("no sounded pitch")
    return Event(tuple(sounded), int(_round_half_away(v[VEL])), float(v[DUR]), float(v[IOI]))


def transpose_augment(corpus, offsets: Sequence[int]):
    """Concatenate one transposed copy of ``corpus`` per offset.

    Events whose shifted pitches leave [0, 120] are dropped; each copy keeps
    its own piece boundaries.
    """
    from .corpus import Corpus

    if not offsets:
        raise ValueError("offsets must be nonempty")
    lo, hi = PITCH_RANGE
    events: list[Event] = []
    bounds: list[int] = []
    for off in offsets:
        for piece in corpus.pieces():
            kept = [e.transposed(off) for e in piece
                    if lo <= e.pitches[0] + off and e.pitches[-1] + off <= hi]
            if kept:
                bounds.append(len(events))
                events.extend(kept)
    return Corpus(events, bounds, name=f"{corpus.name}+aug")


DEFAULT_AUGMENT_OFFSETS = tuple(o for o in range(-6, 6) if o != 0)
