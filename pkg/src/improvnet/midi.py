"""Standard MIDI File reading and writing.

Reading merges all tracks of a format 0 or 1 file into a single list of
:class:`~improvnet.events.TimedNote` in milliseconds. Writing renders
events as format 0 at 500 ticks per quarter and 500000 us per quarter, so
one tick is exactly one millisecond.
"""

from __future__ import annotations

import bisect
import logging
import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Sequence

from .events import MAX_TIME_MS, PITCH_RANGE, Event, TimedNote

logger = logging.getLogger(__name__)

DEFAULT_TEMPO = 500000
OUT_DIVISION = 500


class MidiParseError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


@dataclass
class TempoMap:
    """Piecewise-constant tempo, as (tick, us per quarter) pairs."""

    division: int
    changes: list[tuple[int, int]] = field(default_factory=list)
    smpte_ms_per_tick: float | None = None

    def __post_init__(self):
        ch = sorted(self.changes, key=lambda c: c[0])
        # a later change at the same tick overrides an earlier one
        dedup: dict[int, int] = {}
        for tick, tempo in ch:
            dedup[tick] = tempo
        if 0 not in dedup:
            dedup[0] = DEFAULT_TEMPO
        self.changes = sorted(dedup.items())
        self._ticks = [t for t, _ in self.changes]
        self._ms = [0.0]
        for (t0, tempo), (t1, _) in zip(self.changes, self.changes[1:]):
            self._ms.append(self._ms[-1] + (t1 - t0) * tempo / self.division / 1000.0)

    def to_ms(self, tick: int) -> float:
        if self.smpte_ms_per_tick is not None:
            return tick * self.smpte_ms_per_tick
        i = bisect.bisect_right(self._ticks, tick) - 1
        t0, tempo = self.changes[i]
        return self._ms[i] + (tick - t0) * tempo / self.division / 1000.0


@dataclass
class SmfReadResult:
    notes: list[TimedNote]
    warnings: list[str]
    tempo_map: TempoMap


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def need(self, n: int, what: str):
        if self.pos + n > len(self.data):
            raise MidiParseError(f"truncated {what}", self.pos)

    def u8(self) -> int:
        self.need(1, "data")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int, what: str = "data") -> bytes:
        self.need(n, what)
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def varlen(self) -> int:
        value = 0
        for _ in range(4):
            b = self.u8()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MidiParseError("variable-length quantity longer than 4 bytes", self.pos)


_DATA_LEN = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _parse_track(r: _Reader, end: int):
    """Yield (abs_tick, kind, payload) for one MTrk chunk body."""
    tick = 0
    status = None
    out = []
    while r.pos < end:
        tick += r.varlen()
        b = r.u8()
        if b == 0xFF:
            kind = r.u8()
            length = r.varlen()
            payload = r.take(length, "meta event")
            out.append((tick, "meta", (kind, payload)))
            if kind == 0x2F:
                break
            continue
        if b in (0xF0, 0xF7):
            length = r.varlen()
            r.take(length, "sysex")
            status = None
            continue
        if b & 0x80:
            status = b
            first = r.u8()
        else:
            if status is None:
                raise MidiParseError("data byte without running status", r.pos - 1)
            first = b
        n = _DATA_LEN.get(status & 0xF0)
        if n is None:
            raise MidiParseError(f"unsupported status byte 0x{status:02X}", r.pos - 1)
        second = r.u8() if n == 2 else 0
        out.append((tick, "chan", (status & 0xF0, status & 0x0F, first, second)))
    return out, tick


def read_smf(data: bytes) -> SmfReadResult:
    """Parse SMF bytes into onset-sorted notes plus warnings."""
    r = _Reader(data)
    if r.take(4, "header") != b"MThd":
        raise MidiParseError("missing MThd header chunk", 0)
    hlen = struct.unpack(">I", r.take(4, "header"))[0]
    if hlen < 6:
        raise MidiParseError("header chunk shorter than 6 bytes", 4)
    fmt, ntracks, division = struct.unpack(">HHH", r.take(6, "header"))
    r.take(hlen - 6, "header")
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported SMF format {fmt}", 8)

    smpte = None
    if division & 0x8000:
        fps = 256 - (division >> 8)
        smpte = 1000.0 / (fps * (division & 0xFF))
    elif division == 0:
        raise MidiParseError("division of zero ticks per quarter", 12)

    tracks = []
    while len(tracks) < ntracks:
        if r.pos >= len(data):
            raise MidiParseError(f"expected {ntracks} tracks, found {len(tracks)}", r.pos)
        start = r.pos
        cid = r.take(4, "chunk id")
        length = struct.unpack(">I", r.take(4, "chunk length"))[0]
        end = r.pos + length
        if end > len(data):
            raise MidiParseError("chunk extends past end of file", start)
        if cid != b"MTrk":
            r.pos = end  # alien chunk, skip
            continue
        tracks.append(_parse_track(r, end))
        r.pos = end

    tempos = [(t, int.from_bytes(p[1], "big")) for msgs, _ in tracks
              for t, kind, p in msgs if kind == "meta" and p[0] == 0x51 and len(p[1]) == 3]
    tmap = TempoMap(division & 0x7FFF if not smpte else 1, tempos, smpte)

    warnings: list[str] = []
    raw: list[tuple[float, int, int, float]] = []
    for ti, (msgs, end_tick) in enumerate(tracks):
        active: dict[tuple[int, int], deque] = defaultdict(deque)
        for tick, kind, p in msgs:
            if kind != "chan":
                continue
            typ, ch, key, vel = p
            if typ == 0x90 and vel > 0:
                active[(ch, key)].append((tick, vel))
            elif typ == 0x80 or (typ == 0x90 and vel == 0):
                q = active.get((ch, key))
                if not q:
                    warnings.append(f"track {ti}: note-off without note-on, key {key} tick {tick}")
                    continue
                on_tick, on_vel = q.popleft()
                raw.append((tmap.to_ms(on_tick), key, on_vel, tmap.to_ms(tick) - tmap.to_ms(on_tick)))
        for (ch, key), q in active.items():
            for on_tick, on_vel in q:
                warnings.append(f"track {ti}: unmatched note-on key {key} channel {ch} "
                                f"at tick {on_tick}, closed at end of track (tick {end_tick})")
                raw.append((tmap.to_ms(on_tick), key, on_vel, tmap.to_ms(end_tick) - tmap.to_ms(on_tick)))

    raw.sort(key=lambda n: (n[0], n[1]))
    notes = []
    lo, hi = PITCH_RANGE
    for onset, key, vel, dur in raw:
        if not lo <= key <= hi:
            warnings.append(f"pitch {key} at {onset:.1f} ms outside [{lo}, {hi}], skipped")
            continue
        if dur > MAX_TIME_MS:
            dur = MAX_TIME_MS
        notes.append(TimedNote(onset, key, vel, dur))
    for w in warnings:
        logger.warning(w)
    return SmfReadResult(notes, warnings, tmap)


def _varlen(value: int) -> bytes:
    if value < 0:
        raise ValueError("negative delta time")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def write_smf(events: Sequence[Event]) -> bytes:
    """Render events as a format 0 SMF on channel 0, 1 tick = 1 ms.

    Event onsets are cumulative iois. At equal ticks, note-offs of earlier
    notes precede note-ons, which precede offs of zero-length notes.
    Velocity 0 would read back as a note-off, so it is written as 1.
    """
    msgs: list[tuple[int, int, int, bytes]] = []
    onset = 0.0
    seq = 0
    for e in events:
        on = int(round(onset))
        off = int(round(onset + e.duration_ms))
        vel = max(1, int(e.velocity))
        for p in e.pitches:
            msgs.append((on, 1, seq, bytes([0x90, p, vel])))
            msgs.append((off, 2 if off == on else 0, seq, bytes([0x80, p, 0])))
            seq += 1
        onset += e.ioi_ms
    msgs.sort(key=lambda m: (m[0], m[1], m[2]))

    body = bytearray()
    body += _varlen(0) + b"\xFF\x51\x03" + DEFAULT_TEMPO.to_bytes(3, "big")
    last = 0
    for tick, _, _, m in msgs:
        body += _varlen(tick - last) + m
        last = tick
    body += _varlen(0) + b"\xFF\x2F\x00"

    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, OUT_DIVISION)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)
