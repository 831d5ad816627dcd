"""Corpora, synthetic corpus generation, windowing and robust scaling."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .events import (
    CSV_HEADER, MAX_TIME_MS, N_SLOTS, VECTOR_SIZE, Event,
    events_to_matrix,
)


class CorpusError(ValueError):
    pass


@dataclass
class Corpus:
    events: list[Event]
    piece_bounds: list[int] = field(default_factory=lambda: [0])
    name: str = "corpus"

    def __post_init__(self):
        if not self.events:
            self.piece_bounds = []
            return
        b = self.piece_bounds
        if not b or b[0] != 0:
            raise CorpusError("piece_bounds must start with 0")
        if any(y <= x for x, y in zip(b, b[1:])) or b[-1] >= len(self.events):
            raise CorpusError(f"invalid piece_bounds {b} for {len(self.events)} events")

    def __len__(self):
        return len(self.events)

    def pieces(self) -> Iterator[list[Event]]:
        ends = list(self.piece_bounds[1:]) + [len(self.events)]
        for start, end in zip(self.piece_bounds, ends):
            yield self.events[start:end]

    def piece_lengths(self) -> list[int]:
        return [len(p) for p in self.pieces()]

    def matrix(self) -> np.ndarray:
        return events_to_matrix(self.events)

    def slice(self, start: int, stop: int, name: str | None = None) -> Corpus:
        """Events ``[start, stop)`` with piece bounds clipped to the range."""
        bounds = sorted({max(b, start) - start for b in self.piece_bounds if b < stop})
        return Corpus(self.events[start:stop], bounds, name or self.name)

    @classmethod
    def concat(cls, parts: Sequence[Corpus], name: str = "corpus") -> Corpus:
        events: list[Event] = []
        bounds: list[int] = []
        for part in parts:
            bounds.extend(b + len(events) for b in part.piece_bounds)
            events.extend(part.events)
        return cls(events, bounds, name)

    # -- CSV ---------------------------------------------------------------

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        piece = -1
        bounds = set(self.piece_bounds)
        for i, e in enumerate(self.events):
            if i in bounds:
                piece += 1
            w.writerow(list(e.slots()) + [e.velocity, _fmt(e.duration_ms), _fmt(e.ioi_ms), piece])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="\n")
        return text

    @classmethod
    def from_csv(cls, source, name: str | None = None) -> Corpus:
        """Read a corpus CSV from a path or from CSV text."""
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
            text = Path(source).read_text(encoding="utf-8")
            name = name or Path(source).stem
        else:
            text = source
        reader = csv.DictReader(io.StringIO(text))
        missing = [c for c in CSV_HEADER if c not in (reader.fieldnames or [])]
        if missing:
            raise CorpusError(f"missing columns: {', '.join(missing)}")
        events, bounds, last_piece = [], [], None
        for row in reader:
            pitches = tuple(int(float(row[f"p{i}"])) for i in range(1, N_SLOTS + 1))
            sounded = tuple(p for p in pitches if p != -1)
            events.append(Event(sounded, int(float(row["vel"])), float(row["dur_ms"]),
                                float(row["ioi_ms"])))
            if row["piece"] != last_piece:
                bounds.append(len(events) - 1)
                last_piece = row["piece"]
        return cls(events, bounds, name or "corpus")


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


# -- synthetic corpora ------------------------------------------------------


@dataclass
class SynthConfig:
    """Settings for :func:`synth_corpus`.

    Timing values are drawn log-normally (right skewed) and clamped to
    [0, 20000] ms; ``chord_prob`` is the probability an event is a chord.
    """

    n_pieces: int = 8
    events_per_piece: int = 500
    chord_prob: float = 0.65
    chord_size: tuple[int, int] = (2, 8)
    register_start: tuple[int, int] = (40, 80)
    register_step: float = 2.0
    register_limits: tuple[int, int] = (24, 96)
    spread: int = 14
    velocity_mean: float = 64.0
    velocity_step: float = 4.0
    velocity_sd: float = 8.0
    dur_log_mean: float = math.log(300.0)
    dur_log_sd: float = 0.9
    ioi_log_mean: float = math.log(250.0)
    ioi_log_sd: float = 0.8
    # probability that a row is replaced by a transformed form at each cycle
    transform_prob: float = 0.5

    def validate(self):
        for name in ("chord_prob", "transform_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise CorpusError(f"{name} must lie in [0, 1], got {p}")
        lo, hi = self.chord_size
        if not 2 <= lo <= hi <= N_SLOTS:
            raise CorpusError(f"chord_size must satisfy 2 <= lo <= hi <= {N_SLOTS}")
        if self.n_pieces < 1 or self.events_per_piece < 1:
            raise CorpusError("need at least one piece of one event")
        a, b = self.register_limits
        if not 0 <= a < b <= 120:
            raise CorpusError("register_limits must lie within [0, 120]")


class _RowStream:
    """Pitch classes drawn cyclically from a twelve-tone row and its forms."""

    def __init__(self, rng: np.random.Generator, transform_prob: float):
        self.rng = rng
        self.transform_prob = transform_prob
        self.prime = rng.permutation(12)
        self.row = self.prime.copy()
        self.pos = 0

    def next(self) -> int:
        if self.pos == 12:
            self.pos = 0
            if self.rng.random() < self.transform_prob:
                form = self.rng.integers(4)
                t = int(self.rng.integers(12))
                row = self.prime if form < 2 else (12 - self.prime) % 12
                if form % 2:
                    row = row[::-1]
                self.row = (row + t) % 12
        pc = int(self.row[self.pos])
        self.pos += 1
        return pc


def synth_corpus(cfg: SynthConfig | None = None, seed: int = 0, name: str = "synthetic") -> Corpus:
    """Deterministic serial-style corpus with random-walk registers."""
    cfg = cfg or SynthConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    lo_reg, hi_reg = cfg.register_limits
    events: list[Event] = []
    bounds: list[int] = []
    for _ in range(cfg.n_pieces):
        bounds.append(len(events))
        rows = _RowStream(rng, cfg.transform_prob)
        register = float(rng.uniform(*cfg.register_start))
        velocity = cfg.velocity_mean
        for _ in range(cfg.events_per_piece):
            register = float(np.clip(register + rng.normal(0, cfg.register_step), lo_reg, hi_reg))
            velocity = float(np.clip(velocity + rng.normal(0, cfg.velocity_step), 25, 110))
            size = 1
            if rng.random() < cfg.chord_prob:
                size = int(rng.integers(cfg.chord_size[0], cfg.chord_size[1] + 1))
            pitches: set[int] = set()
            tries = 0
            while len(pitches) < size and tries < 4 * size:
                tries += 1
                pc = rows.next()
                # place the pitch class in the octave nearest a jittered register
                centre = register + rng.uniform(-cfg.spread, cfg.spread) * (size > 1)
                p = pc + 12 * round((centre - pc) / 12)
                while p < lo_reg:
                    p += 12
                while p > hi_reg:
                    p -= 12
                pitches.add(int(p))
            vel = int(np.clip(round(velocity + rng.normal(0, cfg.velocity_sd)), 1, 127))
            dur = float(np.clip(round(rng.lognormal(cfg.dur_log_mean, cfg.dur_log_sd)), 0, MAX_TIME_MS))
            ioi = float(np.clip(round(rng.lognormal(cfg.ioi_log_mean, cfg.ioi_log_sd)), 0, MAX_TIME_MS))
            events.append(Event(tuple(sorted(pitches)), vel, dur, ioi))
    return Corpus(events, bounds, name)


# -- splitting, scaling, windowing -----------------------------------------


def split_contiguous(c: Corpus, val_fraction: float = 0.1, lags: int = 0) -> tuple[Corpus, Corpus]:
    """Hold out the final ``ceil(val_fraction * N)`` events, unshuffled.

    Each part must hold at least two windows of ``lags`` inputs, i.e.
    ``lags + 2`` events; pass the training lag count to enforce that.
    """
    if not 0.0 < val_fraction < 0.5:
        raise CorpusError(f"val_fraction must lie in (0, 0.5), got {val_fraction}")
    n_val = math.ceil(val_fraction * len(c))
    n_train = len(c) - n_val
    if n_val < lags + 2 or n_train < lags + 2:
        raise CorpusError(f"corpus of {len(c)} events too short for two windows in each part")
    return c.slice(0, n_train, f"{c.name}-train"), c.slice(n_train, len(c), f"{c.name}-val")


@dataclass
class RobustScaler:
    median: np.ndarray
    iqr: np.ndarray

    def apply(self, data) -> np.ndarray:
        data = _finite(data)
        return (data - self.median) / self.iqr

    def invert(self, data) -> np.ndarray:
        data = _finite(data)
        return data * self.iqr + self.median

    def to_dict(self) -> dict:
        return {"median": self.median.tolist(), "iqr": self.iqr.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> RobustScaler:
        return cls(np.array(d["median"], dtype=float), np.array(d["iqr"], dtype=float))


def _finite(data) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if data.shape[-1] != VECTOR_SIZE:
        raise ValueError(f"last axis must have {VECTOR_SIZE} components, got {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError("non-finite values in scaler input")
    return data


def fit_scaler(train: Corpus | np.ndarray) -> RobustScaler:
    """Per-component median and IQR, fill values included.

    Quartiles use linear interpolation at position ``(n - 1) * q``; a zero
    IQR is replaced by 1.
    """
    m = train.matrix() if isinstance(train, Corpus) else np.asarray(train, dtype=float)
    if m.shape[0] < 2:
        raise CorpusError("need at least 2 events to fit a scaler")
    q1, med, q3 = np.quantile(m, [0.25, 0.5, 0.75], axis=0, method="linear")
    iqr = q3 - q1
    iqr[iqr == 0] = 1.0
    return RobustScaler(med, iqr)


@dataclass
class WindowedDataset:
    inputs: np.ndarray
    targets: np.ndarray
    scaled: bool = False

    def __len__(self):
        return len(self.targets)

    def scale(self, scaler: RobustScaler) -> WindowedDataset:
        if self.scaled:
            raise ValueError("dataset already scaled")
        return WindowedDataset(scaler.apply(self.inputs), scaler.apply(self.targets), True)


def build_windows(c: Corpus, lags: int = 10, cross_pieces: bool = False) -> WindowedDataset:
    if lags < 1:
        raise ValueError("lags must be >= 1")
    m = c.matrix()
    if cross_pieces:
        spans = [(0, len(m))]
    else:
        ends = list(c.piece_bounds[1:]) + [len(m)]
        spans = list(zip(c.piece_bounds, ends))
    xs, ys = [], []
    for start, end in spans:
        n = end - start - lags
        if n <= 0:
            continue
        seg = m[start:end]
        idx = np.arange(n)[:, None] + np.arange(lags)[None, :]
        xs.append(seg[idx])
        ys.append(seg[lags:])
    if not xs:
        raise CorpusError(f"no piece longer than {lags} events")
    return WindowedDataset(np.concatenate(xs), np.concatenate(ys))
