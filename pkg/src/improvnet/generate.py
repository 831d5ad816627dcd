"""Seeded autoregressive generation, output clean-up and the fixpoint probe."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .corpus import Corpus
from .events import DUR, IOI, N_SLOTS, VEL, Event, events_to_matrix

logger = logging.getLogger(__name__)


class GenerationError(ValueError):
    pass


@dataclass
class GenConfig:
    total_events: int = 1000
    reseed_interval: int = 10
    seed: int = 0
    pitch_range: tuple[int, int] = (12, 113)
    velocity_range: tuple[int, int] = (20, 127)
    time_range: tuple[float, float] = (0.0, 15000.0)

    def __post_init__(self):
        if self.reseed_interval < 1:
            raise GenerationError("reseed_interval must be >= 1")
        if self.total_events < 1:
            raise GenerationError("total_events must be >= 1")


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass
class PostResult:
    """Outcome of cleaning one raw prediction.

    ``status`` is ``"accepted"``, ``"partial"`` (some pitches dropped) or
    ``"rejected"``; ``rules`` names every rule that fired.
    """

    status: str
    event: Event | None
    rules: list[str] = field(default_factory=list)
    dropped_pitches: list[int] = field(default_factory=list)


def postprocess(raw, cfg: GenConfig | None = None) -> PostResult:
    """Round a raw 13-vector and apply the output range rules.

    Pitch slots that round to 0 or above are sounded. A sounded pitch
    outside the pitch range is dropped on its own; the event is rejected
    when no pitch survives, or when velocity, duration or ioi falls
    outside its range. Rejection is a result, never an exception.
    """
    cfg = cfg or GenConfig()
    v = round_half_away(raw)
    rules: list[str] = []
    if v.shape != (N_SLOTS + 3,) or not np.all(np.isfinite(v)):
        return PostResult("rejected", None, ["non_finite"])
    lo, hi = cfg.pitch_range
    sounded = sorted({int(p) for p in v[:N_SLOTS] if p >= 0})
    kept = [p for p in sounded if lo <= p <= hi]
    dropped = [p for p in sounded if not lo <= p <= hi]
    if dropped:
        rules.append("pitch_out_of_range")
    if not kept:
        rules.append("no_pitch")
    vlo, vhi = cfg.velocity_range
    if not vlo <= v[VEL] <= vhi:
        rules.append("velocity_out_of_range")
    tlo, thi = cfg.time_range
    if not tlo <= v[DUR] <= thi:
        rules.append("duration_out_of_range")
    if not tlo <= v[IOI] <= thi:
        rules.append("ioi_out_of_range")
    if any(r != "pitch_out_of_range" for r in rules):
        return PostResult("rejected", None, rules, dropped)
    event = Event(tuple(kept), int(v[VEL]), float(v[DUR]), float(v[IOI]))
    return PostResult("partial" if dropped else "accepted", event, rules, dropped)


@dataclass
class GenReport:
    events: list[Event]
    raw: np.ndarray
    outcomes: list[PostResult]
    seed_positions: list[int]
    seed_starts: list[int]

    @property
    def reseed_positions(self) -> list[int]:
        """Prediction counts at which the window was replaced, excluding the initial seeding."""
        return self.seed_positions[1:]

    @property
    def n_rejected(self) -> int:
        return sum(o.status == "rejected" for o in self.outcomes)

    def rejection_log(self) -> list[dict]:
        return [{"prediction": i, "status": o.status, "rules": o.rules, "dropped_pitches": o.dropped_pitches}
                for i, o in enumerate(self.outcomes) if o.status != "accepted"]

    def summary(self) -> dict:
        counts: dict[str, int] = {}
        for o in self.outcomes:
            for r in o.rules:
                counts[r] = counts.get(r, 0) + 1
        return {
            "predictions": len(self.outcomes),
            "accepted": len(self.events),
            "partial": sum(o.status == "partial" for o in self.outcomes),
            "rejected": self.n_rejected,
            "rule_counts": counts,
            "seedings": len(self.seed_positions),
            "seed_positions": self.seed_positions,
            "seed_starts": self.seed_starts,
        }


Predictor = Callable[[np.ndarray], np.ndarray]


def _scaled_predictor(bundle) -> Predictor:
    if callable(bundle) and not hasattr(bundle, "predict_scaled"):
        return bundle
    return bundle.predict_scaled


def generate(bundle, seed_piece: Corpus, cfg: GenConfig | None = None) -> GenReport:
    """Free-run the model from windows of ``seed_piece``, reseeding periodically.

    ``bundle`` is a :class:`~improvnet.model.ModelBundle` or, for tests, any
    callable mapping a scaled ``(lags, 13)`` window to a scaled 13-vector
    (the seed piece is then used unscaled). The window always continues
    from the raw prediction, whether or not clean-up accepts it. Reseeding
    counts predictions, so rejections never move the schedule.
    """
    cfg = cfg or GenConfig()
    lags = bundle.spec.input_shape[0] if hasattr(bundle, "spec") else 10
    seed_m = events_to_matrix(seed_piece.events)
    if len(seed_m) < lags:
        raise GenerationError(f"seed piece has {len(seed_m)} events, need at least {lags}")
    if hasattr(bundle, "scaler"):
        seed_m = bundle.scaler.apply(seed_m)
        unscale = bundle.scaler.invert
    else:
        unscale = lambda a: a  # noqa: E731
    predict = _scaled_predictor(bundle)
    rng = np.random.default_rng(cfg.seed)
    n_starts = len(seed_m) - lags + 1

    seed_positions: list[int] = []
    seed_starts: list[int] = []
    raw = np.empty((cfg.total_events, seed_m.shape[1]))
    outcomes: list[PostResult] = []
    events: list[Event] = []
    window = None
    for k in range(cfg.total_events):
        if k % cfg.reseed_interval == 0:
            start = int(rng.integers(n_starts))
            window = seed_m[start:start + lags].copy()
            seed_positions.append(k)
            seed_starts.append(start)
        pred = np.asarray(predict(window), dtype=float)
        window = np.vstack([window[1:], pred[None]])
        raw[k] = unscale(pred)
        res = postprocess(raw[k], cfg)
        outcomes.append(res)
        if res.event is not None:
            events.append(res.event)
    return GenReport(events, raw, outcomes, seed_positions, seed_starts)


def convergence_probe(bundle, window, max_steps: int = 100, eps: float = 1e-3,
                      hold: int = 5) -> int | None:
    """Steps until free-running predictions stop changing, or None.

    Step ``k`` compares prediction ``k`` with prediction ``k - 1``, the
    window's last vector standing in for prediction 0. The result is the
    first ``k`` whose max absolute change (scaled units) is below ``eps``
    and stays below it for ``hold`` further steps. ``window`` is in scaled
    units and there is no reseeding.
    """
    predict = _scaled_predictor(bundle)
    w = np.array(window, dtype=float)
    prev = w[-1]
    run_start = None
    for k in range(1, max_steps + 1):
        pred = np.asarray(predict(w), dtype=float)
        if np.max(np.abs(pred - prev)) < eps:
            if run_start is None:
                run_start = k
            if k - run_start >= hold:
                return run_start
        else:
            run_start = None
        prev = pred
        w = np.vstack([w[1:], pred[None]])
    return None
