"""Corpus description: counts, PCA variance, autoregression lags, density tables."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as sps

from ..events import Event, events_to_matrix


@dataclass
class DescriptiveStats:
    n_events: int
    n_notes: int
    mean_notes_per_event: float
    chord_ratio: float


def descriptive(events: Sequence[Event]) -> DescriptiveStats:
    """Table-style counts; a chord is an event with two or more pitches."""
    events = list(getattr(events, "events", events))
    if not events:
        raise ValueError("no events")
    n_notes = sum(len(e.pitches) for e in events)
    chords = sum(e.is_chord for e in events)
    return DescriptiveStats(len(events), n_notes, n_notes / len(events), chords / len(events))


@dataclass
class PcaResult:
    eigenvalues: np.ndarray
    pct_variance: np.ndarray
    components: np.ndarray


def pca_variance(data) -> PcaResult:
    """Eigen-decompose the covariance of unscaled, mean-centred rows.

    Percentages are eigenvalue / trace * 100, sorted descending.
    """
    m = np.asarray(data, dtype=float)
    if m.ndim != 2 or m.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    cov = np.cov(m, rowvar=False, ddof=1)
    vals, vecs = np.linalg.eigh(np.atleast_2d(cov))
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vals[np.abs(vals) < 1e-12 * max(vals[0], 1e-300)] = 0.0
    trace = vals.sum()
    pct = vals / trace * 100.0 if trace > 0 else np.zeros_like(vals)
    return PcaResult(vals, pct, vecs[:, order].T)


def note_streams(events: Sequence[Event]) -> dict[str, np.ndarray]:
    """Expand events into per-note pitch, velocity, duration and ioi.

    Chord notes share the chord's velocity and duration; within a chord the
    note-to-note ioi is 0 and the last note carries the event's ioi.
    """
    events = list(getattr(events, "events", events))
    pitch, vel, dur, ioi = [], [], [], []
    for e in events:
        k = len(e.pitches)
        pitch.extend(e.pitches)
        vel.extend([e.velocity] * k)
        dur.extend([e.duration_ms] * k)
        ioi.extend([0.0] * (k - 1) + [e.ioi_ms])
    return {"pitch": np.array(pitch, dtype=float), "velocity": np.array(vel, dtype=float),
            "duration": np.array(dur, dtype=float), "ioi": np.array(ioi, dtype=float)}


def event_matrix(events) -> np.ndarray:
    return events_to_matrix(list(getattr(events, "events", events)))


@dataclass
class ARLagResult:
    intercept: float
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_values: np.ndarray
    suggested_order: int

    def table(self) -> list[dict]:
        return [{"lag": i + 1, "coef": float(c), "se": float(s), "t": float(t),
                 "significant": bool(abs(t) > 1.96)}
                for i, (c, s, t) in enumerate(zip(self.coefficients, self.std_errors, self.t_values))]


def ar_lag_analysis(series, max_lag: int = 15) -> ARLagResult:
    """OLS autoregression of order ``max_lag`` with per-lag t statistics.

    The suggested order is the largest lag with ``|t| > 1.96`` (0 if none).
    """
    x = np.asarray(series, dtype=float)
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    if len(x) <= 3 * max_lag:
        raise ValueError(f"series of {len(x)} too short for {max_lag} lags")
    n = len(x) - max_lag
    design = np.column_stack([np.ones(n)] + [x[max_lag - k:len(x) - k] for k in range(1, max_lag + 1)])
    y = x[max_lag:]
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise np.linalg.LinAlgError("singular design matrix (constant or degenerate series)")
    beta, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ beta
    dof = n - design.shape[1]
    sigma2 = resid @ resid / dof
    cov = sigma2 * np.linalg.inv(design.T @ design)
    se = np.sqrt(np.diag(cov))
    t = beta / se
    sig = np.flatnonzero(np.abs(t[1:]) > 1.96)
    order = int(sig[-1] + 1) if sig.size else 0
    return ARLagResult(float(beta[0]), beta[1:], se[1:], t[1:], order)


@dataclass
class DensityTable:
    edges: np.ndarray
    counts: np.ndarray
    overflow: int
    total: int

    @property
    def mass(self) -> np.ndarray:
        """Fraction of all values in each bin."""
        return self.counts / self.total

    @property
    def density(self) -> np.ndarray:
        """Mass per unit width, so bins plus overflow integrate to 1."""
        return self.mass / np.diff(self.edges)

    @property
    def overflow_mass(self) -> float:
        return self.overflow / self.total

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lo", "hi", "count", "mass", "density"])
        for lo, hi, c, ms, d in zip(self.edges[:-1], self.edges[1:], self.counts, self.mass, self.density):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c), repr(float(ms)), repr(float(d))])
        w.writerow(["overflow", "", self.overflow, repr(self.overflow_mass), ""])
        return buf.getvalue()


def density_export(values, truncate_at: float, bins: int = 50, lower: float | None = None) -> DensityTable:
    """Equal-width histogram over ``[lower, truncate_at]`` plus an overflow count.

    ``lower`` defaults to the smallest value (or ``truncate_at - 1`` when
    every value lies beyond the truncation point).
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values")
    inside = v[v <= truncate_at]
    if lower is None:
        lower = float(inside.min()) if inside.size else truncate_at - 1.0
        if lower == truncate_at:
            lower = truncate_at - 1.0
    edges = np.linspace(lower, truncate_at, bins + 1)
    counts, _ = np.histogram(inside[inside >= lower], bins=edges)
    return DensityTable(edges, counts, int(np.sum(v > truncate_at)), int(v.size))


FEATURES = ("pitch", "velocity", "duration", "ioi")
DEFAULT_VERSIONS = {"pitch": "discrete", "velocity": "discrete",
                    "duration": "continuous", "ioi": "continuous"}


def distinctiveness_grid(reference: dict[str, Sequence[Event]], generated: Sequence[Event],
                         versions: dict[str, str] | None = None, method: str = "asymptotic",
                         **kw) -> list[dict]:
    """AD comparisons of generated notes against each reference, per feature.

    With references ``{"corpus": ..., "seed": ...}`` this yields the
    8-cell grid (2 comparisons by 4 note features).
    """
    from .ad import ad_ksample

    versions = {**DEFAULT_VERSIONS, **(versions or {})}
    gen = note_streams(generated)
    cells = []
    for ref_name, ref_events in reference.items():
        ref = note_streams(ref_events)
        for feat in FEATURES:
            res = ad_ksample([gen[feat], ref[feat]], versions[feat], method, **kw)
            cells.append({"comparison": ref_name, "feature": feat, "result": res})
    return cells


def ks_uniform_distance(pvalues) -> float:
    """Kolmogorov distance between p-values and the uniform law."""
    return float(sps.kstest(np.asarray(pvalues, dtype=float), "uniform").statistic)
