"""k-sample Anderson-Darling test (Scholz and Stephens, 1987).

Two forms of the statistic are provided. ``"continuous"`` is the rank
form, which handles ties by evaluating the empirical distributions only at
distinct values. ``"discrete"`` is the midrank form meant for heavily tied
data such as MIDI pitch and velocity.

The standardised statistic is ``T = (AD - (k - 1)) / sigma_N`` with the
exact finite-sample variance. Asymptotic p-values come from the limiting
law of the criterion, ``sum_j Y_j / (j (j + 1))`` with ``Y_j`` iid
chi-square on ``k - 1`` degrees of freedom, evaluated at ``T`` by
characteristic-function inversion. The interpolation table of
critical values is kept for cross-checks (:func:`table_pvalue`).

For the discrete form the limit depends on the tie pattern: with pooled
value proportions ``pi_1..pi_L`` the criterion tends to
``sum_r lambda_r Y_r`` over the ``L - 1`` eigenvalues of the limiting
quadratic form (:func:`tie_weights`). That law is used whenever the
pooled data contain ties (and at most ``MAX_TIE_LEVELS`` distinct values);
untied data keep the standardised law above, whose exact finite-sample
variance serves small samples better.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, special

VERSIONS = ("continuous", "discrete")

# critical points of T: tm = b0 + b1 / sqrt(m) + b2 / m, m = k - 1
_TABLE_P = np.array([0.25, 0.1, 0.05, 0.025, 0.01, 0.005, 0.001, 0.0005, 0.0001, 0.00001])
_TABLE_B0 = np.array([0.675, 1.281, 1.645, 1.96, 2.326, 2.573, 3.085, 3.29, 3.729, 4.417])
_TABLE_B1 = np.array([-0.245, 0.25, 0.678, 1.149, 1.822, 2.364, 3.615, 4.218, 5.5, 7.511])
_TABLE_B2 = np.array([-0.105, -0.305, -0.362, -0.391, -0.396, -0.345, -0.154, -0.069, 0.151, 0.442])

# p below this is reported as 0 in text tables
P_FLOOR = 1e-15

# above this many distinct values the discrete form uses the untied limit
MAX_TIE_LEVELS = 1000


class ADError(ValueError):
    pass


@dataclass
class ADResult:
    ad: float
    t_ad: float
    p_value: float
    version: str
    method: str
    sigma: float
    sizes: tuple[int, ...]
    n_resamples: int = 0
    seed: int | None = None
    # null law behind an asymptotic p: "untied" or "tie-conditional"
    law: str = ""

    def describe(self) -> str:
        p = "0" if self.p_value < P_FLOOR else ("<0.001" if self.p_value < 0.001 else f"{self.p_value:.3f}")
        return f"{self.t_ad:.4g} ({p})"


def _prepare(samples):
    samples = [np.asarray(s, dtype=float).ravel() for s in samples]
    if len(samples) < 2:
        raise ADError("need at least two samples")
    for i, s in enumerate(samples):
        if s.size == 0:
            raise ADError(f"sample {i} is empty")
        if not np.all(np.isfinite(s)):
            raise ADError(f"sample {i} has non-finite values")
    pooled = np.concatenate(samples)
    labels = np.concatenate([np.full(s.size, i) for i, s in enumerate(samples)])
    order = np.argsort(pooled, kind="stable")
    z = pooled[order]
    zstar, first, counts = np.unique(z, return_index=True, return_counts=True)
    if zstar.size < 2:
        raise ADError("all pooled observations are identical")
    return labels[order], first, counts, np.array([s.size for s in samples])


def _statistic(labels, first, lj, n, version):
    """AD criterion for each row of ``labels`` (shape (R, N), pooled sorted order)."""
    labels = np.atleast_2d(labels)
    k = n.size
    big_n = labels.shape[1]
    last = first + lj - 1
    b_le = np.cumsum(lj).astype(float)
    total = np.zeros(labels.shape[0])
    for i in range(k):
        cum = np.cumsum(labels == i, axis=1, dtype=float)
        m_le = cum[:, last]
        if version == "continuous":
            # distinct values except the last
            num = (big_n * m_le[:, :-1] - b_le[:-1] * n[i]) ** 2
            den = b_le[:-1] * (big_n - b_le[:-1])
            total += (lj[:-1] / big_n * num / den).sum(axis=1) / n[i]
        else:
            f = m_le - np.concatenate([np.zeros((labels.shape[0], 1)), m_le[:, :-1]], axis=1)
            m_a = m_le - f / 2.0
            b_a = b_le - lj / 2.0
            num = (big_n * m_a - b_a * n[i]) ** 2
            den = b_a * (big_n - b_a) - big_n * lj / 4.0
            total += (lj / big_n * num / den).sum(axis=1) / n[i]
    if version == "discrete":
        total *= (big_n - 1.0) / big_n
    return total


def ad_variance(n: Sequence[int]) -> float:
    """Exact null variance of the k-sample AD criterion for sample sizes ``n``."""
    n = np.asarray(n, dtype=float)
    k = n.size
    big_n = n.sum()
    if big_n < 4:
        raise ADError("pooled sample size must be at least 4")
    bn = int(big_n)
    hh = float(np.sum(1.0 / n))
    h = float(np.sum(1.0 / np.arange(1, bn)))
    # g = sum_{i=1}^{N-2} sum_{j=i+1}^{N-1} 1 / ((N - i) j)
    inv = 1.0 / np.arange(1, bn)
    tail = np.cumsum(inv[::-1])[::-1]  # tail[j-1] = sum_{l>=j} 1/l
    i = np.arange(1, bn - 1)
    g = float(np.sum(tail[i] / (big_n - i)))
    a = (4 * g - 6) * (k - 1) + (10 - 6 * g) * hh
    b = (2 * g - 4) * k ** 2 + 8 * h * k + (2 * g - 14 * h - 4) * hh - 8 * h + 4 * g - 6
    c = (6 * h + 2 * g - 2) * k ** 2 + (4 * h - 4 * g + 6) * k + (2 * h - 6) * hh + 4 * h
    d = (2 * h + 6) * k ** 2 - 4 * h * k
    return (a * big_n ** 3 + b * big_n ** 2 + c * big_n + d) / ((big_n - 1) * (big_n - 2) * (big_n - 3))


# -- limiting distribution -------------------------------------------------

_J_EXPLICIT = 200
_SERIES_TERMS = 12


@functools.lru_cache(maxsize=None)
def _series_sums():
    j = np.arange(_J_EXPLICIT + 1, 2_000_001, dtype=float)
    w = 1.0 / (j * (j + 1.0))
    sums = [1.0 / (_J_EXPLICIT + 1)]  # telescoping
    for r in range(2, _SERIES_TERMS + 1):
        sums.append(float(np.sum(w ** r)))
    return np.array(sums)


_W = 1.0 / (np.arange(1, _J_EXPLICIT + 1) * np.arange(2, _J_EXPLICIT + 2.0))


@functools.lru_cache(maxsize=None)
def _inversion_grid(m):
    """Quadrature nodes, weights and cf values on (0, t_max] for ``m``."""
    # |cf(t)| = prod (1 + 4 t^2 w_j^2)^(-m/4); stop once it is below exp(-36)
    t_max = 1.0
    while 0.25 * m * np.sum(np.log1p(4.0 * t_max ** 2 * _W ** 2)) < 36.0:
        t_max *= 1.5
    if 2.0 * t_max / ((_J_EXPLICIT + 1) * (_J_EXPLICIT + 2)) >= 0.5:
        raise ADError(f"characteristic function range too wide for m={m}")
    x16, w16 = np.polynomial.legendre.leggauss(16)
    width = 0.25
    n_panels = int(math.ceil(t_max / width))
    left = np.arange(n_panels) * width
    t = (left[:, None] + (x16[None, :] + 1.0) * width / 2.0).ravel()
    w = np.tile(w16 * width / 2.0, n_panels)
    s = _series_sums()
    explicit = np.zeros(t.size, dtype=complex)
    for wj in _W:
        explicit += np.log1p(-2j * t * wj)
    z = 2j * t
    far = np.zeros(t.size, dtype=complex)
    zr = np.ones(t.size, dtype=complex)
    for r in range(1, _SERIES_TERMS + 1):
        zr = zr * z
        far -= zr * s[r - 1] / r
    cf = np.exp(-0.5 * m * (explicit + far))
    return t, w / t, cf


def _sf_inversion(x, m):
    # Gil-Pelaez: P(L > x) = 1/2 + (1/pi) int_0^inf Im(cf(t) e^{-itx}) / t dt
    t, wt, cf = _inversion_grid(m)
    val = float(np.dot(wt, (cf * np.exp(-1j * t * x)).imag))
    return 0.5 + val / math.pi


@functools.lru_cache(maxsize=None)
def _tail_constants(m):
    j = np.arange(2, 2_000_001, dtype=float)
    w = 1.0 / (j * (j + 1.0))
    log_mgf = -0.5 * m * float(np.sum(np.log1p(-2.0 * w)))
    tilted_mean = m * float(np.sum(w / (1.0 - 2.0 * w)))
    return log_mgf, tilted_mean


def _sf_tail(x, m):
    # dominant term Y_1 / 2 with the rest R handled by exponential tilting
    log_mgf, rbar = _tail_constants(m)
    corr = max(1.0 - rbar / x, 1e-3) ** (m / 2.0 - 1.0)
    return float(special.chdtrc(m, 2.0 * x)) * math.exp(log_mgf) * corr


def limit_sf(x: float, m: int) -> float:
    """P(L >= x) for the limiting AD law with ``m = k - 1``."""
    if x <= 0:
        return 1.0
    sf_tail = _sf_tail(x, m)
    if sf_tail < 1e-7:
        return sf_tail
    return float(min(1.0, max(0.0, _sf_inversion(x, m))))


def asymptotic_pvalue(t_ad: float, k: int) -> float:
    m = k - 1
    sigma_inf = math.sqrt(2.0 * m * (math.pi ** 2 / 3.0 - 3.0))
    return limit_sf(m + sigma_inf * t_ad, m)


def tie_weights(counts) -> np.ndarray:
    """Weights of the limiting chi-square mixture for the discrete criterion.

    ``counts`` are the pooled multiplicities of the distinct values in
    ascending order. The midrank term at value ``j`` is a linear function
    of the cell proportions, so the criterion is asymptotically a quadratic
    form in a multinomial Gaussian vector; its eigenvalues sum to 1.
    """
    lj = np.asarray(counts, dtype=float)
    pi = lj / lj.sum()
    below = np.concatenate([[0.0], np.cumsum(pi)[:-1]])
    mid = below + pi / 2.0
    w = pi / (mid * (1.0 - mid) - pi / 4.0)
    c = np.tril(np.ones((pi.size, pi.size)), -1) + 0.5 * np.eye(pi.size)
    cov = np.diag(pi) - np.outer(pi, pi)
    sw = np.sqrt(w)
    lam = np.linalg.eigvalsh(sw[:, None] * (c @ cov @ c.T) * sw[None, :])[::-1]
    return lam[lam > 1e-12 * lam[0]]


def _weighted_tail(x, lam, m):
    # largest weight dominates; the rest is handled by exponential tilting
    ratio = lam[1:] / lam[0]
    log_mgf = -0.5 * m * float(np.sum(np.log1p(-ratio)))
    rbar = m * float(np.sum(lam[1:] / (1.0 - ratio)))
    corr = max(1.0 - rbar / x, 1e-3) ** (m / 2.0 - 1.0)
    return float(special.chdtrc(m, x / lam[0])) * math.exp(log_mgf) * corr


def weighted_chi2_sf(x: float, weights, m: int) -> float:
    """P(sum_r w_r Y_r >= x) with ``Y_r`` iid chi-square on ``m`` degrees of freedom.

    Imhof's integral: a regular quadrature up to ``a = 4 / max(w)``, then two
    Fourier-type integrals whose amplitudes vary slowly because the phase
    ``sum arctan(w u)`` flattens out.
    """
    lam = np.sort(np.asarray(weights, dtype=float))[::-1]
    lam = lam[lam > 0]
    if lam.size == 0:
        raise ADError("no positive weights")
    if x <= 0:
        return 1.0
    if lam.size == 1:
        return float(special.chdtrc(m, x / lam[0]))
    if lam[1] < lam[0] * (1 - 1e-9):
        tail = _weighted_tail(x, lam, m)
        if tail < 1e-7:
            return tail
    half_m = 0.5 * m

    def phase(u):
        return half_m * float(np.sum(np.arctan(lam * u)))

    def amp(u):
        return math.exp(-0.25 * m * float(np.sum(np.log1p((lam * u) ** 2)))) / u

    def head_f(u):
        if u == 0.0:
            return 0.5 * (m * lam.sum() - x)
        return math.sin(phase(u) - 0.5 * x * u) * amp(u)

    a = 4.0 / lam[0]
    head = integrate.quad(head_f, 0.0, a, limit=500, epsabs=1e-13, epsrel=1e-11)[0]
    s1 = integrate.quad(lambda u: math.sin(phase(u)) * amp(u), a, np.inf,
                        weight="cos", wvar=0.5 * x, limlst=200)[0]
    s2 = integrate.quad(lambda u: math.cos(phase(u)) * amp(u), a, np.inf,
                        weight="sin", wvar=0.5 * x, limlst=200)[0]
    return float(min(1.0, max(0.0, 0.5 + (head + s1 - s2) / math.pi)))


def table_critical_points(k: int) -> np.ndarray:
    m = k - 1
    return _TABLE_B0 + _TABLE_B1 / math.sqrt(m) + _TABLE_B2 / m


def table_pvalue(t_ad: float, k: int) -> float:
    """Log-odds quadratic interpolation of the critical-value table.

    Reliable only for p in roughly [1e-5, 0.25].
    """
    tm = table_critical_points(k)
    lp = np.log(_TABLE_P / (1.0 - _TABLE_P))
    coef = np.polyfit(tm, lp, 2)
    return float(special.expit(np.polyval(coef, t_ad)))


# -- public test -----------------------------------------------------------


def _all_labelings(n):
    """Every assignment of pooled positions to samples of sizes ``n``."""
    big_n = int(sum(n))

    def rec(remaining, i):
        if i == len(n) - 1:
            yield {i: remaining}
            return
        for combo in itertools.combinations(remaining, int(n[i])):
            chosen = set(combo)
            rest = tuple(p for p in remaining if p not in chosen)
            for sub in rec(rest, i + 1):
                sub[i] = combo
                yield sub

    for assign in rec(tuple(range(big_n)), 0):
        lab = np.empty(big_n, dtype=int)
        for i, pos in assign.items():
            lab[list(pos)] = i
        yield lab


def n_labelings(n) -> int:
    total, out = int(sum(n)), 1
    for size in n:
        out *= math.comb(total, int(size))
        total -= int(size)
    return out


def ad_ksample(samples, version: str = "continuous", method: str = "asymptotic",
               n_resamples: int = 10000, seed: int | None = 0, max_exact: int = 500_000) -> ADResult:
    """k-sample Anderson-Darling test.

    ``method`` is ``"asymptotic"``, ``"permutation"`` (Monte-Carlo
    relabelling of the pooled data, p = (r + 1) / (n_resamples + 1)) or
    ``"exact"`` (all distinct relabellings, p = r / total).
    """
    if version not in VERSIONS:
        raise ADError(f"version must be one of {VERSIONS}")
    labels, first, lj, n = _prepare(samples)
    k = n.size
    ad = float(_statistic(labels, first, lj, n, version)[0])
    sigma = math.sqrt(ad_variance(n))
    t_ad = (ad - (k - 1)) / sigma
    sizes = tuple(int(x) for x in n)
    tol = 1e-9 * max(abs(ad), 1.0)
    if method == "asymptotic":
        if version == "discrete" and lj.size < labels.size and lj.size <= MAX_TIE_LEVELS:
            p = weighted_chi2_sf(ad, tie_weights(lj), k - 1)
            return ADResult(ad, t_ad, p, version, method, sigma, sizes, law="tie-conditional")
        return ADResult(ad, t_ad, asymptotic_pvalue(t_ad, k), version, method, sigma, sizes, law="untied")
    if method == "permutation":
        rng = np.random.default_rng(seed)
        chunk = max(1, 4_000_000 // (labels.size * k))
        hits = 0
        done = 0
        while done < n_resamples:
            r = min(chunk, n_resamples - done)
            perms = rng.permuted(np.broadcast_to(labels, (r, labels.size)), axis=1)
            hits += int(np.sum(_statistic(perms, first, lj, n, version) >= ad - tol))
            done += r
        p = (hits + 1) / (n_resamples + 1)
        return ADResult(ad, t_ad, p, version, method, sigma, sizes, n_resamples, seed)
    if method == "exact":
        total = n_labelings(n)
        if total > max_exact:
            raise ADError(f"{total} relabellings exceed max_exact={max_exact}")
        hits = 0
        batch = []
        for lab in _all_labelings(n):
            batch.append(lab)
            if len(batch) == 4096:
                hits += int(np.sum(_statistic(np.array(batch), first, lj, n, version) >= ad - tol))
                batch = []
        if batch:
            hits += int(np.sum(_statistic(np.array(batch), first, lj, n, version) >= ad - tol))
        return ADResult(ad, t_ad, hits / total, version, method, sigma, sizes, total)
    raise ADError(f"unknown method {method!r}")
