"""Normality tests, rank correlations and the per-cell correlation analysis."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy import stats as sps

log = logging.getLogger(__name__)

MODERATE_CORRELATION = 0.3
AD_CRITICAL_05 = 0.787
SIGNIFICANCE_LEVELS = (0.001, 0.01, 0.05)
SW_MAX_N = 5000


class SampleSizeError(ValueError):
    pass


class DegenerateSampleError(ValueError):
    pass


class SelectionError(LookupError):
    pass


@dataclass(frozen=True)
class SampleSummary:
    n: int
    mean: float
    std: float
    skewness: float
    kurtosis: float  # excess
    bin_edges: np.ndarray
    counts: np.ndarray


@dataclass(frozen=True)
class NormalityReport:
    shapiro: tuple[float, float]
    anderson: tuple[float, float]
    dagostino: tuple[float, float]


@dataclass(frozen=True)
class CorrelationReport:
    spearman: tuple[float, float]
    kendall: tuple[float, float]
    n: int


@dataclass(frozen=True)
class TrendFit:
    slope: float
    intercept: float
    r: float


def _sample(xs, min_n):
    x = np.asarray(xs, dtype=float).ravel()
    if x.size < min_n:
        raise SampleSizeError(f"need at least {min_n} observations, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample contains non-finite values")
    return x


def _moments(x):
    d = x - x.mean()
    m2 = np.mean(d**2)
    if m2 <= 0 or np.ptp(x) == 0:
        raise DegenerateSampleError("sample has zero variance")
    return m2, np.mean(d**3), np.mean(d**4)


def summarize(xs) -> SampleSummary:
    x = _sample(xs, 3)
    m2, m3, m4 = _moments(x)
    counts, edges = np.histogram(x, bins="fd")
    return SampleSummary(x.size, float(x.mean()), float(x.std(ddof=1)), float(m3 / m2**1.5),
                         float(m4 / m2**2 - 3.0), edges, counts)


def _poly(c, x):
    return sum(ci * x**i for i, ci in enumerate(c))


def shapiro_wilk(xs) -> tuple[float, float]:
    """W statistic and p-value (Royston 1995 approximation, 3 <= n <= 5000)."""
    x = np.sort(_sample(xs, 3))
    n = x.size
    if n > SW_MAX_N:
        raise SampleSizeError(f"Shapiro-Wilk approximation valid for n <= {SW_MAX_N}, got {n}")
    if x[-1] == x[0]:
        raise DegenerateSampleError("sample has zero variance")

    if n == 3:
        a = np.array([-math.sqrt(0.5), 0.0, math.sqrt(0.5)])
    else:
        m = special.ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
        mm = float(m @ m)
        u = 1.0 / math.sqrt(n)
        c = m / math.sqrt(mm)
        an = c[-1] + _poly([0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056], u)
        a = np.empty(n)
        if n > 5:
            an1 = c[-2] + _poly([0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633], u)
            phi = (mm - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * an**2 - 2 * an1**2)
            a[2:-2] = m[2:-2] / math.sqrt(phi)
            a[[0, 1, -2, -1]] = [-an, -an1, an1, an]
        else:
            phi = (mm - 2 * m[-1] ** 2) / (1 - 2 * an**2)
            a[1:-1] = m[1:-1] / math.sqrt(phi)
            a[[0, -1]] = [-an, an]

    xc = x - x.mean()
    w = float((a @ x) ** 2 / (xc @ xc))
    w = min(w, 1.0)

    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return w, float(min(max(p, 0.0), 1.0))
    if n <= 11:
        gamma = _poly([-2.273, 0.459], n)
        lw = math.log1p(-w) if w < 1 else -math.inf
        if lw >= gamma:
            return w, 1e-99
        z_w = -math.log(gamma - lw)
        mu = _poly([0.5440, -0.39978, 0.025054, -6.714e-4], n)
        sigma = math.exp(_poly([1.3822, -0.77857, 0.062767, -0.0020322], n))
    else:
        if w >= 1:
            return w, 1.0
        ln_n = math.log(n)
        z_w = math.log1p(-w)
        mu = _poly([-1.5861, -0.31082, -0.083751, 0.0038915], ln_n)
        sigma = math.exp(_poly([-0.4803, -0.082676, 0.0030302], ln_n))
    p = float(special.ndtr(-(z_w - mu) / sigma))
    return w, p


def shapiro_wilk_large(xs, seed: int = 0) -> tuple[float, float]:
    """Shapiro-Wilk on at most 5000 points; larger samples are uniformly subsampled."""
    x = _sample(xs, 3)
    if x.size > SW_MAX_N:
        log.warning("Shapiro-Wilk: subsampling %d observations to %d", x.size, SW_MAX_N)
        x = np.random.default_rng(seed).choice(x, SW_MAX_N, replace=False)
    return shapiro_wilk(x)


def anderson_darling(xs) -> tuple[float, float]:
    """Modified A2* for composite normality (mean and variance estimated) and its 5% critical value."""
    x = np.sort(_sample(xs, 8))
    n = x.size
    _moments(x)
    z = (x - x.mean()) / x.std(ddof=1)
    i = np.arange(1, n + 1)
    s = np.sum((2 * i - 1) * (special.log_ndtr(z) + special.log_ndtr(-z[::-1])))
    a2 = -n - s / n
    return float(a2 * (1 + 0.75 / n + 2.25 / n**2)), AD_CRITICAL_05


def _skew_z(g1, n):
    y = g1 * math.sqrt((n + 1) * (n + 3) / (6.0 * (n - 2)))
    beta2 = 3.0 * (n**2 + 27 * n - 70) * (n + 1) * (n + 3) / ((n - 2.0) * (n + 5) * (n + 7) * (n + 9))
    w2 = -1 + math.sqrt(2 * (beta2 - 1))
    delta = 1 / math.sqrt(0.5 * math.log(w2))
    alpha = math.sqrt(2.0 / (w2 - 1))
    return delta * math.asinh(y / alpha)


def _kurt_z(b2, n):
    mean = 3.0 * (n - 1) / (n + 1)
    var = 24.0 * n * (n - 2) * (n - 3) / ((n + 1.0) ** 2 * (n + 3) * (n + 5))
    x = (b2 - mean) / math.sqrt(var)
    sqrtbeta1 = (6.0 * (n * n - 5 * n + 2) / ((n + 7) * (n + 9))
                 * math.sqrt(6.0 * (n + 3) * (n + 5) / (n * (n - 2) * (n - 3))))
    A = 6.0 + 8.0 / sqrtbeta1 * (2.0 / sqrtbeta1 + math.sqrt(1 + 4.0 / sqrtbeta1**2))
    term1 = 1 - 2 / (9.0 * A)
    denom = 1 + x * math.sqrt(2 / (A - 4.0))
    term2 = math.copysign(abs((1 - 2.0 / A) / denom) ** (1 / 3.0), denom) if denom != 0 else math.inf
    return (term1 - term2) / math.sqrt(2 / (9.0 * A))


def dagostino_k2(xs) -> tuple[float, float]:
    """D'Agostino-Pearson omnibus K2 = Z(g1)^2 + Z(b2)^2 with a chi2(2) p-value."""
    x = _sample(xs, 20)
    n = x.size
    m2, m3, m4 = _moments(x)
    k2 = _skew_z(m3 / m2**1.5, n) ** 2 + _kurt_z(m4 / m2**2, n) ** 2
    return float(k2), float(math.exp(-k2 / 2))


def normality(xs, seed: int = 0) -> NormalityReport:
    return NormalityReport(shapiro_wilk_large(xs, seed), anderson_darling(xs), dagostino_k2(xs))


def rank_average(x):
    """Ranks 1..n with ties given their average rank."""
    x = np.asarray(x)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    first = np.r_[True, xs[1:] != xs[:-1]]
    group = np.cumsum(first) - 1
    starts = np.r_[np.flatnonzero(first), x.size]
    avg = 0.5 * (starts[:-1] + starts[1:] + 1)
    ranks = np.empty(x.size)
    ranks[order] = avg[group]
    return ranks


def _paired(xs, ys):
    x = np.asarray(xs, dtype=float).ravel()
    y = np.asarray(ys, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 3:
        raise SampleSizeError(f"need at least 3 pairs, got {x.size}")
    return x, y


def spearman(xs, ys) -> tuple[float, float]:
    x, y = _paired(xs, ys)
    rx, ry = rank_average(x), rank_average(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = math.sqrt((rx @ rx) * (ry @ ry))
    if den == 0:
        raise DegenerateSampleError("correlation undefined for constant input")
    rho = float(np.clip((rx @ ry) / den, -1.0, 1.0))
    n = x.size
    if abs(rho) == 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1 - rho * rho))
    return rho, float(2 * sps.t.sf(abs(t), n - 2))


def _dense(x):
    _, inv = np.unique(x, return_inverse=True)
    return inv.ravel()


def _tie_sums(x):
    t = np.unique(x, return_counts=True)[1].astype(np.int64)
    t = t[t > 1]
    return (int(np.sum(t * (t - 1) // 2)), int(np.sum(t * (t - 1) * (2 * t + 5))),
            int(np.sum(t * (t - 1))), int(np.sum(t * (t - 1) * (t - 2))))


def count_inversions(y) -> int:
    """Pairs i < j with y[i] > y[j], by bottom-up merging."""
    arr = np.asarray(y).copy()
    n = arr.size
    pos = np.arange(n)
    total = 0
    width = 1
    while width < n:
        block = pos // (2 * width)
        side = (pos // width) % 2
        order = np.lexsort((side, arr, block))
        start = block * 2 * width
        right = side[order] == 1
        src = order[right]
        blk_start = start[order][right]
        merged_pos = pos[right] - blk_start
        k = src - blk_start - width
        left_len = np.minimum(width, n - blk_start)
        total += int(np.sum(left_len - (merged_pos - k)))
        arr = arr[order]
        width *= 2
    return total


def kendall_counts(xs, ys):
    """(concordant, discordant, x-tied pairs, y-tied pairs, jointly tied pairs)."""
    x, y = _paired(xs, ys)
    dx, dy = _dense(x), _dense(y)
    order = np.lexsort((dy, dx))
    discordant = count_inversions(dy[order])
    n = x.size
    n0 = n * (n - 1) // 2
    n1 = _tie_sums(dx)[0]
    n2 = _tie_sums(dy)[0]
    n3 = _tie_sums(dx * (int(dy.max()) + 1) + dy)[0]
    concordant = n0 - n1 - n2 + n3 - discordant
    return concordant, discordant, n1, n2, n3


def kendall_tau(xs, ys) -> tuple[float, float]:
    """Kendall tau-b and a two-sided p-value from the tie-adjusted normal approximation."""
    x, y = _paired(xs, ys)
    n = x.size
    c, d, n1, n2, _ = kendall_counts(x, y)
    n0 = n * (n - 1) // 2
    if n0 == n1 or n0 == n2:
        raise DegenerateSampleError("correlation undefined: all pairs tied")
    tau = (c - d) / math.sqrt(float((n0 - n1) * (n0 - n2)))
    tau = min(max(tau, -1.0), 1.0)
    _, vt, t1, t2 = _tie_sums(_dense(x))
    _, vu, u1, u2 = _tie_sums(_dense(y))
    var = ((n * (n - 1) * (2 * n + 5) - vt - vu) / 18.0
           + t1 * u1 / (2.0 * n * (n - 1))
           + t2 * u2 / (9.0 * n * (n - 1) * (n - 2)))
    if var <= 0:
        return tau, 1.0
    z = (c - d) / math.sqrt(var)
    return tau, float(min(1.0, 2 * special.ndtr(-abs(z))))


def correlate(depths, zs) -> CorrelationReport:
    x, y = _paired(depths, zs)
    return CorrelationReport(spearman(x, y), kendall_tau(x, y), x.size)


def subsample(dataset, zs, camera: int, action: int, joint: int):
    """All (depth, z) pairs of one joint over frames seen by ``camera`` during ``action``."""
    if dataset.depth is None:
        raise ValueError("dataset has no depth field")
    m = (dataset.cameras == camera) & (dataset.actions == action)
    if not np.any(m):
        raise SelectionError(f"no frames for camera {camera}, action {action}")
    return dataset.depth[m, joint], np.asarray(zs)[m, joint]


def significance_summary(reports) -> dict:
    """Fractions of cells with a significant Spearman correlation at each level, and the negative fraction."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports")
    p = np.array([r.spearman[1] for r in reports])
    rho = np.array([r.spearman[0] for r in reports])
    out = {f"significant@{a:g}": float(np.mean(p < a)) for a in SIGNIFICANCE_LEVELS}
    out["negative"] = float(np.mean(rho < 0))
    out["moderate"] = float(np.mean(rho > MODERATE_CORRELATION))
    out["n_cells"] = len(reports)
    out["mean_spearman"] = float(rho.mean())
    return out


def trend_fit(points) -> TrendFit:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise SampleSizeError("need at least 3 (x, y) points")
    x, y = pts[:, 0], pts[:, 1]
    xc, yc = x - x.mean(), y - y.mean()
    sxx = xc @ xc
    if sxx == 0:
        raise DegenerateSampleError("x is constant")
    slope = (xc @ yc) / sxx
    syy = yc @ yc
    r = (xc @ yc) / math.sqrt(sxx * syy) if syy > 0 else 0.0
    return TrendFit(float(slope), float(y.mean() - slope * x.mean()), float(r))
