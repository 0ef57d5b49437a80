"""Regime detection, power-law fits and predictor-versus-quantum comparisons."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AnalysisError
from .model import TWO_PI


def _as_tm(series) -> tuple[np.ndarray, np.ndarray]:
    """Accept a FidelitySeries, a (t, values) pair, or a bare array indexed by t."""
    if hasattr(series, "m_sq"):
        return np.asarray(series.t, dtype=float), np.asarray(series.m_sq, dtype=float)
    if isinstance(series, tuple) and len(series) == 2:
        return np.asarray(series[0], dtype=float), np.asarray(series[1], dtype=float)
    values = np.asarray(series, dtype=float)
    return np.arange(len(values), dtype=float), values


def moving_average(values: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Centred moving average.  Returns (index of each centre, averaged values);
    edges where the full window does not fit are dropped.  Even windows are
    widened by one so the average stays centred."""
    window = max(1, int(window))
    if window % 2 == 0:
        window += 1
    values = np.asarray(values, dtype=float)
    if window == 1:
        return np.arange(len(values)), values.copy()
    if len(values) < window:
        return np.arange(0), np.empty(0)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    avg = (csum[window:] - csum[:-window]) / window
    half = window // 2
    return np.arange(half, half + len(avg)), avg


def default_smoothing_window(nu: float) -> int:
    """max(5, one S_f period 2pi/nu) samples."""
    if nu == 0 or not math.isfinite(nu):
        return 5
    return max(5, int(round(TWO_PI / abs(nu))))


# ---------------------------------------------------------------------------
# empirical tau1
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Tau1Result:
    t: float
    crossed: bool
    truncated: bool = False
    note: str = ""


def empirical_tau1(quantum, predicted, threshold: float = 0.1) -> Tau1Result:
    """First t with |M(t) - M_pred(t)| / M(t) > threshold.

    ``predicted`` may be a SemiclassicalSeries (its M_sc1 is used) or an array.
    Never crossing yields ``crossed=False`` with t = last scanned time.
    """
    t, m = _as_tm(quantum)
    pred = predicted.M_sc1 if hasattr(predicted, "M_sc1") else np.asarray(predicted, dtype=float)
    n = min(len(m), len(pred))
    t, m, pred = t[:n], m[:n], pred[:n]
    zero = np.nonzero(m <= 0.0)[0]
    stop = int(zero[0]) if len(zero) else n
    with np.errstate(divide="ignore", invalid="ignore"):
        dev = np.abs(m[:stop] - pred[:stop]) / m[:stop]
    hit = np.nonzero(dev > threshold)[0]
    if len(hit):
        return Tau1Result(t=float(t[hit[0]]), crossed=True)
    if stop < n:
        return Tau1Result(t=float(t[stop - 1]) if stop else 0.0, crossed=False, truncated=True,
                          note=f"M(t) reached 0 at t={t[stop]:g} before any crossing")
    return Tau1Result(t=float(t[-1]), crossed=False, note="not crossed; tau1 > t_max")


# ---------------------------------------------------------------------------
# power laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerLawFit:
    alpha: float
    window: tuple[float, float]
    r_squared: float
    stderr: float
    intercept: float
    n_points: int
    smoothing_window: int
    trusted: bool


def _linfit(x: np.ndarray, y: np.ndarray):
    """Ordinary least squares y = a + b x; returns (a, b, r2, stderr_b)."""
    n = len(x)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0.0:
        raise AnalysisError("degenerate regressor")
    b = np.sum((x - xm) * (y - ym)) / sxx
    a = ym - b * xm
    resid = y - a - b * x
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    r2 = min(max(r2, 0.0), 1.0)
    stderr = math.sqrt(ss_res / (n - 2) / sxx) if n > 2 else math.inf
    return float(a), float(b), r2, stderr


def fit_power_law(series, t_lo: float, t_hi: float, smoothing_window: int = 1,
                  sample_every: int = 1) -> PowerLawFit:
    """Fit M ~ t^(-alpha) on [t_lo, t_hi] by least squares in (ln t, ln M_smoothed).

    Windows spanning less than a decade are fitted but marked untrusted.
    """
    t, m = _as_tm(series)
    if not t_hi > t_lo:
        raise AnalysisError(f"empty fit window [{t_lo}, {t_hi}]")
    if t_lo <= 0:
        raise AnalysisError("power-law window must start at t > 0")
    idx, smooth = moving_average(m, smoothing_window)
    ts = t[idx]
    sel = (ts >= t_lo) & (ts <= t_hi)
    ts, smooth = ts[sel][::sample_every], smooth[sel][::sample_every]
    if len(ts) < 3:
        raise AnalysisError(f"only {len(ts)} samples in window [{t_lo}, {t_hi}]")
    if np.any(smooth <= 0.0):
        raise AnalysisError("non-positive values in power-law window")
    a, b, r2, se = _linfit(np.log(ts), np.log(smooth))
    return PowerLawFit(alpha=-b, window=(float(t_lo), float(t_hi)), r_squared=r2, stderr=se,
                       intercept=a, n_points=len(ts), smoothing_window=max(1, int(smoothing_window)),
                       trusted=bool(t_hi / t_lo >= 10.0))


# ---------------------------------------------------------------------------
# regimes
# ---------------------------------------------------------------------------

REGRESSORS = {
    "gaussian": lambda t: t**2,
    "exponential": lambda t: t,
    "power": lambda t: np.log(t),
}


@dataclass(frozen=True)
class Band:
    label: str
    t_lo: float
    t_hi: float
    scores: dict
    slopes: dict


@dataclass(frozen=True)
class RegimeReport:
    bands: list
    boundaries: tuple
    truncated_at: float | None = None

    @property
    def labels(self) -> list[str]:
        return [b.label for b in self.bands]


def _score_band(t: np.ndarray, y: np.ndarray, tie_ratio: float):
    """Adjusted r^2 of -ln M against t^2, t and ln t (two parameters each)."""
    scores, slopes = {}, {}
    n = len(t)
    for name, g in REGRESSORS.items():
        try:
            _, b, r2, _ = _linfit(g(t), y)
        except AnalysisError:
            r2, b = 0.0, 0.0
        scores[name] = 1.0 - (1.0 - r2) * (n - 1) / (n - 2) if n > 2 else r2
        slopes[name] = b
    ranked = sorted(scores, key=scores.get, reverse=True)
    best, second = ranked[0], ranked[1]
    miss_best = 1.0 - scores[best]
    miss_second = 1.0 - scores[second]
    if miss_second <= 0.0 or (miss_best > tie_ratio * miss_second and miss_best > 1e-12):
        label = "indeterminate"
    else:
        label = best
    return label, scores, slopes


def classify_regimes(quantum, scales, floor: float | None = None, smoothing_window: int = 25,
                     min_points: int = 8, tie_ratio: float = 0.8, t_start: float = 1.0) -> RegimeReport:
    """Split the decay into Gaussian-candidate, transition and long-time bands and label each.

    Band edges come from ``scales``: anything with ``gaussian_end`` and
    ``power_start`` attributes (see :func:`regime_edges`) or a pair of times.
    Each band is labelled by whichever of the Gaussian (-ln M ~ t^2),
    exponential (~ t) or power (~ ln t) fits scores best by adjusted r^2;
    ambiguous bands are "indeterminate".  Adjacent bands with the same label
    are merged and refitted.  Samples after the smoothed series first drops
    below ``floor`` (finite-N saturation) are excluded.
    """
    t, m = _as_tm(quantum)
    idx, smooth = moving_average(m, smoothing_window)
    ts = t[idx]
    keep = (ts >= t_start) & (smooth > 0)
    truncated_at = None
    if floor is not None:
        below = np.nonzero(smooth <= floor)[0]
        if len(below):
            truncated_at = float(ts[below[0]])
            keep &= ts < truncated_at
    ts, smooth = ts[keep], smooth[keep]
    y = -np.log(smooth)
    if hasattr(scales, "gaussian_end"):
        edges = (scales.gaussian_end, scales.power_start)
    else:
        edges = tuple(scales)
    cuts = [ts[0] if len(ts) else 0.0, *edges, math.inf]

    raw = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        sel = (ts >= lo) & (ts < hi)
        if sel.sum() >= min_points:
            raw.append((float(ts[sel][0]), float(ts[sel][-1])))

    def label_of(lo, hi):
        sel = (ts >= lo) & (ts <= hi)
        return _score_band(ts[sel], y[sel], tie_ratio)

    bands = []
    for lo, hi in raw:
        label, scores, slopes = label_of(lo, hi)
        if bands and bands[-1].label == label:
            lo = bands[-1].t_lo
            label, scores, slopes = label_of(lo, hi)
            bands.pop()
        bands.append(Band(label=label, t_lo=lo, t_hi=hi, scores=scores, slopes=slopes))
    return RegimeReport(bands=bands, boundaries=tuple(edges), truncated_at=truncated_at)


@dataclass(frozen=True)
class RegimeEdges:
    gaussian_end: float
    power_start: float


def regime_edges(t_cross: float, lo_factor: float = 0.5, hi_factor: float = 1.0) -> RegimeEdges:
    """Band edges around the Gaussian -> 1/t crossover of the uniform formula.

    With x = w_p^2 sigma U_I'' t, the exponent of M_sc2 is quadratic in t for
    x << 2, bends at its inflection x = 2/sqrt(3) and is saturated beyond
    x = 2 (t = t_cross), where the algebraic prefactor takes over.  The
    defaults put the transition band on [t_cross/2, t_cross].
    """
    return RegimeEdges(gaussian_end=lo_factor * t_cross, power_start=hi_factor * t_cross)


# ---------------------------------------------------------------------------
# comparisons
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonReport:
    max_rel_error: float
    mean_rel_error: float
    first_crossing: float | None
    n_compared: int
    notes: list = field(default_factory=list)


def compare_series(a, b, threshold: float = 0.1, floor: float = 1e-6) -> ComparisonReport:
    """Relative error |a - b| / |a| where both exceed ``floor``.

    Inputs are (t, values) pairs or FidelitySeries; their t grids must
    overlap.  ``first_crossing`` is the first common t where the relative
    error exceeds ``threshold`` (None if never).
    """
    ta, va = _as_tm(a)
    tb, vb = _as_tm(b)
    common, ia, ib = np.intersect1d(ta, tb, return_indices=True)
    if len(common) == 0:
        raise AnalysisError("series have disjoint time grids")
    va, vb = va[ia], vb[ib]
    ok = (np.abs(va) > floor) & (np.abs(vb) > floor)
    notes = []
    if len(common) < max(len(ta), len(tb)):
        notes.append(f"compared on {len(common)} common times")
    if not ok.any():
        return ComparisonReport(0.0, 0.0, None, 0, notes + ["no samples above floor"])
    rel = np.abs(va[ok] - vb[ok]) / np.abs(va[ok])
    tc = common[ok]
    hit = np.nonzero(rel > threshold)[0]
    return ComparisonReport(
        max_rel_error=float(rel.max()),
        mean_rel_error=float(rel.mean()),
        first_crossing=float(tc[hit[0]]) if len(hit) else None,
        n_compared=int(ok.sum()),
        notes=notes,
    )
