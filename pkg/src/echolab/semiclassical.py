"""Semiclassical fidelity predictors and their time scales.

All classical inputs (k_p series, derivatives of nu and U_I, V(theta)
profiles) are passed in explicitly; nothing here re-runs an estimator behind
the caller's back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .classical import OrbitEstimates, LocalDerivatives, VProfile, iter_action_sums
from .errors import BudgetExceededError, UnreliableEstimateError
from .model import TWO_PI, PacketSpec, RotorParams


@dataclass(frozen=True)
class SemiclassicalSeries:
    t: np.ndarray
    m_sc: np.ndarray | None = None
    M_sc1: np.ndarray | None = None
    M_sc2: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def M_sc(self) -> np.ndarray | None:
        return None if self.m_sc is None else np.abs(self.m_sc) ** 2


# ---------------------------------------------------------------------------
# p0 quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridControl:
    """Resolution and size limits for the p0 quadrature.

    The spacing is min(w_p/50, 2pi/(points_per_period |nu'| t_max)); when
    ``refine`` is set the grid is halved until the largest phase step between
    neighbouring nodes within ``check_within_wp`` widths of the centre stays
    below ``max_phase_step``.  Thin chaotic layers further out carry
    negligible Gaussian weight and are deliberately not resolved.
    """

    nu_prime: float
    span_in_wp: float = 5.0
    points_per_period: int = 10
    max_points: int = 400_000
    refine: bool = True
    max_phase_step: float = math.pi / 4
    check_within_wp: float = 2.5


def _quadrature_grid(packet: PacketSpec, dp: float, span_in_wp: float):
    w = packet.w_p
    n = int(math.ceil(span_in_wp * w / dp))
    q = dp * np.arange(-n, n + 1)
    weights = np.exp(-(q / w) ** 2) * dp / math.sqrt(math.pi * w * w)
    weights[0] *= 0.5
    weights[-1] *= 0.5
    return packet.p0_center + q, q, weights


def m_sc_integral(packet: PacketSpec, params: RotorParams, t_max: int, grid: GridControl) -> SemiclassicalSeries:
    """Trapezoid quadrature of the p0 integral for the fidelity amplitude.

    Trajectories start at (r0_center, p0); the phase is sigma * dS/eps with
    dS/eps = sum_{t'<t} cos r(t') along each unperturbed orbit.
    """
    w = packet.w_p
    slope = abs(grid.nu_prime) * max(t_max, 1)
    dp = w / 50.0
    if slope > 0:
        dp = min(dp, TWO_PI / (grid.points_per_period * slope))
    while True:
        p0s, q, weights = _quadrature_grid(packet, dp, grid.span_in_wp)
        if len(p0s) > grid.max_points:
            raise BudgetExceededError(
                f"quadrature needs {len(p0s)} p0 nodes (> budget {grid.max_points}); "
                f"cap t_max or raise the budget")
        inner = np.abs(q) <= grid.check_within_wp * w
        m = np.empty(t_max + 1, dtype=complex)
        worst = 0.0
        sigma = params.sigma
        for t, s, _, _ in iter_action_sums(packet.r0_center, p0s, params.k, t_max):
            phase = sigma * s
            m[t] = np.sum(weights * np.exp(1j * phase))
            step = np.max(np.abs(np.diff(phase[inner]))) if inner.sum() > 1 else 0.0
            worst = max(worst, float(step))
        if not grid.refine or worst <= grid.max_phase_step:
            break
        dp /= 2.0
    info = {"dp": dp, "n_points": len(p0s), "max_phase_step": worst}
    return SemiclassicalSeries(t=np.arange(t_max + 1), m_sc=m, info=info)


# ---------------------------------------------------------------------------
# closed-form predictors
# ---------------------------------------------------------------------------

def m_sc1_series(packet: PacketSpec, params: RotorParams, k_p: np.ndarray,
                 reliable: bool = True) -> SemiclassicalSeries:
    """Gaussian law exp[-(sigma w_p k_p)^2 / 2] from the linearized action difference."""
    k_p = np.asarray(k_p, dtype=float)
    vals = np.exp(-0.5 * (params.sigma * packet.w_p * k_p) ** 2)
    info = {} if reliable else {"warning": "k_p derived from unreliable classical estimates"}
    return SemiclassicalSeries(t=np.arange(len(k_p)), M_sc1=vals, info=info)


def m_sc2_values(t, w_p: float, sigma: float, u1: float, u2: float, c: float = 1.0) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    denom = 4.0 + (w_p**2 * sigma * u2 * t) ** 2
    return 2.0 * c / np.sqrt(denom) * np.exp(-2.0 * (w_p * sigma * u1 * t) ** 2 / denom)


def m_sc2_series(packet: PacketSpec, params: RotorParams, derivs: LocalDerivatives, t_max: int,
                 c: float = 1.0) -> SemiclassicalSeries:
    """Uniform formula with U_I expanded to second order about the packet centre."""
    t = np.arange(t_max + 1)
    vals = m_sc2_values(t, packet.w_p, params.sigma, derivs.u_i_prime, derivs.u_i_double_prime, c)
    info = {"c": c}
    if not derivs.reliable:
        info["warning"] = "U_I derivatives flagged unreliable"
    return SemiclassicalSeries(t=t, M_sc2=vals, info=info)


def m_sc2_power_asymptote(w_p: float, sigma: float, u1: float, u2: float, c: float = 1.0) -> float:
    """Limit of t * M_sc2(t) for large t."""
    return 2.0 * c / (w_p**2 * sigma * abs(u2)) * math.exp(-2.0 * (u1 / (w_p * u2)) ** 2)


def fit_c(m_quantum: np.ndarray, m_sc2_unit: np.ndarray, window: slice) -> float:
    """Least-squares c for M_quantum ~ c * M_sc2(c=1) over ``window``; never applied implicitly."""
    a = np.asarray(m_sc2_unit)[window]
    b = np.asarray(m_quantum)[window]
    return float(np.dot(a, b) / np.dot(a, a))


# ---------------------------------------------------------------------------
# F(t) and the segment sum
# ---------------------------------------------------------------------------

def f_factor(v_profile: VProfile, nu: float, sigma: float, theta_t: float,
             n_outer: int = 512, n_inner: int = 4096) -> complex:
    """F = int_0^{2pi} dphi exp[(i sigma/nu) int_{theta_t}^{theta_t+phi} V(theta') dtheta'].

    The inner integral is a cumulative trapezoid of the interpolated profile,
    tabulated once over [0, 2pi] and extended by periodicity.
    """
    if sigma == 0.0:
        return complex(TWO_PI)
    grid = np.linspace(0.0, TWO_PI, n_inner + 1)
    vals = v_profile(grid)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * (grid[1] - grid[0]))])
    period_integral = cum[-1]

    def primitive(x):
        x = np.asarray(x, dtype=float)
        turns = np.floor(x / TWO_PI)
        return turns * period_integral + np.interp(x - turns * TWO_PI, grid, cum)

    phi = np.linspace(0.0, TWO_PI, n_outer + 1)
    inner = primitive(theta_t + phi) - primitive(theta_t)
    f = np.exp(1j * sigma / nu * inner)
    h = TWO_PI / n_outer
    return complex(h * (0.5 * f[0] + f[1:-1].sum() + 0.5 * f[-1]))


@dataclass(frozen=True)
class SegmentResult:
    amplitude: complex
    boundaries: np.ndarray
    n_in_window: int
    f: complex
    non_monotone: float = 0.0


def _angles_at(packet: PacketSpec, k: float, t: int, p0s: np.ndarray, center: OrbitEstimates):
    """dS/eps and the orbit angle at time t for each p0.

    Rotations use the unwrapped position angle; librations the accumulated
    winding angle about the island centroid.  Both are multiplied by the
    harmonic multiplicity of V.
    """
    if center.motion == "libration":
        if center.centroid is None:
            raise UnreliableEstimateError("libration estimate carries no centroid")
        rc, pc = center.centroid
        wind = np.zeros_like(p0s)
        prev = None
        s = None
        for _, s, ru, p in iter_action_sums(packet.r0_center, p0s, k, t):
            ang = np.arctan2(p - pc, ru - rc)
            if prev is not None:
                wind += (ang - prev + math.pi) % TWO_PI - math.pi
            prev = ang
        return s, center.harmonic * wind
    s = ru = None
    for _, s, ru, _ in iter_action_sums(packet.r0_center, p0s, k, t):
        pass
    return s, center.harmonic * (ru - packet.r0_center)


def segment_sum(packet: PacketSpec, params: RotorParams, t: int, center: OrbitEstimates,
                nu_prime: float, v_profile: VProfile, span_in_wp: float = 4.0,
                points_per_segment: int = 24, min_segments: int = 8,
                max_points: int = 400_000) -> SegmentResult:
    """Sum of per-segment contributions m_j(t).

    Segment boundaries are where the orbit angle at time t differs from the
    centre orbit's by 2pi j (the period completions of S_f across p0).  Each
    segment contributes exp(-(p_j - p0)^2/w_p^2)/(sqrt(pi) w_p nu'_j t) *
    exp(i sigma dS_j/eps) * F(t) with nu'_j t = 2pi / |p_{j+1} - p_j|.
    """
    w = packet.w_p
    if nu_prime == 0.0:
        raise UnreliableEstimateError("nu' = 0: S_f does not oscillate across p0")
    seg_width = TWO_PI / (abs(nu_prime) * max(t, 1))
    n_in_window = int(2 * w / seg_width)
    if n_in_window < min_segments:
        raise UnreliableEstimateError(
            f"only ~{n_in_window} segments inside W_p at t={t} (need {min_segments}); "
            f"use m_sc_integral for t below a few tau_s")
    dp = seg_width / points_per_segment
    n = int(math.ceil(span_in_wp * w / dp))
    if 2 * n + 1 > max_points:
        raise BudgetExceededError(f"segment grid needs {2 * n + 1} nodes (> budget {max_points})")
    p0s = packet.p0_center + dp * np.arange(-n, n + 1)
    s, angle = _angles_at(packet, params.k, t, p0s, center)
    rel = angle - angle[n]
    d = np.diff(rel)
    sign = np.sign(d[n]) if d[n] != 0 else np.sign(d[n - 1])
    if sign == 0:
        raise UnreliableEstimateError("orbit angle does not vary with p0 at the packet centre")
    if sign < 0:
        rel, p0s, s = -rel[::-1], p0s[::-1], s[::-1]
    # boundaries are first crossings moving outward from the centre; resonance
    # islands and thin chaotic layers make the angle locally non-monotone
    env = rel.copy()
    env[n:] = np.maximum.accumulate(rel[n:])
    env[:n + 1] = np.minimum.accumulate(rel[n::-1])[::-1]
    non_monotone = float(np.mean(np.diff(rel) < 0))
    j_lo = int(math.ceil(env[0] / TWO_PI))
    j_hi = int(math.floor(env[-1] / TWO_PI))
    targets = TWO_PI * np.arange(j_lo, j_hi + 1)
    i = np.clip(np.searchsorted(env, targets, side="left"), 1, len(env) - 1)
    span = env[i] - env[i - 1]
    frac = np.where(span > 0, (targets - env[i - 1]) / np.where(span > 0, span, 1.0), 1.0)
    pb = p0s[i - 1] + frac * (p0s[i] - p0s[i - 1])
    sb = s[i - 1] + frac * (s[i] - s[i - 1])
    theta_t = (center.nu * t) % TWO_PI
    F = f_factor(v_profile, center.nu, params.sigma, theta_t)
    widths = np.abs(np.diff(pb))
    starts = pb[:-1]
    terms = (np.exp(-((starts - packet.p0_center) / w) ** 2) / (math.sqrt(math.pi) * w)
             * widths / TWO_PI * np.exp(1j * params.sigma * sb[:-1]))
    inside = int(np.sum(np.abs(pb - packet.p0_center) < w))
    return SegmentResult(amplitude=complex(np.sum(terms) * F), boundaries=pb, n_in_window=inside, f=F,
                         non_monotone=non_monotone)


# ---------------------------------------------------------------------------
# time scales and beta
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeScales:
    tau1: float
    tau_s: float
    t_plateau: float
    tau1_lower_bound: bool = False
    t_cross: float = math.inf


def tau1_estimate(packet: PacketSpec, params: RotorParams, k_pp: np.ndarray) -> tuple[float, bool]:
    """First t with sigma w_p^2 |k_pp(t)| >= 1, linearly interpolated.

    Returns (tau1, lower_bound); ``lower_bound`` is True when the threshold is
    never reached, in which case tau1 = t_max.
    """
    g = params.sigma * packet.w_p**2 * np.abs(np.asarray(k_pp, dtype=float))
    hit = np.nonzero(g >= 1.0)[0]
    if len(hit) == 0:
        return float(len(g) - 1), True
    i = int(hit[0])
    if i == 0:
        return 0.0, False
    return float(i - 1 + (1.0 - g[i - 1]) / (g[i] - g[i - 1])), False


def tau_s(packet: PacketSpec, nu_prime: float) -> float:
    """Time after which S_f completes one oscillation across W_p."""
    if nu_prime == 0.0:
        return math.inf
    return math.pi / (abs(nu_prime) * packet.w_p)


def plateau_end_time(packet: PacketSpec, params: RotorParams, u_i_prime: float) -> float:
    if u_i_prime == 0.0 or params.sigma == 0.0:
        return math.inf
    return math.pi / (params.sigma * packet.w_p * abs(u_i_prime))


def crossover_time(packet: PacketSpec, params: RotorParams, u_i_double_prime: float) -> float:
    """Time where (w_p^2 sigma U_I'' t)^2 = 4: Gaussian -> power-law crossover of M_sc2."""
    if u_i_double_prime == 0.0 or params.sigma == 0.0:
        return math.inf
    return 2.0 / (packet.w_p**2 * params.sigma * abs(u_i_double_prime))


@dataclass(frozen=True)
class BetaCurve:
    sigma: np.ndarray
    beta: np.ndarray
    m: np.ndarray
    period: float


def beta_of_sigma(sigma_grid, u_i_prime: float, nu_prime: float) -> BetaCurve:
    """Folded decay rate beta = |sigma U_I' - m nu'| with m = round(sigma U_I'/nu')."""
    if nu_prime == 0.0:
        raise ValueError("nu' must be nonzero")
    s = np.asarray(sigma_grid, dtype=float)
    m = np.round(s * u_i_prime / nu_prime).astype(int)
    beta = np.abs(s * u_i_prime - m * nu_prime)
    period = abs(nu_prime / u_i_prime) if u_i_prime != 0.0 else math.inf
    return BetaCurve(sigma=s, beta=beta, m=m, period=period)
