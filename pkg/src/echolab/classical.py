"""Classical standard map: orbits, first-order action differences and
action-angle estimates (nu, U_I and their momentum derivatives).

Map ordering is kick first, then free rotation, matching the Floquet operator:

    p' = p + k sin r,    r' = r + p'      (both mod 2pi)

Orbits are iterated with a cylinder-lifted momentum (never reduced) so the
unwrapped angle is continuous and librating orbits do not pick up spurious
2pi jumps.  The stored ``p`` is the reduction of the lifted momentum.

Time averages use a smooth bump window (weighted Birkhoff average).  On
regular orbits it converges faster than any power of 1/t, which is what makes
second derivatives of U_I in p0 usable at finite-difference steps of order
w_p/100.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Iterator

import numpy as np

from .errors import TorusResonanceError
from .model import TWO_PI, PacketSpec, PhasePoint

DEFAULT_ESTIMATOR_LENGTH = 100_000
MIN_ESTIMATOR_LENGTH = 10_000
DEFAULT_TOL = 1e-5
MAX_HARMONIC = 6
HARMONIC_THRESHOLD = 1e-3


# ---------------------------------------------------------------------------
# map
# ---------------------------------------------------------------------------

def step_standard_map(point: PhasePoint, k: float) -> PhasePoint:
    p_new = point.p + k * math.sin(point.r)
    return PhasePoint(point.r + p_new, p_new)


def step_standard_map_inverse(point: PhasePoint, k: float) -> PhasePoint:
    r_old = point.r - point.p
    return PhasePoint(r_old, point.p - k * math.sin(r_old))


def jacobian(r: float, k: float) -> np.ndarray:
    """d(r', p')/d(r, p) for one step of the map."""
    c = k * math.cos(r)
    return np.array([[1.0 + c, 1.0], [c, 1.0]])


@dataclass(frozen=True)
class Trajectory:
    initial: PhasePoint
    k: float
    r: np.ndarray
    p: np.ndarray
    r_unwrapped: np.ndarray
    p_lifted: np.ndarray

    @property
    def t_max(self) -> int:
        return len(self.r) - 1


def _orbits(r0, p0, k: float, t_max: int):
    """Iterate an ensemble of orbits.  Returns (r mod 2pi, r unwrapped, p lifted),
    each of shape (t_max + 1,) + p0.shape."""
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    r0 = np.broadcast_to(np.mod(np.asarray(r0, dtype=float), TWO_PI), p0.shape)
    shape = (t_max + 1,) + p0.shape
    r = np.empty(shape)
    ru = np.empty(shape)
    pl = np.empty(shape)
    r[0] = r0
    ru[0] = r0
    pl[0] = p0
    for t in range(t_max):
        p_next = pl[t] + k * np.sin(r[t])
        pl[t + 1] = p_next
        ru[t + 1] = ru[t] + p_next
        r[t + 1] = np.mod(r[t] + p_next, TWO_PI)
    r[r >= TWO_PI] = 0.0
    return r, ru, pl


def evolve_trajectory(point: PhasePoint, k: float, t_max: int) -> Trajectory:
    if t_max < 0:
        raise ValueError("t_max must be >= 0")
    r, ru, pl = _orbits(point.r, point.p, k, t_max)
    return Trajectory(
        initial=point,
        k=k,
        r=r[:, 0],
        p=np.mod(pl[:, 0], TWO_PI),
        r_unwrapped=ru[:, 0],
        p_lifted=pl[:, 0],
    )


def iter_action_sums(r0: float, p0s, k: float, t_max: int) -> Iterator[tuple[int, np.ndarray, np.ndarray, np.ndarray]]:
    """Stream (t, dS/eps, unwrapped angle, lifted momentum) for an ensemble launched at (r0, p0s).

    Memory stays O(len(p0s)); used by the quadrature and the segment sum.
    """
    p = np.array(p0s, dtype=float)
    r = np.full_like(p, math.fmod(r0, TWO_PI) % TWO_PI)
    ru = r.copy()
    s = np.zeros_like(p)
    for t in range(t_max + 1):
        yield t, s, ru, p
        if t == t_max:
            return
        s = s + np.cos(r)
        p = p + k * np.sin(r)
        ru = ru + p
        r = np.mod(r + p, TWO_PI)


# ---------------------------------------------------------------------------
# action differences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActionSeries:
    t: np.ndarray
    dS_over_eps: np.ndarray
    s_f: np.ndarray
    u_i: float


def cumulative_action(r: np.ndarray) -> np.ndarray:
    """sum_{t' < t} cos r(t') for t = 0..len(r)-1, accumulated left to right."""
    out = np.empty(len(r))
    out[0] = 0.0
    np.add.accumulate(np.cos(r[:-1]), out=out[1:])
    return out


def action_difference_series(point: PhasePoint, k: float, t_max: int,
                             u_i: float | None = None,
                             estimator_length: int = DEFAULT_ESTIMATOR_LENGTH) -> ActionSeries:
    """First-order action difference dS/eps along the unperturbed orbit for k -> k + eps.

    The residual S_f = dS/eps - U_I t uses ``u_i`` if given, otherwise the
    time average over an orbit of ``max(t_max, estimator_length)`` steps.
    """
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    traj = evolve_trajectory(point, k, max(t_max, estimator_length if u_i is None else t_max))
    if u_i is None:
        u_i = time_average_UI(traj).u_i
    dS = cumulative_action(traj.r[: t_max + 1])
    t = np.arange(t_max + 1)
    return ActionSeries(t=t, dS_over_eps=dS, s_f=dS - u_i * t, u_i=float(u_i))


# ---------------------------------------------------------------------------
# action-angle estimates
# ---------------------------------------------------------------------------

def birkhoff_weights(n: int) -> np.ndarray:
    """Normalized bump weights exp(-1/(x(1-x))) on the midpoints x = (j + 1/2)/n."""
    x = (np.arange(n) + 0.5) / n
    w = np.exp(-1.0 / (x * (1.0 - x)))
    return w / w.sum()


def _wavg(values: np.ndarray, weighted: bool = True) -> np.ndarray:
    n = values.shape[0]
    if not weighted:
        return values.mean(axis=0)
    return np.tensordot(birkhoff_weights(n), values, axes=(0, 0))


def _wrap_pm_pi(x):
    return (x + np.pi) % TWO_PI - np.pi


@dataclass(frozen=True)
class OrbitEstimates:
    """Rotation number and torus average of cos r along one orbit.

    ``nu`` is the frequency of the fundamental of V(theta) = cos r: the
    base angular frequency (drift of the unwrapped angle for rotations,
    winding rate around the island centre for librations) times
    ``harmonic``, the smallest period multiplicity of V in that angle.
    """

    nu: float
    nu_err: float
    u_i: float
    u_i_err: float
    regular: bool
    motion: str = "rotation"
    harmonic: int = 1
    nu_base: float = float("nan")
    centroid: tuple[float, float] | None = None


def _estimates_from_arrays(r, ru, pl, tol: float = DEFAULT_TOL, weighted: bool = True,
                           min_length: int = 0) -> list[OrbitEstimates]:
    t_max = r.shape[0] - 1
    half = t_max // 2
    v = np.cos(r[:-1])
    u_full = _wavg(v, weighted)
    u_half = _wavg(v[:half], weighted)

    span = ru.max(axis=0) - ru.min(axis=0)
    libr = span < TWO_PI

    # rotations: drift of the unwrapped angle
    if weighted:
        nu_rot = _wavg(pl[1:], True)
        nu_rot_half = _wavg(pl[1 : half + 1], True)
    else:
        nu_rot = (ru[-1] - ru[0]) / t_max
        nu_rot_half = (ru[half] - ru[0]) / half

    out = []
    tt = np.arange(t_max)
    for j in range(r.shape[1]):
        if libr[j]:
            rc = _wavg(ru[:-1, j], weighted)
            pc = _wavg(pl[:-1, j], weighted)
            ang = np.arctan2(pl[:, j] - pc, ru[:, j] - rc)
            dang = _wrap_pm_pi(np.diff(ang))
            base = float(_wavg(dang, weighted))
            base_half = float(_wavg(dang[:half], weighted))
            motion = "libration"
            centroid = (float(rc), float(pc))
        else:
            centroid = None
            base = float(nu_rot[j])
            base_half = float(nu_rot_half[j])
            motion = "rotation"
        q = _harmonic_multiplicity(v[:, j], base * tt, weighted)
        nu_err = q * abs(base - base_half)
        u_err = abs(float(u_full[j]) - float(u_half[j]))
        regular = nu_err < tol and u_err < tol and t_max >= min_length
        out.append(OrbitEstimates(nu=q * base, nu_err=nu_err, u_i=float(u_full[j]), u_i_err=u_err,
                                  regular=bool(regular), motion=motion, harmonic=q, nu_base=base,
                                  centroid=centroid))
    return out


def _harmonic_multiplicity(v: np.ndarray, phase: np.ndarray, weighted: bool) -> int:
    v = v - v.mean()
    amps = np.array([abs(_wavg(v * np.exp(-1j * n * phase), weighted)) for n in range(1, MAX_HARMONIC + 1)])
    top = amps.max()
    if top == 0.0:
        return 1
    significant = [n for n, a in enumerate(amps, start=1) if a > HARMONIC_THRESHOLD * top]
    return reduce(math.gcd, significant)


def orbit_estimates(traj: Trajectory, tol: float = DEFAULT_TOL, weighted: bool = True,
                    min_length: int = MIN_ESTIMATOR_LENGTH) -> OrbitEstimates:
    if traj.t_max < 2:
        raise ValueError("trajectory too short for estimates")
    return _estimates_from_arrays(traj.r[:, None], traj.r_unwrapped[:, None], traj.p_lifted[:, None],
                                  tol, weighted, min_length)[0]


def rotation_number(traj: Trajectory, tol: float = DEFAULT_TOL, weighted: bool = True,
                    min_length: int = MIN_ESTIMATOR_LENGTH) -> OrbitEstimates:
    """Rotation number nu with its window-halving error; the U_I fields are filled too.

    ``weighted=False`` gives the plain slope (r_unwrapped(t_max) - r_unwrapped(0))/t_max.
    Non-convergence is reported through ``regular``, never raised.
    """
    return orbit_estimates(traj, tol, weighted, min_length)


def time_average_UI(traj: Trajectory, tol: float = DEFAULT_TOL, weighted: bool = True,
                    min_length: int = MIN_ESTIMATOR_LENGTH) -> OrbitEstimates:
    """Torus average U_I of cos r, taken as the time average along the orbit."""
    return orbit_estimates(traj, tol, weighted, min_length)


# ---------------------------------------------------------------------------
# derivatives in p0
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalDerivatives:
    nu_prime: float
    u_i_prime: float
    u_i_double_prime: float
    step: float
    nu_prime_err: float
    u_i_prime_err: float
    u_i_double_prime_err: float
    reliable: bool
    center: OrbitEstimates


def default_fd_step(packet: PacketSpec) -> float:
    return max(packet.w_p / 100.0, 1e-6)


def local_derivatives(r0: float, p0: float, k: float, h_p: float,
                      t_traj: int = DEFAULT_ESTIMATOR_LENGTH, tol: float = DEFAULT_TOL) -> LocalDerivatives:
    """Central differences of nu and U_I on the stencil p0 + {-2,-1,0,1,2} h_p.

    The errors are the differences between the h and 2h stencils (first
    Richardson term); ``reliable`` requires every stencil orbit to be regular
    and of the same motion type and harmonic.
    """
    if h_p <= 0:
        raise ValueError("h_p must be > 0")
    offsets = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) * h_p
    r, ru, pl = _orbits(r0, p0 + offsets, k, t_traj)
    est = _estimates_from_arrays(r, ru, pl, tol, True, min(t_traj, MIN_ESTIMATOR_LENGTH))
    nu = np.array([e.nu for e in est])
    ui = np.array([e.u_i for e in est])
    h = h_p
    nu_p = (nu[3] - nu[1]) / (2 * h)
    nu_p2 = (nu[4] - nu[0]) / (4 * h)
    ui_p = (ui[3] - ui[1]) / (2 * h)
    ui_p2 = (ui[4] - ui[0]) / (4 * h)
    ui_pp = (ui[3] - 2 * ui[2] + ui[1]) / h**2
    ui_pp2 = (ui[4] - 2 * ui[2] + ui[0]) / (4 * h**2)
    reliable = (all(e.regular for e in est)
                and len({e.motion for e in est}) == 1
                and len({e.harmonic for e in est}) == 1)
    return LocalDerivatives(
        nu_prime=float(nu_p), u_i_prime=float(ui_p), u_i_double_prime=float(ui_pp), step=h,
        nu_prime_err=float(abs(nu_p - nu_p2)), u_i_prime_err=float(abs(ui_p - ui_p2)),
        u_i_double_prime_err=float(abs(ui_pp - ui_pp2)), reliable=bool(reliable), center=est[2],
    )


def _tangent_sums(r0: float, p0: float, k: float, t_max: int):
    """dS/eps and its first two exact p0-derivatives via the variational equations."""
    s = np.zeros(t_max + 1)
    sp = np.zeros(t_max + 1)
    spp = np.zeros(t_max + 1)
    r = math.fmod(r0, TWO_PI) % TWO_PI
    p = float(p0)
    a, b = 0.0, 1.0     # dr/dp0, dp/dp0
    A, B = 0.0, 0.0     # second derivatives
    acc = acc_p = acc_pp = 0.0
    for t in range(t_max):
        c, sn = math.cos(r), math.sin(r)
        acc += c
        acc_p -= sn * a
        acc_pp -= c * a * a + sn * A
        s[t + 1], sp[t + 1], spp[t + 1] = acc, acc_p, acc_pp
        B = B + k * (c * A - sn * a * a)
        b = b + k * c * a
        A = A + B
        a = a + b
        p = p + k * sn
        r = (r + p) % TWO_PI
    return s, sp, spp


def _fd_sums(r0: float, p0: float, k: float, h_p: float, t_max: int):
    r, _, _ = _orbits(r0, p0 + np.array([-h_p, 0.0, h_p]), k, t_max)
    s = np.vstack([cumulative_action(r[:, j]) for j in range(3)])
    return s


def k_p_series(r0: float, p0: float, k: float, h_p: float, t_max: int, method: str = "tangent") -> np.ndarray:
    """k_p(t) = d(dS/eps)/dp0 at (r0, p0) for t = 0..t_max.

    ``method="tangent"`` integrates the variational equations (exact up to
    rounding); ``method="fd"`` uses central differences with step h_p.
    """
    if method == "tangent":
        return _tangent_sums(r0, p0, k, t_max)[1]
    if method == "fd":
        if h_p <= 0:
            raise ValueError("h_p must be > 0")
        s = _fd_sums(r0, p0, k, h_p, t_max)
        return (s[2] - s[0]) / (2 * h_p)
    raise ValueError(f"unknown method {method!r}")


def k_pp_series(r0: float, p0: float, k: float, h_p: float, t_max: int, method: str = "tangent") -> np.ndarray:
    """k_pp(t) = d^2(dS/eps)/dp0^2; same methods as :func:`k_p_series`."""
    if method == "tangent":
        return _tangent_sums(r0, p0, k, t_max)[2]
    if method == "fd":
        if h_p <= 0:
            raise ValueError("h_p must be > 0")
        s = _fd_sums(r0, p0, k, h_p, t_max)
        return (s[2] - 2 * s[1] + s[0]) / h_p**2
    raise ValueError(f"unknown method {method!r}")


def envelope_exponent(series: np.ndarray, t_lo: int, t_hi: int) -> float:
    """Log-log slope of the running maximum of |series| over t in [t_lo, t_hi]."""
    env = np.maximum.accumulate(np.abs(series))
    t = np.arange(len(series))
    sel = (t >= max(t_lo, 1)) & (t <= t_hi) & (env > 0)
    return float(np.polyfit(np.log(t[sel]), np.log(env[sel]), 1)[0])


# ---------------------------------------------------------------------------
# V(theta) on the torus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VProfile:
    """Tabulated V(theta) = cos r on bin centres of [0, 2pi), periodic interpolation."""

    theta: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    nu: float

    def __call__(self, theta):
        return np.interp(np.mod(theta, TWO_PI), self.theta, self.values, period=TWO_PI)

    @property
    def mean(self) -> float:
        return float(self.values.mean())


def reconstruct_V_profile(traj: Trajectory, nu: float, n_bins: int = 64) -> VProfile:
    """Phase-fold cos r(t) against theta = nu t mod 2pi (theta_0 = 0) and bin-average."""
    t = np.arange(traj.t_max)
    theta = np.mod(nu * t, TWO_PI)
    idx = np.minimum((theta / TWO_PI * n_bins).astype(int), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    if np.any(counts == 0):
        raise TorusResonanceError(
            f"{int(np.sum(counts == 0))} of {n_bins} phase bins empty: nu/2pi looks rational at "
            f"t_max={traj.t_max}; increase the trajectory length or reduce n_bins")
    sums = np.bincount(idx, weights=np.cos(traj.r[:-1]), minlength=n_bins)
    centers = (np.arange(n_bins) + 0.5) * TWO_PI / n_bins
    return VProfile(theta=centers, values=sums / counts, counts=counts, nu=float(nu))
