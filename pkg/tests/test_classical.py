import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from echolab.classical import (
    action_difference_series,
    cumulative_action,
    envelope_exponent,
    evolve_trajectory,
    jacobian,
    k_p_series,
    k_pp_series,
    local_derivatives,
    orbit_estimates,
    reconstruct_V_profile,
    step_standard_map,
    step_standard_map_inverse,
)
from echolab.errors import TorusResonanceError
from echolab.model import TWO_PI, PhasePoint

mp.mp.dps = 40


def dirichlet(r0, p0, t):
    """sum_{t'<t} cos(r0 + p0 t') in closed form."""
    return mp.sin(t * p0 / 2) / mp.sin(p0 / 2) * mp.cos(r0 + (t - 1) * p0 / 2)


def dirichlet_oracle(r0, p0, ts, order):
    r0, p0 = mp.mpf(r0), mp.mpf(p0)
    return np.array([0.0 if t == 0 else float(mp.diff(lambda x: dirichlet(r0, x, t), p0, order)) for t in ts])


@pytest.mark.parametrize("r0,p0", [(1.2 * math.pi, 0.8 * math.pi), (0.3, 2.0), (5.0, 0.7)])
@pytest.mark.parametrize("order", [0, 1, 2])
def test_free_rotation_matches_dirichlet(r0, p0, order):
    ts = np.arange(0, 1001, 37)
    oracle = dirichlet_oracle(r0, p0, ts, order)
    if order == 0:
        got = action_difference_series(PhasePoint(r0, p0), 0.0, 1000, u_i=0.0).dS_over_eps[ts]
    elif order == 1:
        got = k_p_series(r0, p0, 0.0, 1e-4, 1000)[ts]
    else:
        got = k_pp_series(r0, p0, 0.0, 1e-4, 1000)[ts]
    assert np.all(np.abs(got - oracle) <= 1e-8 * np.maximum(np.abs(oracle), 1.0))


def test_free_rotation_estimates():
    p0 = 0.8 * math.pi + 0.01
    est = orbit_estimates(evolve_trajectory(PhasePoint(1.2 * math.pi, p0), 0.0, 100_000))
    assert est.nu == pytest.approx(p0, abs=1e-10)
    assert abs(est.u_i) < 1e-10
    d = local_derivatives(1.2 * math.pi, p0, 0.0, 1e-3, 100_000)
    assert d.nu_prime == pytest.approx(1.0, abs=1e-8)
    assert abs(d.u_i_prime) < 1e-8


@given(st.floats(0.0, 2.0), st.floats(0.0, TWO_PI))
def test_jacobian_is_area_preserving(k, r):
    assert abs(np.linalg.det(jacobian(r, k)) - 1.0) <= 1e-14


def test_jacobian_matches_finite_difference():
    k, r, p, h = 0.9, 1.1, 2.3, 1e-6
    f = lambda r, p: np.array([r + p + k * math.sin(r), p + k * math.sin(r)])
    num = np.column_stack([(f(r + h, p) - f(r - h, p)) / (2 * h), (f(r, p + h) - f(r, p - h)) / (2 * h)])
    assert np.allclose(num, jacobian(r, k), atol=1e-8)


def _round_trip(start, k, steps):
    pt = start
    for _ in range(steps):
        pt = step_standard_map(pt, k)
    for _ in range(steps):
        pt = step_standard_map_inverse(pt, k)
    dr = (pt.r - start.r + math.pi) % TWO_PI - math.pi
    dp = (pt.p - start.p + math.pi) % TWO_PI - math.pi
    return max(abs(dr), abs(dp))


@given(st.floats(0.0, 0.5), st.floats(0.0, TWO_PI), st.floats(0.0, TWO_PI))
def test_map_is_reversible_anywhere_short_horizon(k, r, p):
    # 20 steps keeps even the hyperbolic-point growth (<= 2^20) far below the bound
    assert _round_trip(PhasePoint(r, p), k, 20) < 1e-9


@pytest.mark.parametrize("p0_over_pi", [0.28, 0.6, 0.8, 1.4])
def test_map_is_reversible_on_tori(p0_over_pi):
    assert _round_trip(PhasePoint(1.2 * math.pi, p0_over_pi * math.pi), 0.3, 1000) < 1e-9


def test_trajectory_matches_single_steps():
    k, pt = 0.3, PhasePoint(1.0, 2.0)
    traj = evolve_trajectory(pt, k, 50)
    for t in range(50):
        pt = step_standard_map(pt, k)
    assert traj.r[-1] == pytest.approx(pt.r, abs=1e-10)
    assert traj.p[-1] == pytest.approx(pt.p, abs=1e-10)


def test_cumulative_action_definition():
    r = np.array([0.0, math.pi, 0.5])
    assert np.allclose(cumulative_action(r), [0.0, 1.0, 0.0])


def test_tangent_and_fd_derivatives_agree():
    r0, p0, k = 1.2 * math.pi, 0.8 * math.pi, 0.3
    kp_t = k_p_series(r0, p0, k, 1e-5, 500)
    kp_f = k_p_series(r0, p0, k, 1e-5, 500, method="fd")
    assert np.allclose(kp_t, kp_f, rtol=1e-4, atol=1e-5 * np.max(np.abs(kp_t)))
    kpp_t = k_pp_series(r0, p0, k, 1e-4, 300)
    kpp_f = k_pp_series(r0, p0, k, 1e-4, 300, method="fd")
    assert np.allclose(kpp_t, kpp_f, rtol=1e-3, atol=1e-2 * np.max(np.abs(kpp_t)))


def test_k_pp_envelope_grows_quadratically_on_a_torus():
    kpp = k_pp_series(1.2 * math.pi, 0.6 * math.pi, 0.3, 1e-4, 4000)
    assert envelope_exponent(kpp, 500, 4000) == pytest.approx(2.0, abs=0.15)


def test_libration_detected_with_harmonic():
    est = orbit_estimates(evolve_trajectory(PhasePoint(1.2 * math.pi, 0.28 * math.pi), 0.3, 100_000))
    assert est.motion == "libration"
    assert est.harmonic == 2
    assert est.regular


def test_estimates_converge_on_regular_torus():
    traj = evolve_trajectory(PhasePoint(1.2 * math.pi, 0.8 * math.pi), 0.3, 100_000)
    w = orbit_estimates(traj)
    plain = orbit_estimates(traj, weighted=False)
    assert w.regular
    assert w.nu == pytest.approx(plain.nu, abs=1e-4)
    assert w.u_i == pytest.approx(plain.u_i, abs=1e-4)
    assert w.nu_err < 1e-8


def test_v_profile_reconstruction():
    traj = evolve_trajectory(PhasePoint(1.2 * math.pi, 0.8 * math.pi), 0.3, 100_000)
    est = orbit_estimates(traj)
    prof = reconstruct_V_profile(traj, est.nu, 64)
    assert prof.mean == pytest.approx(est.u_i, abs=1e-3)
    # folding reproduces the series: V(nu t) ~ cos r(t)
    t = np.arange(200)
    assert np.max(np.abs(prof(est.nu * t) - np.cos(traj.r[:200]))) < 0.05


def test_v_profile_rational_rotation_raises():
    traj = evolve_trajectory(PhasePoint(0.1, TWO_PI / 4), 0.0, 10_000)
    with pytest.raises(TorusResonanceError):
        reconstruct_V_profile(traj, TWO_PI / 4, 64)
