import numpy as np
import pytest
from hypothesis import given, strategies as st

from echolab.analysis import (
    classify_regimes,
    compare_series,
    default_smoothing_window,
    empirical_tau1,
    fit_power_law,
    moving_average,
    regime_edges,
)
from echolab.errors import AnalysisError


def test_moving_average_centred():
    idx, avg = moving_average(np.arange(10.0), 3)
    assert list(idx) == list(range(1, 9))
    assert np.allclose(avg, np.arange(1.0, 9.0))
    idx, avg = moving_average(np.arange(10.0), 4)  # widened to 5
    assert idx[0] == 2 and np.allclose(avg, np.arange(2.0, 8.0))


def test_default_smoothing_window():
    assert default_smoothing_window(2.4) == 5
    assert default_smoothing_window(0.1) == round(2 * np.pi / 0.1)


def test_power_law_exact():
    t = np.arange(1, 10001, dtype=float)
    fit = fit_power_law((t, t**-1.5), 10, 5000)
    assert abs(fit.alpha - 1.5) < 1e-12
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.trusted


@given(st.floats(0.5, 2.5), st.floats(1e-3, 1e3))
def test_power_law_scale_invariant(alpha, scale):
    t = np.arange(1, 2001, dtype=float)
    a = fit_power_law((t, t**-alpha), 20, 2000, 1)
    b = fit_power_law((t, scale * t**-alpha), 20, 2000, 1)
    assert abs(a.alpha - b.alpha) < 1e-9


def test_power_law_flags_and_errors():
    t = np.arange(1, 1001, dtype=float)
    assert not fit_power_law((t, t**-1.0), 100, 500).trusted
    with pytest.raises(AnalysisError):
        fit_power_law((t, t**-1.0), 500, 100)
    with pytest.raises(AnalysisError):
        fit_power_law((t, t**-1.0), 100.2, 100.8)
    m = t**-1.0
    m[300] = 0.0
    with pytest.raises(AnalysisError):
        fit_power_law((t, m), 100, 1000)


def test_power_law_smoothing_suppresses_oscillation():
    t = np.arange(1, 20001, dtype=float)
    m = t**-1.1 * (1 + 0.5 * np.cos(2.4 * t))
    fit = fit_power_law((t, m), 1000, 20000, default_smoothing_window(2.4))
    assert fit.alpha == pytest.approx(1.1, abs=0.01)


def test_empirical_tau1_sentinel_and_crossing():
    t = np.arange(100.0)
    m = np.exp(-t / 50)
    res = empirical_tau1((t, m), m)
    assert not res.crossed and res.t == 99
    pred = m.copy()
    pred[37:] *= 1.5
    res = empirical_tau1((t, m), pred)
    assert res.crossed and res.t == 37


def test_empirical_tau1_truncates_at_zero():
    t = np.arange(50.0)
    m = np.exp(-t / 10)
    m[20:] = 0.0
    res = empirical_tau1((t, m), np.exp(-t / 10))
    assert res.truncated and not res.crossed and res.t == 19


@given(st.integers(0, 1000), st.floats(1.0, 5.0))
def test_empirical_tau1_monotone_in_deviation(seed, factor):
    rng = np.random.default_rng(seed)
    t = np.arange(200.0)
    m = np.exp(-t / 80)
    dev = rng.uniform(0, 0.15, 200) * m
    a = empirical_tau1((t, m), m + dev)
    b = empirical_tau1((t, m), m + factor * dev)
    assert b.t <= a.t


def test_classify_pure_gaussian():
    t = np.arange(0, 3000, dtype=float)
    m = np.exp(-((t / 1000) ** 2))
    rep = classify_regimes((t, m), regime_edges(1000.0), smoothing_window=1)
    assert rep.labels == ["gaussian"]
    assert rep.bands[0].scores["gaussian"] > 0.999


def test_classify_pure_power():
    t = np.arange(0, 100_000, dtype=float)
    m = np.minimum(1.0, (t + 1) ** -1.2)
    rep = classify_regimes((t, m), regime_edges(4000.0), smoothing_window=1, t_start=10)
    assert rep.labels == ["power"]


def test_classify_three_stage_synthetic():
    t = np.arange(0, 60_000, dtype=float)
    y = np.where(t < 2000, (t / 1000) ** 2, 4 + 4 * (t - 2000) / 2000)
    y = np.where(t < 6000, y, 12 + 1.1 * np.log(np.maximum(t, 1) / 6000))
    rep = classify_regimes((t, np.exp(-y)), (2000, 6000), smoothing_window=1, t_start=10)
    assert rep.labels == ["gaussian", "exponential", "power"]


def test_classify_floor_truncation():
    t = np.arange(0, 5000, dtype=float)
    m = np.maximum(np.exp(-((t / 1000) ** 2)), 1e-5)
    rep = classify_regimes((t, m), (2000, 4000), floor=1e-4, smoothing_window=1)
    assert rep.truncated_at is not None and rep.truncated_at < 3100
    assert rep.labels == ["gaussian"]


def test_compare_series():
    t = np.arange(100.0)
    a = np.exp(-t / 30)
    rep = compare_series((t, a), (t, a))
    assert rep.max_rel_error == 0.0 and rep.first_crossing is None
    rep = compare_series((t, a), (t, 1.05 * a), threshold=0.1)
    assert rep.max_rel_error == pytest.approx(0.05)
    rep = compare_series((t, a), (t, a * (1 + 0.0021 * t)), threshold=0.1)
    assert rep.first_crossing == 48
    with pytest.raises(AnalysisError):
        compare_series((t, a), (t + 1000, a))


def test_compare_series_floor():
    t = np.arange(10.0)
    a = np.full(10, 1e-8)
    rep = compare_series((t, a), (t, 2 * a))
    assert rep.n_compared == 0
