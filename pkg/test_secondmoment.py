"""
Tests for the overlap-resolved second-moment density and the correlation transition.
"""

import math
from types import SimpleNamespace

import numpy as np
import pytest

import secondmoment
from errors import DomainError, ParameterError
from firstmoment import LOG2, SQRT2, energy_roots, h_star, w_sup, w_x
from secondmoment import (
    ECOR_XTOL,
    OMEGA_CLAMP,
    CorrelationScan,
    OverlapQuery,
    SaddleMethod,
    _theta_min,
    bounded_max,
    e_cor,
    h_cor,
    inner_min,
    overlap_entropy,
    overlap_profile,
    scan_overlaps,
    stationarity_residuals,
    w_overlap,
)
from specfun import DEFAULT_QUAD, theta_stationarity


def test_overlap_is_clamped():
    q = OverlapQuery(x=0.5, omega=1.0, h=0.0)
    assert q.omega == pytest.approx(1.0 - OMEGA_CLAMP)
    q = OverlapQuery(x=0.5, omega=-1.0, h=0.0)
    assert q.omega == pytest.approx(-(1.0 - OMEGA_CLAMP))
    assert OverlapQuery(x=0.5, omega=0.0, h=0.0).beta == 0.25
    with pytest.raises(ParameterError):
        OverlapQuery(x=0.5, omega=1.5, h=0.0)
    with pytest.raises(ParameterError):
        OverlapQuery(x=math.nan, omega=0.0, h=0.0)


def test_t_range():
    q = OverlapQuery(x=0.6, omega=0.2, h=0.1)
    lo, hi = q.t_range()
    assert lo == pytest.approx(0.1 * 0.3 / SQRT2)
    assert hi == pytest.approx(0.6 - 0.1 * 0.2 / SQRT2)


def test_domain_errors():
    q = OverlapQuery(x=0.6, omega=0.0, h=0.1)
    lo, hi = q.t_range()
    with pytest.raises(DomainError):
        inner_min(lo - 0.01, q)
    with pytest.raises(DomainError):
        _theta_min(1.0, 0.0, DEFAULT_QUAD)
    # t-interval is empty when the shifted cut parameter is too small
    with pytest.raises(DomainError):
        w_overlap(OverlapQuery(x=0.01, omega=0.0, h=0.3))


def test_theta_min_is_stationary_and_negative():
    theta = _theta_min(0.8, 1.3, DEFAULT_QUAD)
    assert theta < 0.0
    assert theta_stationarity(theta, 0.8, 1.3) == pytest.approx(0.0, abs=1e-9)


def test_overlap_entropy():
    assert overlap_entropy(0.25) == pytest.approx(2.0 * LOG2)
    assert overlap_entropy(0.1) == pytest.approx(overlap_entropy(0.4))


def test_bounded_max():
    x, value = bounded_max(lambda t: -(t - 0.3) ** 2 + 1.0, 0.0, 1.0, tol=1e-10)
    assert x == pytest.approx(0.3, abs=1e-6)
    assert value == pytest.approx(1.0)
    # reversed endpoints are accepted
    x, _ = bounded_max(lambda t: -abs(t + 2.0), 0.0, -5.0)
    assert x == pytest.approx(-2.0, abs=1e-6)
    # a degenerate interval returns its midpoint
    x, _ = bounded_max(lambda t: t, 0.5, 0.5)
    assert x == 0.5


def test_inner_min_symmetric_at_zero_overlap():
    q = OverlapQuery(x=0.5, omega=0.0, h=0.1)
    theta1, theta2, _ = inner_min(0.25, q)
    assert theta1 == pytest.approx(theta2, abs=1e-10)


@pytest.mark.parametrize("x,h", [(0.4, 0.0), (0.6, 0.1)])
def test_uncorrelated_pair_is_twice_first_moment(x, h):
    saddle = w_overlap(OverlapQuery(x=x, omega=0.0, h=h))
    assert saddle.value == pytest.approx(2.0 * w_x(x, h), abs=1e-6)
    assert saddle.t_star == pytest.approx(x / 2.0, abs=1e-6)


def test_symmetric_in_overlap():
    plus = w_overlap(OverlapQuery(x=0.5, omega=0.4, h=0.1))
    minus = w_overlap(OverlapQuery(x=0.5, omega=-0.4, h=0.1))
    assert plus.value == pytest.approx(minus.value, abs=1e-6)
    assert plus.t_star == pytest.approx(0.5 - minus.t_star, abs=1e-5)


def test_polished_saddle_satisfies_stationarity():
    q = OverlapQuery(x=0.5, omega=0.3, h=0.05)
    saddle = w_overlap(q)
    assert saddle.method == SaddleMethod.NEWTON.value
    assert max(abs(r) for r in saddle.residuals) < 1e-6
    assert not saddle.at_boundary
    recomputed = stationarity_residuals(saddle.t_star, saddle.theta1_star, saddle.theta2_star, q)
    assert max(abs(r) for r in recomputed) < 1e-6


def test_profile_is_maximal_at_saddle():
    q = OverlapQuery(x=0.5, omega=0.3, h=0.05)
    saddle = w_overlap(q, polish=False)
    assert saddle.method == SaddleMethod.MAX_MIN.value
    for shift in (-0.02, 0.02):
        _, _, G = inner_min(saddle.t_star + shift, q)
        assert overlap_entropy(q.beta) + G < saddle.value


def test_overlap_profile_grid():
    profile = overlap_profile(0.5, 0.0, [-0.2, 0.0, 0.2])
    assert len(profile) == 3
    assert profile[0].value == pytest.approx(profile[2].value, abs=1e-6)


def test_scan_stops_at_the_first_flipped_overlap(monkeypatch):
    visited = []

    def fake_w(x, omega, h, quad):
        visited.append(omega)
        return 0.1 - (omega - 0.5) ** 2

    monkeypatch.setattr(secondmoment, "_w_or_minus_inf", fake_w)
    monkeypatch.setattr(secondmoment, "w_overlap", lambda q, quad, polish=True: SimpleNamespace(value=0.0))

    scan = scan_overlaps(-0.5, 0.0, first=[0.5], stop_when_flipped=True)
    assert visited == [0.5]
    assert scan.flipped and scan.omega_best == 0.5

    visited.clear()
    scan = scan_overlaps(-0.5, 0.0)
    assert len(visited) > 100
    assert scan.omega_best == pytest.approx(0.5, abs=1e-4)


def test_e_cor_skips_energies_without_an_uncorrelated_saddle(monkeypatch):
    hints = []

    def fake_scan(E, h, quad, omega_step, first=(), stop_when_flipped=False):
        hints.append(list(first))
        if E > -0.1:
            raise DomainError(f"empty t-range at E={E}")
        if E < -0.6:
            return CorrelationScan(energy=E, w_zero=0.0, w_best=1e-3, omega_best=0.3)
        return CorrelationScan(energy=E, w_zero=1e-3, w_best=0.0, omega_best=0.0)

    monkeypatch.setattr(secondmoment, "scan_overlaps", fake_scan)
    monkeypatch.setattr(secondmoment, "h_star", lambda: 0.3513)

    assert e_cor(0.0) == pytest.approx(-0.6, abs=ECOR_XTOL)
    # the first call at the low end has no hint; every later call reuses the flipped overlap
    assert hints[0] == []
    assert all(hint == [0.3] for hint in hints[1:])


def test_e_cor_rejects_unstable_threshold():
    with pytest.raises(ParameterError):
        e_cor(0.5)


@pytest.mark.slow
def test_zero_overlap_dominates_near_the_maximum():
    x = w_sup(0.0).x_star
    scan = scan_overlaps(-SQRT2 * x, 0.0)
    assert not scan.flipped
    assert scan.omega_best == 0.0


@pytest.mark.slow
def test_correlated_pairs_dominate_near_ground_energy():
    e_min, _ = energy_roots(0.0)
    scan = scan_overlaps(e_min + 0.04, 0.0)
    assert scan.flipped
    assert scan.omega_best > 0.0


@pytest.mark.slow
def test_first_moment_profile_at_threshold():
    h = h_star()
    x = w_sup(h).x_star
    saddle = w_overlap(OverlapQuery(x=x, omega=0.0, h=h))
    assert saddle.value == pytest.approx(0.0, abs=1e-6)


@pytest.mark.slow
def test_e_cor_at_zero_threshold():
    e_min, e_max = energy_roots(0.0)
    value = e_cor(0.0)
    assert value == pytest.approx(-0.6725, abs=2e-3)
    assert e_min < value < e_max


@pytest.mark.slow
def test_h_cor():
    value = h_cor()
    assert value == pytest.approx(0.2856, abs=2e-3)
    assert 0.0 < value < h_star()



@pytest.mark.slow
def test_threshold_profile_peaks_at_zero_overlap():
    h = h_star()
    x = w_sup(h).x_star
    omegas = np.linspace(-1.0, 1.0, 21)
    for omega, saddle in zip(omegas, overlap_profile(x, h, omegas)):
        if abs(omega) < 1e-12:
            assert saddle.value == pytest.approx(0.0, abs=1e-5)
        else:
            assert saddle.value <= 1e-6


@pytest.mark.slow
def test_profile_stays_positive_deep_in_the_window():
    h = 0.05
    x = w_sup(h).x_star
    omegas = np.linspace(-1.0, 1.0, 21)
    assert all(saddle.value > 0.0 for saddle in overlap_profile(x, h, omegas))


@pytest.mark.slow
def test_uncorrelated_pair_grid():
    for x in np.linspace(0.35, 0.8, 10):
        for h in np.linspace(0.0, 0.3, 10):
            saddle = w_overlap(OverlapQuery(x=float(x), omega=0.0, h=float(h)))
            assert saddle.value == pytest.approx(2.0 * w_x(float(x), float(h)), abs=1e-6)
