import numpy as np
import pytest

from sourcestrength.errors import ParameterError
from sourcestrength.model import (Constant, Heterogeneous, RandomWalk, TimeSeries, ZoneParams,
                                  co2_generation_rate, growth_curve, poly_approx, propagate,
                                  simulate)


def test_growth_curve_steady_state(chamber):
    assert chamber.steady_state(1) == pytest.approx(529.7, abs=0.05)
    assert chamber.C0 + chamber.steady_state(1) == pytest.approx(921.7, abs=0.05)
    far = growth_curve(chamber, 1.0, 5000).y[-1]
    assert far == pytest.approx(chamber.steady_state(1), rel=1e-12)


def test_growth_curve_origin_and_time_constant(chamber):
    assert growth_curve(chamber, 1.0, 3, origin=True).y[0] == 0.0
    tau = chamber.time_constant
    p = chamber.with_(Ts=tau)
    assert growth_curve(p, 1.0, 1).y[0] == pytest.approx(529.7 * (1 - np.exp(-1)), abs=0.05)
    assert growth_curve(p, 1.0, 1).y[0] == pytest.approx(334.8, abs=0.05)


def test_growth_curve_monotone_concave(chamber):
    a = growth_curve(chamber, 1.0, 400).y
    assert np.all(np.diff(a) > 0)
    assert np.all(np.diff(a, 2) < 0)


def test_growth_curve_depends_on_product_cN(chamber):
    lam = 3.7
    a = growth_curve(chamber, 2.0, 50).y
    b = growth_curve(chamber.with_(c=chamber.c * lam), 2.0 / lam, 50).y
    np.testing.assert_allclose(a, b, rtol=1e-14)


def test_poly_approx_first_order_is_line(chamber):
    n = 10
    line = poly_approx(chamber, 1.0, 1, n)
    slope = chamber.gain / chamber.M
    np.testing.assert_allclose(line.y, slope * line.times, rtol=1e-12)


def test_poly_approx_second_order_error(chamber):
    t = 0.1 * chamber.time_constant
    p = chamber.with_(Ts=t)
    exact = growth_curve(p, 1.0, 1).y[0]
    approx = poly_approx(p, 1.0, 2, 1).y[0]
    assert abs(approx / exact - 1) <= 0.004


def test_poly_approx_high_order_converges(chamber):
    n = chamber.samples_for(2.5)
    exact = growth_curve(chamber, 1.0, n).y
    approx = poly_approx(chamber, 1.0, 30, n).y
    np.testing.assert_allclose(approx, exact, rtol=1e-9)


@pytest.mark.parametrize("M_H,expected", [(1.5, 6.5301e-6), (1.0, 4.353e-6), (2.0, 8.707e-6)])
def test_co2_generation_rate(M_H, expected):
    assert co2_generation_rate(1.8, M_H, 0.83) == pytest.approx(expected, rel=1e-4)


def test_co2_generation_rate_linear_in_met():
    assert co2_generation_rate(1.8, 2.4, 0.83) == 2 * co2_generation_rate(1.8, 1.2, 0.83)


def test_simulate_noiseless_equals_growth_curve(chamber):
    sim = simulate(chamber, Constant(2.0), 0.0, 40, seed=1)
    np.testing.assert_array_equal(sim.y, growth_curve(chamber, 2.0, 40, origin=True).y)


def test_simulate_degenerate_walk_matches_constant(classroom):
    walk = simulate(classroom, RandomWalk(20, 0.0), 5.0, 60, seed=3)
    const = simulate(classroom, Constant(20), 5.0, 60, seed=3)
    np.testing.assert_allclose(walk.y, const.y, rtol=1e-10)
    np.testing.assert_array_equal(walk.truth, const.truth)


def test_simulate_deterministic(classroom):
    a = simulate(classroom, RandomWalk(20, 0.5), 10.0, 100, seed=11)
    b = simulate(classroom, RandomWalk(20, 0.5), 10.0, 100, seed=11)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.truth, b.truth)


def test_simulate_noise_statistics(chamber):
    n, sigma = 100_000, 10.0
    sim = simulate(chamber, Constant(1.0), sigma, n - 1, seed=5)
    resid = sim.y - growth_curve(chamber, 1.0, n - 1, origin=True).y
    assert abs(resid.mean()) < 4 * sigma / np.sqrt(n)
    assert resid.var() == pytest.approx(sigma ** 2, rel=0.05)


def test_propagate_constant_matches_closed_form(classroom):
    a = propagate(classroom, np.full(200, 7.0))
    np.testing.assert_allclose(a[1:], growth_curve(classroom, 7.0, 200).y, rtol=1e-10)


def test_random_walk_occupancy_floored_and_clamped(classroom):
    sim = simulate(classroom, RandomWalk(1, 0.9), 0.0, 500, seed=2)
    assert np.all(sim.truth >= 0)
    assert np.all(sim.truth == np.floor(sim.truth))


def test_heterogeneous_uses_total_generation(classroom):
    rates = (1.0, 1.5, 2.0)
    sim = simulate(classroom, Heterogeneous(rates), 0.0, 30, seed=0)
    total = sum(co2_generation_rate(1.8, m, 0.83) for m in rates)
    expected = growth_curve(classroom.with_(c=total), 1.0, 30, origin=True).y
    np.testing.assert_allclose(sim.y, expected, rtol=1e-12)
    assert np.all(sim.truth == 3)


@pytest.mark.parametrize("kwargs", [
    dict(M=0, Q=1, c=1), dict(M=1, Q=-1, c=1), dict(M=1, Q=1, c=np.nan),
    dict(M=1, Q=1, c=1, Ts=0), dict(M=1, Q=1, c=1, C0=-1),
])
def test_zone_params_validation(kwargs):
    with pytest.raises(ParameterError):
        ZoneParams(**kwargs)


@pytest.mark.parametrize("make", [
    lambda: Constant(-1), lambda: RandomWalk(5, -0.1), lambda: Heterogeneous((0.5,)),
    lambda: Heterogeneous((1.5,), A_D=0),
])
def test_profile_validation(make):
    with pytest.raises(ParameterError):
        make()


def test_time_series_raw_round_trip(chamber):
    ts = growth_curve(chamber, 1.0, 5, origin=True)
    raw = ts.to_raw(chamber.C0)
    assert raw.raw and raw.y[0] == chamber.C0
    np.testing.assert_allclose(raw.above_background(chamber.C0).y, ts.y)
    with pytest.raises(ParameterError):
        TimeSeries(20.0, [1.0, np.nan])
