import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sourcestrength import units
from sourcestrength.errors import InvalidQuantityError
from sourcestrength.model import ZoneParams

CUFT = 0.3048 ** 3


@pytest.mark.parametrize("fn,value,expected,rel", [
    (units.cuft_to_m3, 780, 22.08714, 1e-6),
    (units.cuft_to_m3, 6143, 173.951, 1e-5),
    (units.cuft_to_m3, 1 / CUFT, 1.0, 1e-12),
    (units.cfm_to_m3s, 28, 0.01321453, 1e-6),
    (units.cfm_to_m3s, 115, 0.0542740, 1e-5),
    (units.cfm_to_m3s, 60 / CUFT, 1.0, 1e-12),
    (units.slpm_to_m3s, 0.42, 7.0e-6, 1e-12),
    (units.slpm_to_m3s, 20, 3.333333e-4, 1e-6),
    (units.slpm_to_m3s, 60000, 1.0, 1e-12),
])
def test_conversion_values(fn, value, expected, rel):
    assert fn(value) == pytest.approx(expected, rel=rel)


@pytest.mark.parametrize("forward,inverse", [
    (units.cuft_to_m3, units.m3_to_cuft),
    (units.cfm_to_m3s, units.m3s_to_cfm),
    (units.slpm_to_m3s, units.m3s_to_slpm),
])
@given(x=st.floats(1e-6, 1e6))
def test_round_trip(forward, inverse, x):
    assert abs(inverse(forward(x)) - x) <= 1e-12 * x


@pytest.mark.parametrize("bad", [0.0, -1.0, math.nan, math.inf, "abc", None])
def test_invalid_values_rejected(bad):
    with pytest.raises(InvalidQuantityError):
        units.cuft_to_m3(bad)


def test_equilibrium_and_time_constant_of_chamber():
    p = ZoneParams(M=units.cuft_to_m3(780), Q=units.cfm_to_m3s(28),
                   c=units.slpm_to_m3s(0.42), C0=392.0, Ts=20.0)
    assert abs(p.steady_state(1.0) - 530.0) < 1.0
    assert abs(p.C0 + p.steady_state(1.0) - 922.0) < 1.0
    assert p.time_constant == pytest.approx(1671, abs=1)
    # about 83 samples, i.e. 28 minutes, within one sample
    assert abs(p.time_constant / p.Ts - 83.5) <= 1.0
    assert np.isclose(p.time_constant / 60, 28, atol=0.5)
