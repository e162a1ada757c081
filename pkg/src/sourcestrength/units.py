"""Unit conversions onto the canonical volumetric system.

Internally everything is m^3, m^3/s, ppm(v) and seconds. The scenarios are
specified in imperial / flow-meter units, hence the handful of helpers here.
"""
from dataclasses import dataclass
import math

from .errors import InvalidQuantityError

CUBIC_FOOT = 0.3048 ** 3  # m^3
#: ppm per unit volume fraction
PPM = 1.0e6
LITRE = 1.0e-3  # m^3

KINDS = ("volume", "flow", "concentration", "time")


def _check(value, name):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise InvalidQuantityError(f"{name} must be a real number, got {value!r}") from None
    if not math.isfinite(v) or v <= 0:
        raise InvalidQuantityError(f"{name} must be finite and > 0, got {value!r}")
    return v


def cuft_to_m3(v):
    """Cubic feet to cubic metres."""
    return _check(v, "volume") * CUBIC_FOOT


def m3_to_cuft(v):
    return _check(v, "volume") / CUBIC_FOOT


def cfm_to_m3s(q):
    """Cubic feet per minute to m^3/s."""
    return _check(q, "flow") * CUBIC_FOOT / 60.0


def m3s_to_cfm(q):
    return _check(q, "flow") * 60.0 / CUBIC_FOOT


def slpm_to_m3s(g):
    """Standard litres per minute to m^3/s (no density correction)."""
    return _check(g, "flow") / 60000.0


def m3s_to_slpm(g):
    return _check(g, "flow") * 60000.0


def lps_to_m3s(g):
    return _check(g, "flow") * LITRE


@dataclass(frozen=True)
class Quantity:
    """A scalar tagged with one of the canonical unit kinds.

    Values are already canonical (m^3, m^3/s, ppm, s); construct them with the
    conversion helpers above.
    """

    value: float
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidQuantityError(f"unknown unit kind {self.kind!r}")
        if not math.isfinite(self.value):
            raise InvalidQuantityError(f"{self.kind} value must be finite")
        if self.kind != "concentration" and self.value <= 0:
            raise InvalidQuantityError(f"{self.kind} must be > 0, got {self.value!r}")
