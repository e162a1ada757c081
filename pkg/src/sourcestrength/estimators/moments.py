"""Method-of-moments estimation from time-integral moments.

Matching the empirical integrals ``Y_{1,T}``, ``Y_{m,T}`` of the observations to
their model values ``A_{1,T}``, ``A_{m,T}`` and eliminating ``N`` leaves a scalar
equation in ``r = QT/M``::

    G_m(r) = T^{m-1} Y_{m,T} / Y_{1,T}^m

``G_m`` is decreasing and convex on ``(0, inf)`` with limits ``2^m/(m+1)`` at 0
and 1 at infinity, so a bracketed Newton iteration inverts it reliably.
"""
from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial
import math

import numpy as np

from ..errors import (DegenerateDataError, OutOfRangeError, ParameterError,
                      UnderdeterminedError)
from ..model import TimeSeries, ZoneParams
from .base import Estimate, as_matrix, signal

_SERIES_CUTOFF = 1.0
_SERIES_TERMS = 60


def _check_order(m):
    if int(m) != m or m < 1:
        raise ParameterError(f"moment order must be a positive integer, got {m!r}")
    return int(m)


@lru_cache(maxsize=None)
def _series_coefficients(m):
    # ((1 - e^-x)/x)^m = sum_j b_j x^j, truncated
    base = np.array([(-1.0) ** j / factorial(j + 1) for j in range(_SERIES_TERMS)])
    coef = np.array([1.0])
    for _ in range(m):
        coef = np.polynomial.polynomial.polymul(coef, base)[:_SERIES_TERMS]
    return coef


def _phi(x):
    # (1 - e^-x)/x, phi(0) = 1
    x = np.asarray(x, dtype=float)
    safe = np.where(x == 0, 1.0, x)
    return np.where(x == 0, 1.0, -np.expm1(-safe) / safe)


def _dphi(x):
    safe = np.where(x == 0, 1.0, x)
    val = (safe * np.exp(-safe) + np.expm1(-safe)) / safe ** 2
    return np.where(x == 0, -0.5, val)


def power_integral(m, r):
    """``int_0^1 (1 - exp(-r z))^m dz`` for ``r >= 0`` (vectorised in ``r``).

    The binomial identity ``sum_k C(m,k) (-1)^k phi(k r)`` cancels badly for
    small ``r``, where a power series in ``r`` is used instead.
    """
    m = _check_order(m)
    r = np.asarray(r, dtype=float)
    small = r < _SERIES_CUTOFF
    out = np.empty_like(r)
    if np.any(small):
        rs = r[small]
        b = _series_coefficients(m)
        j = np.arange(len(b))
        out[small] = rs ** m * np.polynomial.polynomial.polyval(rs, b / (m + j + 1))
    if np.any(~small):
        rl = r[~small]
        out[~small] = sum(comb(m, k) * (-1) ** k * _phi(k * rl) for k in range(m + 1))
    return out if out.ndim else float(out)


def power_integral_deriv(m, r):
    """Derivative of :func:`power_integral` with respect to ``r``."""
    m = _check_order(m)
    r = np.asarray(r, dtype=float)
    small = r < _SERIES_CUTOFF
    out = np.empty_like(r)
    if np.any(small):
        rs = r[small]
        b = _series_coefficients(m)
        j = np.arange(len(b))
        out[small] = rs ** (m - 1) * np.polynomial.polynomial.polyval(
            rs, b * (m + j) / (m + j + 1))
    if np.any(~small):
        rl = r[~small]
        out[~small] = sum(comb(m, k) * (-1) ** k * k * _dphi(k * rl) for k in range(1, m + 1))
    return out if out.ndim else float(out)


def g_limit(m):
    """``G_m(0+) = 2^m / (m + 1)``."""
    return 2.0 ** m / (m + 1)


def _g_and_slope(m, r):
    Im = power_integral(m, r)
    I1 = power_integral(1, r)
    dIm = power_integral_deriv(m, r)
    dI1 = power_integral_deriv(1, r)
    G = Im / I1 ** m
    dG = dIm / I1 ** m - m * Im * dI1 / I1 ** (m + 1)
    return G, dG


def g_function(m, r):
    """Moment ratio ``G_m(r)`` with ``N`` eliminated."""
    m = _check_order(m)
    if m < 2:
        raise ParameterError("G_m is defined for m >= 2")
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)):
        raise ParameterError("G_m(r) requires r > 0")
    G = power_integral(m, r) / power_integral(1, r) ** m
    return G if np.ndim(G) else float(G)


def g_derivative(m, r):
    m = _check_order(m)
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)):
        raise ParameterError("G_m'(r) requires r > 0")
    dG = _g_and_slope(m, r)[1]
    return dG if np.ndim(dG) else float(dG)


def _g_inverse_array(m, rho, tol=1e-13, maxiter=200):
    """Vectorised safeguarded Newton; entries outside the range come back NaN."""
    rho = np.asarray(rho, dtype=float)
    out = np.full(rho.shape, np.nan)
    ok = (rho > 1.0) & (rho < g_limit(m))
    if not np.any(ok):
        return out
    target = rho[ok]
    lo = np.full(target.shape, 1e-6)
    hi = np.full(target.shape, 100.0)
    # expand the bracket so that G(lo) > rho > G(hi)
    for _ in range(20):
        need = g_function(m, lo) <= target
        if not np.any(need):
            break
        lo = np.where(need, lo * 1e-3, lo)
    for _ in range(40):
        need = g_function(m, hi) >= target
        if not np.any(need):
            break
        hi = np.where(need, hi * 10.0, hi)

    r = lo.copy()
    active = np.ones(target.shape, dtype=bool)
    for _ in range(maxiter):
        G, dG = _g_and_slope(m, r[active])
        f = G - target[active]
        done = np.abs(f) <= tol
        # keep the bracket: G decreasing, so f > 0 means the root is to the right
        lo_a = np.where(f > 0, r[active], lo[active])
        hi_a = np.where(f < 0, r[active], hi[active])
        with np.errstate(divide="ignore", invalid="ignore"):
            step = r[active] - f / dG
        bad = ~np.isfinite(step) | (step <= lo_a) | (step >= hi_a)
        new = np.where(bad, 0.5 * (lo_a + hi_a), step)
        small_step = np.abs(new - r[active]) <= 4 * np.finfo(float).eps * r[active]
        lo[active], hi[active] = lo_a, hi_a
        r[active] = np.where(done, r[active], new)
        idx = np.flatnonzero(active)
        active[idx[done | small_step]] = False
        if not np.any(active):
            break
    out[ok] = r
    return out


def g_inverse(m, rho, tol=1e-13):
    """Solve ``G_m(r) = rho`` for ``r > 0``.

    Raises
    ------
    OutOfRangeError
        If ``rho`` is not strictly inside ``(1, 2^m/(m+1))``. Such ratios mean
        the data are inconsistent with the growth-curve model (typically heavy
        noise over a short horizon).
    """
    m = _check_order(m)
    if m < 2:
        raise ParameterError("G_m is defined for m >= 2")
    rho = float(rho)
    if not math.isfinite(rho) or rho <= 1.0:
        raise OutOfRangeError(f"moment ratio {rho!r} is not above the lower bound 1", "lower")
    if rho >= g_limit(m):
        raise OutOfRangeError(
            f"moment ratio {rho!r} is not below the upper bound 2^{m}/{m + 1} = {g_limit(m):.6g}",
            "upper")
    return float(_g_inverse_array(m, np.array([rho]), tol=tol)[0])


# --- empirical moments --------------------------------------------------------

@dataclass
class MomentAccumulator:
    """Running trapezoidal integrals of ``y`` and ``y^m`` from ``t = 0``."""

    m: int
    ts: float
    Y1: float = 0.0
    Ym: float = 0.0
    count: int = 0
    last_y: float = 0.0

    def absorb(self, y):
        y = float(y)
        if self.count:
            self.Y1 += 0.5 * self.ts * (self.last_y + y)
            self.Ym += 0.5 * self.ts * (self.last_y ** self.m + y ** self.m)
        self.last_y = y
        self.count += 1
        return self

    @property
    def duration(self):
        return self.ts * max(self.count - 1, 0)


def _trapezoid(values, ts):
    return ts * (values.sum(axis=-1) - 0.5 * (values[..., 0] + values[..., -1]))


def empirical_moment(obs: TimeSeries, m: int) -> float:
    """Trapezoidal ``Y_{m,T} = int_0^T y^m dt``.

    Series without a measured ``t = 0`` sample get ``y_0 = 0``.
    """
    m = _check_order(m)
    if obs.raw:
        raise ParameterError("empirical moments need an above-background series")
    y = obs.with_origin().y
    if len(y) < 2:
        raise UnderdeterminedError("need at least one sampling interval")
    return float(_trapezoid(y ** m, obs.ts))


def first_moment_unit(p: ZoneParams, Q, T):
    """Model first moment at unit occupancy, ``A_{1,T}(1, Q)``.

    ``(g/Q) (T - (M/Q)(1 - exp(-TQ/M)))``, written through the series-safe
    integral so small horizons do not cancel.
    """
    r = np.asarray(Q, dtype=float) * T / p.M
    return p.gain * T * T / p.M * power_integral(1, r) / r


def _mme_kernel(y, p: ZoneParams, m: int):
    """MME over rows of ``y`` (each ``y_0..y_n``); failures come back NaN."""
    y = as_matrix(y)
    n = y.shape[1] - 1
    T = n * p.Ts
    Y1 = _trapezoid(y, p.Ts)
    Ym = _trapezoid(y ** m, p.Ts)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(Y1 > 0, T ** (m - 1) * Ym / Y1 ** m, np.nan)
    r = _g_inverse_array(m, rho)
    Q_hat = p.M * r / T
    with np.errstate(invalid="ignore"):
        N_hat = Y1 / first_moment_unit(p, np.where(np.isfinite(Q_hat), Q_hat, 1.0), T)
    N_hat = np.where(np.isfinite(Q_hat), N_hat, np.nan)
    return N_hat, Q_hat


def _mme_from_moments(Y1, Ym, T, p, m):
    if T <= 0:
        raise UnderdeterminedError("need at least two samples for a moment estimate")
    if not Y1 > 0:
        raise DegenerateDataError(f"first moment must be positive, got {Y1!r}")
    rho = T ** (m - 1) * Ym / Y1 ** m
    r = g_inverse(m, rho)
    Q_hat = p.M * r / T
    N_hat = Y1 / first_moment_unit(p, Q_hat, T)
    return Estimate(float(N_hat), float(Q_hat), f"MME{m}")


def mme_fit(obs: TimeSeries, p: ZoneParams, m: int = 2) -> Estimate:
    """Method-of-moments estimate from the first and ``m``-th moments."""
    m = _check_order(m)
    if m < 2:
        raise ParameterError("MME needs m >= 2")
    state = OnlineMME(p, m)
    for value in signal(obs, p).y:
        state.update(value)
    return state.estimate()


class OnlineMME:
    """Recursive MME: O(1) moment updates, ``G_m`` inverted on demand.

    The first absorbed sample is taken at ``t = 0``.
    """

    def __init__(self, p: ZoneParams, m: int = 2, y0: float = None):
        self.p = p
        self.m = _check_order(m)
        self.first = MomentAccumulator(1, p.Ts)
        self.mth = MomentAccumulator(self.m, p.Ts)
        if y0 is not None:
            self.update(y0)

    @property
    def count(self):
        return self.first.count

    def update(self, y_new):
        self.first.absorb(y_new)
        self.mth.absorb(y_new)
        return self

    def estimate(self) -> Estimate:
        if self.count < 2:
            raise UnderdeterminedError("MME needs at least two samples")
        T = self.first.duration
        return _mme_from_moments(self.first.Y1, self.mth.Ym, T, self.p, self.m)


def mme_update(state: OnlineMME, y_new):
    """Absorb one sample and return ``(state, estimate or None)``."""
    state.update(y_new)
    try:
        return state, state.estimate()
    except UnderdeterminedError:
        return state, None
