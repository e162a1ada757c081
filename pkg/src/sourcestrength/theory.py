"""Theoretical variance of the occupancy estimate for MLE (CRLB), RLS and MME.

All variances are also reported as a dimensionless *factor* multiplying the
common scale ``sigma^2 Ts M^2 / (T^3 g^2)`` (``T = n Ts``, ``g`` the generation
rate in ppm m^3/s). For short horizons ``K = QT/M`` the factors are::

    CRLB      48  (1 + a1 K + a2 K^2/2! + a3 K^3/3!)
    RLS       192 (1 + b1 K + ...)
    MME, m=2  84  (1 + c1 K + ...)

The ``*_exact`` functions evaluate the underlying finite-sum expressions
numerically; the ``*_expansion`` functions evaluate the truncated series.
"""
from dataclasses import dataclass
from fractions import Fraction
import math
import warnings

import numpy as np

from .errors import DegenerateConfigurationError, ParameterError
from .estimators.moments import power_integral, power_integral_deriv
from .estimators.rls import apply_tridiag_inverse
from .model import ZoneParams

#: Leading factors and K-series coefficients (``K^j / j!`` convention).
LEADING = {"crlb": 48.0, "rls": 192.0, "mme": 84.0}
COEFFICIENTS = {
    "crlb": (Fraction(2, 3), Fraction(377, 945), Fraction(2411, 11340)),
    "rls": (Fraction(3, 8), Fraction(169, 1120), Fraction(57, 1120)),
    "mme": (Fraction(24, 35), Fraction(11, 25), Fraction(1581, 6125)),
}
#: Largest horizon for which the third-order series is trusted.
VALID_K = 2.5


def _check(n, sigma):
    if int(n) != n or n < 2:
        raise ParameterError(f"n must be an integer >= 2, got {n!r}")
    if not (math.isfinite(sigma) and sigma > 0):
        raise ParameterError(f"sigma must be > 0, got {sigma!r}")
    return int(n)


def variance_scale(p: ZoneParams, n, sigma):
    """``sigma^2 Ts M^2 / (T^3 g^2)`` with ``T = n Ts``."""
    T = n * p.Ts
    return sigma ** 2 * p.Ts * p.M ** 2 / (T ** 3 * p.gain ** 2)


def normalized_factor(variance, p: ZoneParams, n, sigma):
    return variance / variance_scale(p, n, sigma)


def _curve(p, N, Q, n):
    t = p.Ts * np.arange(1, n + 1)
    rise = -np.expm1(-t * Q / p.M)
    return t, rise


def fisher_information(p: ZoneParams, N, Q, n, sigma) -> np.ndarray:
    """Fisher information of ``(N, Q)`` from ``n`` samples (i = 1..n).

    Uses the symmetric definition: the (2, 2) entry is ``sum (da/dQ)^2``.
    """
    n = _check(n, sigma)
    g = p.gain
    t, rise = _curve(p, N, Q, n)
    dN = g / Q * rise
    dQ = -g * N / Q ** 2 * rise + g * N * t / (Q * p.M) * np.exp(-t * Q / p.M)
    J = np.column_stack([dN, dQ])
    return J.T @ J / sigma ** 2


def _inv11(A, what):
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    if not (abs(det) > 1e-13 * abs(A[0, 0] * A[1, 1])) or not np.isfinite(det):
        raise DegenerateConfigurationError(f"{what} matrix is singular")
    return A[1, 1] / det


def crlb_exact(p: ZoneParams, N, Q, n, sigma) -> float:
    """``[I^-1]_11``: lower bound on the variance of any unbiased ``N_hat``."""
    return float(_inv11(fisher_information(p, N, Q, n, sigma), "Fisher information"))


def _expansion(method, p, Q, n, sigma, order):
    if order not in (0, 1, 2, 3):
        raise ParameterError(f"expansion order must be 0..3, got {order!r}")
    n = _check(n, sigma)
    K = Q * n * p.Ts / p.M
    if K > VALID_K:
        warnings.warn(f"K={K:.3g} is outside the expansion's validity region (K <= {VALID_K})",
                      stacklevel=3)
    factor = 1.0
    for j, coef in enumerate(COEFFICIENTS[method][:order], start=1):
        factor += float(coef) * K ** j / math.factorial(j)
    return LEADING[method] * factor * variance_scale(p, n, sigma)


def crlb_expansion(p: ZoneParams, Q, n, sigma, order=3) -> float:
    return _expansion("crlb", p, Q, n, sigma, order)


def rls_variance_exact(p: ZoneParams, N, Q, n, sigma) -> float:
    """GLS variance ``[(X'V^-1X)^-1]_11`` with the true curve in ``X``."""
    n = _check(n, sigma)
    _, rise = _curve(p, N, Q, n)
    a = p.gain * N / Q * rise
    X = (p.Ts / p.M) * np.column_stack([np.full(n, p.gain), -a])
    A = X.T @ apply_tridiag_inverse(X, sigma ** 2)
    return float(_inv11(A, "GLS normal"))


def rls_variance_expansion(p: ZoneParams, Q, n, sigma, order=3) -> float:
    return _expansion("rls", p, Q, n, sigma, order)


def mme_variance_factor(m: int) -> float:
    """Short-horizon MME factor ``4 (m+1)^2 (12+m) / (m (2m-1))``."""
    if int(m) != m or m < 2:
        raise ParameterError(f"moment order must be an integer >= 2, got {m!r}")
    return 4.0 * (m + 1) ** 2 * (12 + m) / (m * (2 * m - 1))


def moment_sensitivity(p: ZoneParams, N, Q, T, m):
    """``A_{m,T}(N, Q)`` and its gradient ``(dA/dN, dA/dQ)``.

    ``A_{m,T} = (gN/Q)^m T I_m(QT/M)`` with ``I_m`` the power integral.
    """
    g = p.gain
    r = Q * T / p.M
    I = power_integral(m, r)
    dI = power_integral_deriv(m, r)
    A = (g * N / Q) ** m * T * I
    dA_dN = m * A / N
    dA_dQ = T * (g * N) ** m * (-m * Q ** (-m - 1) * I + Q ** (-m) * dI * T / p.M)
    return A, np.array([dA_dN, dA_dQ])


def mme_variance_exact(p: ZoneParams, N, Q, n, sigma, m=2) -> float:
    """Delta-method variance ``[H Sigma H']_11`` of the MME occupancy estimate.

    ``Sigma`` uses the finite sums ``Var(Y_1) = Ts^2 n sigma^2``,
    ``Var(Y_m) = Ts^2 m^2 sigma^2 sum a_i^{2m-2}`` and
    ``Cov = Ts^2 m sigma^2 sum a_i^{m-1}`` rather than their large-n limits.
    """
    n = _check(n, sigma)
    if int(m) != m or m < 2:
        raise ParameterError(f"moment order must be an integer >= 2, got {m!r}")
    T = n * p.Ts
    _, rise = _curve(p, N, Q, n)
    a = p.gain * N / Q * rise
    s2 = p.Ts ** 2 * sigma ** 2
    cov = m * np.sum(a ** (m - 1))
    Sigma = s2 * np.array([[n, cov], [cov, m * m * np.sum(a ** (2 * m - 2))]])
    D = np.vstack([moment_sensitivity(p, N, Q, T, 1)[1],
                   moment_sensitivity(p, N, Q, T, m)[1]])
    det = D[0, 0] * D[1, 1] - D[0, 1] * D[1, 0]
    if not (abs(det) > 1e-13 * abs(D[0, 0] * D[1, 1])):
        raise DegenerateConfigurationError("moment sensitivity matrix is singular")
    H = np.linalg.inv(D)
    return float((H @ Sigma @ H.T)[0, 0])


def mme_variance_expansion(p: ZoneParams, Q, n, sigma, order=3) -> float:
    """Series for ``m = 2`` only."""
    return _expansion("mme", p, Q, n, sigma, order)


def resource_ratios(slow=LEADING["rls"], fast=LEADING["mme"]):
    """Extra samples and extra sensors the slower method needs for equal variance.

    Variance scales as ``1/T^3`` and as ``1/N_s`` with ``N_s`` fused sensors, so
    the ratios are ``(slow/fast)^(1/3)`` and ``slow/fast``.
    """
    ratio = slow / fast
    return ratio ** (1.0 / 3.0), ratio


@dataclass(frozen=True)
class VarianceReport:
    method: str
    K: float
    variance_exact: float
    variance_expansion: float
    order: int
    #: exact variance divided by ``sigma^2 Ts M^2 / (T^3 g^2)``
    leading_factor: float
    expansion_factor: float
    in_validity_region: bool


def variance_report(method, p: ZoneParams, N, Q, n, sigma, m=2, order=3) -> VarianceReport:
    """Exact and series variance for ``method`` in {crlb, rls, mme}.

    For ``mme`` with ``m != 2`` no series is known beyond the leading factor, so
    the expansion is the short-horizon value ``mme_variance_factor(m)``.
    """
    method = method.lower()
    K = Q * n * p.Ts / p.M
    scale = variance_scale(p, n, sigma)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if method == "crlb":
            exact = crlb_exact(p, N, Q, n, sigma)
            series = crlb_expansion(p, Q, n, sigma, order)
        elif method == "rls":
            exact = rls_variance_exact(p, N, Q, n, sigma)
            series = rls_variance_expansion(p, Q, n, sigma, order)
        elif method == "mme":
            exact = mme_variance_exact(p, N, Q, n, sigma, m)
            if m == 2:
                series = mme_variance_expansion(p, Q, n, sigma, order)
            else:
                order = 0
                series = mme_variance_factor(m) * scale
        else:
            raise ParameterError(f"unknown method {method!r}")
    return VarianceReport(method if method != "mme" else f"mme{m}", K, exact, series, order,
                          exact / scale, series / scale, K <= VALID_K)


def expansion_coefficients_numeric(method, K_grid=None, n=20000, degree=6, m=2):
    """Recover the first three series coefficients from exact-numeric variances.

    Fits a polynomial in ``K`` to ``exact / (leading * scale)`` at fixed large
    ``n`` (K varied through ``Q``) and returns ``(c1, c2, c3)`` in the
    ``K^j / j!`` convention. Independent of the tabulated coefficients.
    """
    method = method.lower()
    if K_grid is None:
        K_grid = np.linspace(0.01, 0.3, 30)
    p = ZoneParams(M=1.0, Q=1.0, c=1e-6, Ts=1.0 / n)
    exact = {"crlb": crlb_exact, "rls": rls_variance_exact,
             "mme": lambda *a: mme_variance_exact(*a, m=m)}[method]
    lead = LEADING[method] if method != "mme" else mme_variance_factor(m)
    ratios = [exact(p, 1.0, K, n, 1.0) / (lead * variance_scale(p, n, 1.0)) for K in K_grid]
    coef = np.polynomial.polynomial.polyfit(np.asarray(K_grid), ratios, degree)
    return tuple(float(coef[j] * math.factorial(j)) for j in (1, 2, 3))
