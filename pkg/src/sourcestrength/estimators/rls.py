"""Generalized / recursive least squares on the differenced mass balance.

Each interval contributes one equation::

    y_i - y_{i-1} = (Ts/M) (g N - Q y_i) + (eps_i - eps_{i-1})

whose noise has covariance ``sigma^2 tridiag(-1, 2, -1)``. The inverse of that
matrix is known in closed form, ``[V^-1]_ij = (min(i,j) - i j/(n+1)) / sigma^2``,
so every GLS quadratic form reduces to tail sums and is O(n) (batch) or O(1)
per sample (online).

The regression is linear in ``(N, Q)`` only to first order in ``Q Ts/M``: on
exact exponential data the fitted slope is ``(M/Ts)(exp(Q Ts/M) - 1)``. With
``discretization="exact"`` (default) the slope is mapped back through that
relation, which removes the O(Q Ts/2M) bias of the literal ``"euler"`` form.
"""

import numpy as np

from ..errors import DegenerateDataError, ParameterError, SingularFitError, UnderdeterminedError
from ..model import TimeSeries, ZoneParams
from .base import Estimate, as_matrix, signal

_PAIRS = ("11", "1y", "1d", "yy", "yd", "dd")
DISCRETIZATIONS = ("exact", "euler")


def tridiag_inverse(n: int, sigma2: float = 1.0) -> np.ndarray:
    """Dense inverse of ``sigma2 * tridiag(-1, 2, -1)`` of size ``n``."""
    if n < 1:
        raise ParameterError(f"dimension must be >= 1, got {n!r}")
    if not sigma2 > 0:
        raise ParameterError(f"sigma2 must be > 0, got {sigma2!r}")
    i = np.arange(1, n + 1)
    lo = np.minimum.outer(i, i)
    hi = np.maximum.outer(i, i)
    return lo * (n + 1 - hi) / (sigma2 * (n + 1))


def apply_tridiag_inverse(v, sigma2: float = 1.0) -> np.ndarray:
    """``V^-1 v`` in O(n) using the closed form (``v`` along axis 0)."""
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    i = np.arange(1, n + 1).reshape((n,) + (1,) * (v.ndim - 1))
    left = np.cumsum(i * v, axis=0)
    weighted = (n + 1 - i) * v
    right = weighted.sum(axis=0) - np.cumsum(weighted, axis=0)
    return ((n + 1 - i) * left + i * right) / (sigma2 * (n + 1))


def _tail(u):
    return np.cumsum(u[..., ::-1], axis=-1)[..., ::-1]


def _forms_batch(y):
    """Unscaled quadratic forms ``u' T^-1 v`` for u, v in {1, y_i, y_i - y_{i-1}}."""
    y = as_matrix(y)
    n = y.shape[1] - 1
    idx = np.arange(1, n + 1)
    tails = {
        "1": (n + 1 - idx).astype(float)[None, :],
        "y": _tail(y[:, 1:]),
        "d": y[:, -1:] - y[:, :-1],
    }
    moments = {
        "1": n * (n + 1) / 2.0,
        "y": y[:, 1:] @ idx,
        "d": n * y[:, -1] - y[:, :-1].sum(axis=1),
    }
    forms = {}
    for pair in _PAIRS:
        u, v = pair
        forms[pair] = ((tails[u] * tails[v]).sum(axis=1)
                       - moments[u] * moments[v] / (n + 1))
    return forms


def _solve(forms, n, p: ZoneParams, discretization, sigma=None):
    """Normal equations from the quadratic forms; works on scalars or arrays."""
    k1 = p.gain * p.Ts / p.M
    k2 = -p.Ts / p.M
    a11 = k1 * k1 * forms["11"]
    a12 = k1 * k2 * forms["1y"]
    a22 = k2 * k2 * forms["yy"]
    b1 = k1 * forms["1d"]
    b2 = k2 * forms["yd"]
    det = a11 * a22 - a12 * a12
    singular = ~(np.abs(det) > 1e-12 * np.abs(a11 * a22))
    with np.errstate(divide="ignore", invalid="ignore"):
        N_lin = np.where(singular, np.nan, (a22 * b1 - a12 * b2) / det)
        Q_lin = np.where(singular, np.nan, (a11 * b2 - a12 * b1) / det)
        inv11 = np.where(singular, np.nan, a22 / det)

    if sigma is None:
        # residual e' T^-1 e with e = d - X theta
        rss = (forms["dd"] - 2 * (N_lin * b1 + Q_lin * b2)
               + N_lin ** 2 * a11 + 2 * N_lin * Q_lin * a12 + Q_lin ** 2 * a22)
        sigma2 = np.maximum(rss, 0.0) / max(n - 2, 1) if n > 2 else np.full_like(rss, np.nan)
    else:
        sigma2 = sigma ** 2
    variance = sigma2 * inv11

    if discretization == "euler":
        return N_lin, Q_lin, variance, singular
    u = Q_lin * p.Ts / p.M
    with np.errstate(divide="ignore", invalid="ignore"):
        invalid = singular | ~(u > -1.0)
        log_u = np.log1p(np.where(invalid, 0.0, u))
        ratio = np.where(u == 0, 1.0, log_u / np.where(u == 0, 1.0, u))
        Q_hat = np.where(invalid, np.nan, p.M * log_u / p.Ts)
        N_hat = np.where(invalid, np.nan, N_lin * ratio)
    return N_hat, Q_hat, variance, invalid


def _check_discretization(discretization):
    if discretization not in DISCRETIZATIONS:
        raise ParameterError(f"discretization must be one of {DISCRETIZATIONS}")


def _rls_kernel(y, p: ZoneParams, discretization="exact"):
    """Batch GLS over rows of ``y`` (each ``y_0..y_n``); failures are NaN."""
    y = as_matrix(y)
    n = y.shape[1] - 1
    N_hat, Q_hat, _, _ = _solve(_forms_batch(y), n, p, discretization, sigma=1.0)
    return N_hat, Q_hat


def _estimate(N_hat, Q_hat, variance, failed, count):
    if failed:
        raise SingularFitError("normal matrix X'V^-1X is singular (no usable signal)")
    N_hat, Q_hat = float(N_hat), float(Q_hat)
    converged = Q_hat > 0
    return Estimate(N_hat, Q_hat, "RLS", iterations=count, converged=converged,
                    variance=float(variance))


def rls_fit(obs: TimeSeries, p: ZoneParams, sigma: float = None,
            discretization: str = "exact"):
    """GLS estimate of ``(N, Q)`` from all samples.

    Parameters
    ----------
    obs : TimeSeries
        Observations; raw series are shifted by ``p.C0`` and a series without a
        ``t = 0`` sample gets ``y_0 = 0``.
    sigma : float, optional
        Sensor noise standard deviation. When omitted it is estimated from the
        GLS residuals.

    Returns
    -------
    (Estimate, float)
        The estimate and ``[(X'V^-1X)^-1]_11``, the reported variance of
        ``N_hat``.
    """
    _check_discretization(discretization)
    y = signal(obs, p).y
    n = len(y) - 1
    if n < 2:
        raise UnderdeterminedError("RLS needs at least two difference equations (three samples)")
    forms = {k: v[0] for k, v in _forms_batch(y).items()}
    N_hat, Q_hat, variance, failed = _solve(forms, n, p, discretization, sigma)
    est = _estimate(N_hat, Q_hat, variance, bool(failed), n)
    return est, est.variance


class OnlineRLS:
    """Recursive GLS with O(1) sufficient statistics per sample.

    With prefix sums ``P_u(l)`` the closed-form inverse gives, after ``k``
    equations::

        u' T^-1 v = k U V - U C_v - V C_u + D_uv - S_u S_v / (k + 1)

    where ``U = P_u(k)``, ``C_u = sum_{l<k} P_u(l)``, ``D_uv = sum_{l<k}
    P_u(l) P_v(l)`` and ``S_u = sum_i i u_i``. The estimate therefore equals the
    batch GLS fit on the same samples.
    """

    def __init__(self, p: ZoneParams, y0: float, sigma: float = None,
                 discretization: str = "exact"):
        _check_discretization(discretization)
        self.p = p
        self.sigma = sigma
        self.discretization = discretization
        self.k = 0
        self.last_y = float(y0)
        self.total = np.zeros(3)    # P_u(k)
        self.cum = np.zeros(3)      # C_u
        self.weighted = np.zeros(3)  # S_u
        self.cross = np.zeros((3, 3))  # D_uv

    def update(self, y_new):
        y_new = float(y_new)
        u = np.array([1.0, y_new, y_new - self.last_y])
        self.cum += self.total
        self.cross += np.outer(self.total, self.total)
        self.k += 1
        self.total += u
        self.weighted += self.k * u
        self.last_y = y_new
        return self

    def forms(self):
        k, P, C, S, D = self.k, self.total, self.cum, self.weighted, self.cross
        full = k * np.outer(P, P) - np.outer(P, C) - np.outer(C, P) + D - np.outer(S, S) / (k + 1)
        names = "1yd"
        return {pair: full[names.index(pair[0]), names.index(pair[1])] for pair in _PAIRS}

    def estimate(self) -> Estimate:
        if self.k < 2:
            raise UnderdeterminedError("RLS needs at least two difference equations")
        N_hat, Q_hat, variance, failed = _solve(self.forms(), self.k, self.p,
                                                self.discretization, self.sigma)
        return _estimate(N_hat, Q_hat, variance, bool(failed), self.k)


def rls_update(state: OnlineRLS, y_new):
    """Absorb one sample and return ``(state, estimate or None)``.

    ``None`` signals an underdetermined state (fewer than two equations).
    """
    state.update(y_new)
    try:
        return state, state.estimate()
    except (UnderdeterminedError, SingularFitError, DegenerateDataError):
        return state, None
