"""Maximum-likelihood fit of the growth curve.

With i.i.d. Gaussian sensor noise the MLE minimises ``R(N, Q) = sum (y_i -
a_i(N, Q))^2``. We use Levenberg-Marquardt (Marquardt's diagonal scaling) with
the analytic Jacobian, started from the MME(2) estimate.
"""
import math

import numpy as np

from ..errors import EstimationError, SingularFitError
from ..model import TimeSeries, ZoneParams
from .base import Estimate, signal
from .moments import mme_fit
from .rls import rls_fit

MAX_ITER = 200
STEP_TOL = 1e-10


def _relax(x):
    """``f(x) = (1 - exp(-x)) / x`` and ``f'(x)``, accurate as ``x -> 0``."""
    x = np.asarray(x, dtype=float)
    small = x < 0.02
    xs = np.where(small, x, 0.0)
    xl = np.where(small, 1.0, x)
    # Taylor series: sum (-x)^k / (k+1)!  and its derivative
    f_s = 1 - xs / 2 + xs ** 2 / 6 - xs ** 3 / 24 + xs ** 4 / 120 - xs ** 5 / 720
    df_s = -0.5 + xs / 3 - xs ** 2 / 8 + xs ** 3 / 30 - xs ** 4 / 144 + xs ** 5 / 840
    f_l = -np.expm1(-xl) / xl
    df_l = (np.exp(-xl) * (1 + xl) - 1) / xl ** 2
    return np.where(small, f_s, f_l), np.where(small, df_s, df_l)


def curve_and_jacobian(t, p: ZoneParams, N, Q):
    """Model ``a(t)`` and its partials with respect to ``N`` and ``Q``.

    Written as ``a = (g N t / M) f(tQ/M)`` so the ``Q`` partial does not cancel
    for small horizons.
    """
    g = p.gain
    s = t / p.M
    f, df = _relax(s * Q)
    dN = g * s * f
    a = N * dN
    dQ = g * N * s * s * df
    return a, np.column_stack([dN, dQ])


def _initial_guess(obs, p):
    for method in (lambda: mme_fit(obs, p, 2), lambda: rls_fit(obs, p)[0]):
        try:
            est = method()
        except EstimationError:
            continue
        if est.converged:
            return est.N_hat, est.Q_hat
    return 1.0, p.M / (obs.n * p.Ts)


def mle_fit(obs: TimeSeries, p: ZoneParams, init: Estimate = None,
            max_iter: int = MAX_ITER) -> Estimate:
    """Least-squares (maximum-likelihood) estimate of ``(N, Q)``.

    Returns ``converged=False`` with the best iterate if the iteration cap is
    reached; raises :class:`SingularFitError` when the data carry no signal or
    the normal matrix is rank deficient at the solution.
    """
    series = signal(obs, p)
    t, y = series.times, series.y
    if series.n < 2 or len(y) < 3:
        raise SingularFitError("MLE needs at least three samples")
    if not np.any(y != 0):
        raise SingularFitError("all-zero signal: Jacobian is degenerate")

    N, Q = (init.N_hat, init.Q_hat) if init is not None else _initial_guess(series, p)
    if not (math.isfinite(N) and math.isfinite(Q) and Q > 0):
        N, Q = 1.0, p.M / (series.n * p.Ts)

    a, J = curve_and_jacobian(t, p, N, Q)
    resid = y - a
    cost = resid @ resid
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        JtJ = J.T @ J
        grad = J.T @ resid
        diag = np.diag(JtJ)
        if not np.all(diag > 0):
            raise SingularFitError("Jacobian has an all-zero column")
        step_ok = False
        while lam < 1e16:
            try:
                delta = np.linalg.solve(JtJ + lam * np.diag(diag), grad)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            N_new, Q_new = N + delta[0], Q + delta[1]
            if Q_new > 0:
                a_new, J_new = curve_and_jacobian(t, p, N_new, Q_new)
                resid_new = y - a_new
                cost_new = resid_new @ resid_new
                if cost_new <= cost:
                    step_ok = True
                    break
            lam *= 10
        if not step_ok:
            # no descent direction left: we are at a (numerical) minimum
            converged = True
            break
        rel_step = max(abs(delta[0]) / max(abs(N), 1e-12), abs(delta[1]) / Q)
        N, Q, J, resid, cost = N_new, Q_new, J_new, resid_new, cost_new
        lam = max(lam / 10, 1e-12)
        if rel_step < STEP_TOL or cost == 0.0:
            converged = True
            break

    JtJ = J.T @ J
    scale = np.sqrt(np.diag(JtJ))
    if not np.all(scale > 0) or np.linalg.cond(JtJ / np.outer(scale, scale)) > 1e12:
        raise SingularFitError("normal matrix is singular at the solution")
    return Estimate(float(N), float(Q), "MLE", iterations=it, converged=converged)
