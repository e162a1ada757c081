"""Estimators of occupancy ``N`` and inflow ``Q`` from transient data."""
from .base import Estimate
from .mle import mle_fit
from .moments import (MomentAccumulator, OnlineMME, empirical_moment, g_derivative,
                      g_function, g_inverse, g_limit, mme_fit, mme_update, power_integral,
                      power_integral_deriv)
from .rls import OnlineRLS, apply_tridiag_inverse, rls_fit, rls_update, tridiag_inverse

METHODS = ("MLE", "RLS", "MME2", "MME3")


def fit(method: str, obs, p, **kwargs) -> Estimate:
    """Dispatch on a method tag (``MLE``, ``RLS``, ``MME<m>``; case-insensitive)."""
    tag = method.upper()
    if tag == "MLE":
        return mle_fit(obs, p, **kwargs)
    if tag == "RLS":
        return rls_fit(obs, p, **kwargs)[0]
    if tag.startswith("MME") and tag[3:].isdigit():
        return mme_fit(obs, p, int(tag[3:]))
    raise ValueError(f"unknown estimator {method!r}")


__all__ = [
    "Estimate", "METHODS", "MomentAccumulator", "OnlineMME", "OnlineRLS",
    "apply_tridiag_inverse", "empirical_moment", "fit", "g_derivative", "g_function",
    "g_inverse", "g_limit", "mle_fit", "mme_fit", "mme_update", "power_integral",
    "power_integral_deriv", "rls_fit", "rls_update", "tridiag_inverse",
]
