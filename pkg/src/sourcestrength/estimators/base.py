from dataclasses import dataclass
import math
import typing

import numpy as np

from ..errors import ParameterError
from ..model import TimeSeries, ZoneParams


@dataclass(frozen=True)
class Estimate:
    """Point estimate of occupancy and inflow."""

    N_hat: float
    Q_hat: float
    method: str
    iterations: int = 0
    converged: bool = True
    #: Variance of ``N_hat`` reported by the estimator itself, if any.
    variance: typing.Optional[float] = None

    def __post_init__(self):
        if self.converged and not (math.isfinite(self.N_hat) and math.isfinite(self.Q_hat)
                                   and self.Q_hat > 0):
            raise ParameterError(
                f"converged estimate must be finite with Q_hat > 0: {self.N_hat}, {self.Q_hat}")


def signal(obs: TimeSeries, p: ZoneParams) -> TimeSeries:
    """Above-background series with a t=0 sample, as every estimator expects."""
    if obs.ts != p.Ts and not math.isclose(obs.ts, p.Ts, rel_tol=1e-9):
        raise ParameterError(f"series interval {obs.ts} s does not match Ts={p.Ts} s")
    return obs.above_background(p.C0).with_origin()


def as_matrix(y):
    """View a trace (or stack of traces) as a 2-d ``(trials, n + 1)`` array."""
    y = np.asarray(y, dtype=float)
    return y[None, :] if y.ndim == 1 else y
