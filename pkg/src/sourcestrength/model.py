"""Single-zone mass-balance model: growth curve, transient approximation, simulation.

The zone obeys ``M da/dt = c N - Q a`` with ``a = C - C0`` the concentration
above background. For constant occupancy the solution sampled at ``t = i Ts`` is
the monomolecular growth curve::

    a_i = (g N / Q) (1 - exp(-i Ts Q / M))

where ``g = c * 1e6`` is the per-person generation expressed in ppm m^3/s, so
``a`` comes out in ppm.
"""
from dataclasses import dataclass, replace
import math
import typing

import numpy as np

from .errors import ParameterError
from .units import PPM, lps_to_m3s


@dataclass(frozen=True)
class ZoneParams:
    """Physical constants of one well-mixed zone (canonical units)."""

    #: Zone air volume (m^3).
    M: float
    #: Fresh-air inflow (m^3/s).
    Q: float
    #: Per-person generation rate (m^3/s).
    c: float
    #: Supply (background) concentration (ppm).
    C0: float = 0.0
    #: Sampling interval (s).
    Ts: float = 1.0

    def __post_init__(self):
        for name in ("M", "Q", "c", "Ts"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ParameterError(f"ZoneParams.{name} must be finite and > 0, got {v!r}")
        if not (math.isfinite(self.C0) and self.C0 >= 0):
            raise ParameterError(f"ZoneParams.C0 must be finite and >= 0, got {self.C0!r}")

    @property
    def gain(self):
        """Per-person generation in ppm m^3/s."""
        return self.c * PPM

    @property
    def time_constant(self):
        return self.M / self.Q

    def steady_state(self, N=1.0):
        """Equilibrium concentration above background, ``g N / Q`` (ppm)."""
        return self.gain * N / self.Q

    def horizon(self, n):
        """Dimensionless horizon ``K = Q n Ts / M``."""
        return self.Q * n * self.Ts / self.M

    def samples_for(self, K):
        """Nearest whole number of samples giving horizon ``K`` at this flow."""
        return max(1, int(round(K * self.M / (self.Q * self.Ts))))

    def with_(self, **changes):
        return replace(self, **changes)


# --- occupancy profiles ----------------------------------------------------

@dataclass(frozen=True)
class Constant:
    N: float

    def __post_init__(self):
        if not (math.isfinite(self.N) and self.N >= 0):
            raise ParameterError(f"occupancy must be >= 0, got {self.N!r}")


@dataclass(frozen=True)
class RandomWalk:
    """Continuous occupancy state ``N'`` driven by Gaussian increments.

    The effective occupancy is ``floor(N')`` (when ``floor`` is set), clamped at
    zero because negative head-counts are unphysical.
    """

    N0: float
    gamma: float
    floor: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.N0) and self.N0 > 0):
            raise ParameterError(f"N0 must be > 0, got {self.N0!r}")
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise ParameterError(f"gamma must be >= 0, got {self.gamma!r}")


@dataclass(frozen=True)
class Heterogeneous:
    """Occupants with individual metabolic multipliers (constant head-count)."""

    met_rates: typing.Tuple[float, ...]
    A_D: float = 1.8
    R_Q: float = 0.83

    def __post_init__(self):
        object.__setattr__(self, "met_rates", tuple(float(m) for m in self.met_rates))
        if any(not (1.0 <= m <= 2.0) for m in self.met_rates):
            raise ParameterError("metabolic multipliers must lie in [1, 2]")
        if self.A_D <= 0 or self.R_Q <= 0:
            raise ParameterError("A_D and R_Q must be > 0")

    @property
    def N(self):
        return len(self.met_rates)

    def total_generation(self):
        """Summed generation rate of all occupants (m^3/s)."""
        return sum(co2_generation_rate(self.A_D, m, self.R_Q) for m in self.met_rates)


OccupancyProfile = typing.Union[Constant, RandomWalk, Heterogeneous]


@dataclass
class TimeSeries:
    """Uniformly sampled concentration observations.

    ``y[k]`` is taken at ``t = (k + start) * ts`` where ``start`` is 0 when the
    series includes the ``t = 0`` sample and 1 otherwise. ``raw`` series hold
    absolute concentration C; otherwise values are above background.
    """

    ts: float
    y: np.ndarray
    raw: bool = False
    origin: bool = False
    #: Occupancy in effect from each sample time onward (optional).
    truth: typing.Optional[np.ndarray] = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim != 1 or len(self.y) < 1:
            raise ParameterError("TimeSeries needs a non-empty 1-d sample array")
        if not np.all(np.isfinite(self.y)):
            raise ParameterError("TimeSeries samples must be finite")
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=float)
            if self.truth.shape != self.y.shape:
                raise ParameterError("truth track must parallel the samples")

    def __len__(self):
        return len(self.y)

    @property
    def times(self):
        start = 0 if self.origin else 1
        return self.ts * np.arange(start, start + len(self.y))

    @property
    def n(self):
        """Number of sampling intervals covered, i.e. ``T / ts``."""
        return len(self.y) - 1 if self.origin else len(self.y)

    def above_background(self, C0):
        if not self.raw:
            return self
        return replace(self, y=self.y - C0, raw=False)

    def to_raw(self, C0):
        if self.raw:
            return self
        return replace(self, y=self.y + C0, raw=True)

    def with_origin(self):
        """Above-background series with an explicit t=0 sample (0 if unmeasured)."""
        if self.origin:
            return self
        if self.raw:
            raise ParameterError("cannot infer the t=0 sample of a raw series")
        truth = None
        if self.truth is not None:
            truth = np.concatenate([self.truth[:1], self.truth])
        return TimeSeries(self.ts, np.concatenate([[0.0], self.y]), origin=True, truth=truth)

    def head(self, count):
        """First ``count`` samples."""
        truth = None if self.truth is None else self.truth[:count]
        return replace(self, y=self.y[:count], truth=truth)


# --- deterministic curves ----------------------------------------------------

def _sample_times(p, n, origin):
    if n < 1:
        raise ParameterError(f"sample count must be >= 1, got {n!r}")
    start = 0 if origin else 1
    return p.Ts * np.arange(start, n + 1)


def growth_curve(p: ZoneParams, N: float, n: int, origin: bool = False) -> TimeSeries:
    """Noiseless above-background curve ``a_i`` for ``i = 1..n`` (or ``0..n``)."""
    t = _sample_times(p, n, origin)
    a = p.steady_state(N) * -np.expm1(-t * p.Q / p.M)
    return TimeSeries(p.Ts, a, origin=origin, truth=np.full(len(a), float(N)))


def poly_approx(p: ZoneParams, N: float, order: int, n: int, origin: bool = False) -> TimeSeries:
    """Truncated Taylor expansion of the growth curve to the given order.

    ``a_i ~ (gN/Q) (1 - sum_{j=0}^{order} (-x_i)^j / j!)`` with ``x_i = i Ts Q/M``.
    """
    if order < 1:
        raise ParameterError(f"polynomial order must be >= 1, got {order!r}")
    x = _sample_times(p, n, origin) * p.Q / p.M
    acc = np.zeros_like(x)
    term = np.ones_like(x)
    for j in range(1, order + 1):
        term = term * (-x) / j
        acc -= term
    return TimeSeries(p.Ts, p.steady_state(N) * acc, origin=origin,
                      truth=np.full(len(x), float(N)))


def co2_generation_rate(A_D: float, M_H: float, R_Q: float) -> float:
    """Per-person volumetric CO2 generation (m^3/s).

    ``0.0028 A_D M_H R_Q / (0.23 R_Q + 0.77)`` gives litres per second for body
    surface ``A_D`` (m^2), metabolic multiplier ``M_H`` and respiration quotient
    ``R_Q``.
    """
    for name, v in (("A_D", A_D), ("M_H", M_H), ("R_Q", R_Q)):
        if not (math.isfinite(v) and v > 0):
            raise ParameterError(f"{name} must be > 0, got {v!r}")
    return lps_to_m3s(0.0028 * A_D * M_H * R_Q / (0.23 * R_Q + 0.77))


# --- simulation --------------------------------------------------------------

def make_rng(seed):
    """Generator from an int seed, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.default_rng(seed)


def propagate(p: ZoneParams, occupancy, gain=None, a0=0.0):
    """Exact step-by-step solution for piecewise-constant occupancy.

    ``occupancy[i]`` is in effect on ``(t_i, t_{i+1}]``; returns ``a_0..a_n``
    with ``n = len(occupancy)``.
    """
    g = p.gain if gain is None else gain
    decay = math.exp(-p.Ts * p.Q / p.M)
    rise = -math.expm1(-p.Ts * p.Q / p.M)
    occ = np.asarray(occupancy, dtype=float)
    a = np.empty(len(occ) + 1)
    a[0] = a0
    for i, Ni in enumerate(occ):
        a[i + 1] = a[i] * decay + (g * Ni / p.Q) * rise
    return a


def simulate(p: ZoneParams, profile: OccupancyProfile, sigma: float, n: int,
             seed=None, origin: bool = True) -> TimeSeries:
    """Noisy above-background observations with the occupancy truth track.

    The noise vector (``n + 1`` standard normals, the first for ``t = 0``) is
    always drawn first from the stream so that different profiles driven by the
    same seed see identical sensor noise. Random-walk increments follow.
    """
    if not (math.isfinite(sigma) and sigma >= 0):
        raise ParameterError(f"sigma must be >= 0, got {sigma!r}")
    if n < 1:
        raise ParameterError(f"sample count must be >= 1, got {n!r}")
    rng = make_rng(seed)
    noise = rng.standard_normal(n + 1)

    if isinstance(profile, Constant):
        a = growth_curve(p, profile.N, n, origin=True).y
        truth = np.full(n + 1, float(profile.N))
    elif isinstance(profile, Heterogeneous):
        gain = profile.total_generation() * PPM
        a = (gain / p.Q) * -np.expm1(-p.Ts * np.arange(n + 1) * p.Q / p.M)
        truth = np.full(n + 1, float(profile.N))
    elif isinstance(profile, RandomWalk):
        state = profile.N0 + np.concatenate(
            [[0.0], np.cumsum(profile.gamma * rng.standard_normal(n))])
        occ = np.floor(state) if profile.floor else state
        occ = np.maximum(occ, 0.0)
        a = propagate(p, occ[:n])
        truth = occ
    else:
        raise ParameterError(f"unknown occupancy profile {profile!r}")

    y = a + sigma * noise
    if not origin:
        return TimeSeries(p.Ts, y[1:], origin=False, truth=truth[1:])
    return TimeSeries(p.Ts, y, origin=True, truth=truth)
