"""Monte-Carlo studies comparing the estimators against theory.

Every trial draws from its own random substream keyed by ``(seed, experiment,
sweep index, trial index)``, and trials are processed in fixed-size blocks, so a
table is bitwise reproducible whatever the number of worker processes.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import csv
import io
import math
import typing
import warnings

import numpy as np

from . import theory
from .errors import EstimationError, ParameterError
from .estimators import mle_fit
from .estimators.moments import OnlineMME, _mme_kernel
from .estimators.rls import OnlineRLS, _rls_kernel
from .model import (Constant, Heterogeneous, RandomWalk, TimeSeries, ZoneParams,
                    co2_generation_rate, simulate)
from .units import cfm_to_m3s, cuft_to_m3, slpm_to_m3s

EXPERIMENTS = ("rmse_vs_n", "theory_vs_mc", "metabolic", "random_walk")
_EXPERIMENT_IDS = {name: i for i, name in enumerate(EXPERIMENTS)}
ESTIMATORS = ("MLE", "RLS", "MME2", "MME3")

#: Body surface, respiration quotient and nominal metabolic multiplier of the
#: classroom population.
BODY_AREA = 1.8
RESPIRATION_QUOTIENT = 0.83
NOMINAL_MET = 1.5


def chamber_v_a() -> ZoneParams:
    """780 cu.ft test chamber, 28 CFM supply, 0.42 SLPM source, 20 s sampling."""
    return ZoneParams(M=cuft_to_m3(780), Q=cfm_to_m3s(28), c=slpm_to_m3s(0.42),
                      C0=392.0, Ts=20.0)


def classroom_v_c() -> ZoneParams:
    """6143 cu.ft classroom, 115 CFM supply, 2.5 min sampling, seated adults."""
    return ZoneParams(M=cuft_to_m3(6143), Q=cfm_to_m3s(115),
                      c=co2_generation_rate(BODY_AREA, NOMINAL_MET, RESPIRATION_QUOTIENT),
                      C0=392.0, Ts=150.0)


PRESETS = {"chamber_v_a": chamber_v_a, "classroom_v_c": classroom_v_c}


def resolve_scenario(scenario) -> ZoneParams:
    if isinstance(scenario, ZoneParams):
        return scenario
    try:
        return PRESETS[scenario]()
    except KeyError:
        raise ParameterError(f"unknown scenario {scenario!r}; expected one of "
                             f"{sorted(PRESETS)} or ZoneParams") from None


@dataclass(frozen=True)
class Sweep:
    """Primary experiment axis: sample counts, horizons, walk std-devs or head-counts."""

    kind: str
    values: typing.Tuple[float, ...]

    KINDS = ("n", "K", "gamma", "population")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ParameterError(f"sweep kind must be one of {self.KINDS}")
        values = tuple(self.values)
        # a zero walk std-dev is the constant-occupancy limit
        floor_ok = (lambda v: v >= 0) if self.kind == "gamma" else (lambda v: v > 0)
        if not values or any(not (math.isfinite(v) and floor_ok(v)) for v in values):
            raise ParameterError("sweep values must be positive and non-empty")
        object.__setattr__(self, "values", values)


DEFAULT_SWEEPS = {
    "rmse_vs_n": Sweep("n", (20, 30, 40, 50, 60, 80, 100)),
    "theory_vs_mc": Sweep("K", (0.4, 0.6, 0.8, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5)),
    "metabolic": Sweep("population", (5, 10, 20)),
    "random_walk": Sweep("gamma", (0.2, 0.5, 0.9)),
}
DEFAULT_SCENARIOS = {"rmse_vs_n": "chamber_v_a", "theory_vs_mc": "chamber_v_a",
                     "metabolic": "classroom_v_c", "random_walk": "classroom_v_c"}
DEFAULT_ESTIMATORS = {"rmse_vs_n": ESTIMATORS, "theory_vs_mc": ("RLS", "MME2"),
                      "metabolic": ("RLS", "MME2"), "random_walk": ("RLS", "MME2")}
DEFAULT_N_GRID = (20, 30, 40, 60, 80, 120)
DEFAULT_OCCUPANCY = {"rmse_vs_n": 1.0, "theory_vs_mc": 1.0, "metabolic": None,
                     "random_walk": 20.0}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: typing.Union[str, ZoneParams] = "chamber_v_a"
    estimators: typing.Tuple[str, ...] = ESTIMATORS
    trials: int = 10_000
    seed: int = 0
    sweep: Sweep = DEFAULT_SWEEPS["rmse_vs_n"]
    sigma: float = 10.0
    #: Sample counts evaluated within each sweep point (gamma / population sweeps).
    n_grid: typing.Tuple[int, ...] = DEFAULT_N_GRID
    #: True occupancy (constant studies) or initial occupancy (random walk).
    occupancy: float = 1.0
    #: Range of individual metabolic multipliers (metabolic study).
    met_range: typing.Tuple[float, float] = (1.0, 2.0)
    workers: int = 1
    block_size: int = 500

    def __post_init__(self):
        if self.trials < 1:
            raise ParameterError("trials must be >= 1")
        if self.block_size < 1 or self.workers < 1:
            raise ParameterError("block_size and workers must be >= 1")
        object.__setattr__(self, "estimators", tuple(e.upper() for e in self.estimators))
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ParameterError(f"unknown estimator {e!r}")
        object.__setattr__(self, "n_grid", tuple(int(v) for v in self.n_grid))
        if any(v < 2 for v in self.n_grid):
            raise ParameterError("n_grid values must be >= 2")
        resolve_scenario(self.scenario)

    @classmethod
    def for_experiment(cls, experiment, **overrides):
        """Configuration with the defaults of one of :data:`EXPERIMENTS`."""
        if experiment not in EXPERIMENTS:
            raise ParameterError(f"unknown experiment {experiment!r}")
        base = dict(scenario=DEFAULT_SCENARIOS[experiment],
                    estimators=DEFAULT_ESTIMATORS[experiment],
                    sweep=DEFAULT_SWEEPS[experiment])
        if DEFAULT_OCCUPANCY[experiment] is not None:
            base["occupancy"] = DEFAULT_OCCUPANCY[experiment]
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class ResultRow:
    sweep_value: float
    n: int
    K: float
    estimator: str
    trials: int
    failures: int
    rmse: float
    rmse_se: float
    bias: float
    variance: float
    variance_se: float
    theory_rmse: float = math.nan
    theory_variance: float = math.nan


@dataclass
class ResultTable:
    experiment: str
    sweep_kind: str
    rows: typing.List[ResultRow] = field(default_factory=list)

    COLUMNS = ("sweep_value", "n", "K", "estimator", "trials", "failures", "rmse",
               "rmse_se", "bias", "variance", "variance_se", "theory_rmse", "theory_variance")

    @property
    def failures(self):
        return sum(r.failures for r in self.rows)

    def __len__(self):
        return len(self.rows)

    def select(self, estimator=None, sweep_value=None, n=None):
        return [r for r in self.rows
                if (estimator is None or r.estimator == estimator)
                and (sweep_value is None or r.sweep_value == sweep_value)
                and (n is None or r.n == n)]

    def row(self, estimator, sweep_value=None, n=None):
        rows = self.select(estimator, sweep_value, n)
        if len(rows) != 1:
            raise KeyError((estimator, sweep_value, n))
        return rows[0]

    def to_csv(self, stream=None, comment=True):
        """Write the table as CSV; returns the text when no stream is given."""
        out = io.StringIO() if stream is None else stream
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for r in self.rows:
            writer.writerow([_fmt(getattr(r, c)) for c in self.COLUMNS])
        if comment:
            out.write(f"# experiment={self.experiment} failed_trials={self.failures}\n")
        return out.getvalue() if stream is None else None


def _fmt(value):
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(float(value))
    return str(value)


# --- trial generation ----------------------------------------------------------

def trial_rng(seed, experiment, sweep_index, trial):
    """Independent generator for one trial."""
    ss = np.random.SeedSequence(entropy=seed,
                                spawn_key=(_EXPERIMENT_IDS[experiment], sweep_index, trial))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class _Job:
    experiment: str
    cfg: ExperimentConfig
    sweep_index: int
    sweep_value: float
    ns: typing.Tuple[int, ...]
    start: int
    stop: int


def _simulate_trial(job: _Job, p: ZoneParams, rng, n_max):
    """One trace ``y_0..y_n_max`` (above background) and its occupancy track."""
    cfg = job.cfg
    if job.experiment == "metabolic":
        lo, hi = cfg.met_range
        rates = rng.uniform(lo, hi, size=int(job.sweep_value))
        profile = Heterogeneous(tuple(rates), BODY_AREA, RESPIRATION_QUOTIENT)
    elif job.experiment == "random_walk":
        profile = RandomWalk(cfg.occupancy, job.sweep_value)
    else:
        profile = Constant(cfg.occupancy)
    trace = simulate(p, profile, cfg.sigma, n_max, seed=rng)
    return trace.y, trace.truth


def _estimate_rows(method, Y, p: ZoneParams):
    if method == "RLS":
        return _rls_kernel(Y, p)[0]
    if method.startswith("MME"):
        return _mme_kernel(Y, p, int(method[3:]))[0]
    out = np.full(Y.shape[0], np.nan)
    for k, row in enumerate(Y):
        try:
            est = mle_fit(TimeSeries(p.Ts, row, origin=True), p)
        except EstimationError:
            continue
        if est.converged:
            out[k] = est.N_hat
    return out


def _run_block(job: _Job):
    """Estimates and reference occupancy for trials ``start..stop-1`` of one sweep point."""
    cfg = job.cfg
    p = resolve_scenario(cfg.scenario)
    n_max = max(job.ns)
    traces, tracks = [], []
    for trial in range(job.start, job.stop):
        y, truth = _simulate_trial(job, p, trial_rng(cfg.seed, job.experiment,
                                                     job.sweep_index, trial), n_max)
        traces.append(y)
        tracks.append(truth)
    Y = np.array(traces)
    truth = np.array(tracks)
    result = {}
    for n in job.ns:
        if job.experiment == "random_walk":
            reference = truth[:, :n].mean(axis=1)
        elif job.experiment == "metabolic":
            reference = np.full(len(Y), job.sweep_value)
        else:
            reference = np.full(len(Y), cfg.occupancy)
        estimates = {m: _estimate_rows(m, Y[:, :n + 1], p) for m in cfg.estimators}
        result[n] = (reference, estimates)
    return result


def _jobs(experiment, cfg, sweep_index, sweep_value, ns):
    return [_Job(experiment, cfg, sweep_index, sweep_value, tuple(ns), start,
                 min(start + cfg.block_size, cfg.trials))
            for start in range(0, cfg.trials, cfg.block_size)]


def _execute(jobs, workers):
    if workers == 1 or len(jobs) == 1:
        return [_run_block(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_block, jobs))


def summarize(errors):
    """RMSE, its standard error, bias, variance and the variance's standard error."""
    errors = np.asarray(errors, dtype=float)
    k = len(errors)
    if k == 0:
        return (math.nan,) * 5
    sq = errors ** 2
    mse = sq.mean()
    rmse = math.sqrt(float(mse))
    mse_se = float(sq.std(ddof=1)) / math.sqrt(k) if k > 1 else math.nan
    rmse_se = mse_se / (2 * rmse) if rmse > 0 else 0.0
    bias = errors.mean()
    dev2 = (errors - bias) ** 2
    variance = dev2.sum() / (k - 1) if k > 1 else math.nan
    var_se = float(dev2.std(ddof=1)) / math.sqrt(k) if k > 1 else math.nan
    return rmse, rmse_se, float(bias), float(variance), var_se


def _theory_variance(experiment, method, p: ZoneParams, N, n, sigma):
    if sigma == 0:
        return 0.0
    Q = p.Q
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if experiment == "theory_vs_mc":
            if method == "RLS":
                return theory.rls_variance_expansion(p, Q, n, sigma, 3)
            if method == "MME2":
                return theory.mme_variance_expansion(p, Q, n, sigma, 3)
            if method == "MLE":
                return theory.crlb_expansion(p, Q, n, sigma, 3)
            return theory.mme_variance_factor(int(method[3:])) * theory.variance_scale(p, n, sigma)
        if experiment == "rmse_vs_n":
            if method == "MLE":
                return theory.crlb_exact(p, N, Q, n, sigma)
            if method == "RLS":
                return theory.rls_variance_exact(p, N, Q, n, sigma)
            return theory.mme_variance_exact(p, N, Q, n, sigma, int(method[3:]))
    return math.nan


def run_experiment(experiment: str, cfg: ExperimentConfig) -> ResultTable:
    """Run one study and return rows ordered by sweep value, n, estimator."""
    if experiment not in EXPERIMENTS:
        raise ParameterError(f"unknown experiment {experiment!r}")
    p = resolve_scenario(cfg.scenario)
    sweep = cfg.sweep
    if experiment in ("rmse_vs_n", "theory_vs_mc"):
        if sweep.kind not in ("n", "K"):
            raise ParameterError(f"{experiment} sweeps sample counts (n) or horizons (K)")
    elif experiment == "metabolic" and sweep.kind != "population":
        raise ParameterError("metabolic sweeps population sizes")
    elif experiment == "random_walk" and sweep.kind != "gamma":
        raise ParameterError("random_walk sweeps walk standard deviations (gamma)")

    table = ResultTable(experiment, sweep.kind)
    jobs, layout = [], []
    for index, value in enumerate(sweep.values):
        if sweep.kind == "n":
            ns = (int(value),)
        elif sweep.kind == "K":
            ns = (p.samples_for(value),)
        else:
            ns = cfg.n_grid
        if min(ns) < 2:
            raise ParameterError(f"sweep value {value} gives fewer than 2 samples")
        block = _jobs(experiment, cfg, index, value, ns)
        layout.append((value, ns, len(block)))
        jobs.extend(block)

    results = _execute(jobs, cfg.workers)
    cursor = 0
    for value, ns, count in layout:
        blocks = results[cursor:cursor + count]
        cursor += count
        for n in ns:
            reference = np.concatenate([b[n][0] for b in blocks])
            for method in cfg.estimators:
                est = np.concatenate([b[n][1][method] for b in blocks])
                ok = np.isfinite(est)
                stats = summarize(est[ok] - reference[ok])
                N_true = cfg.occupancy if experiment != "metabolic" else value
                tv = _theory_variance(experiment, method, p, N_true, n, cfg.sigma)
                table.rows.append(ResultRow(
                    float(value), int(n), p.horizon(n), method, int(len(est)),
                    int((~ok).sum()), *stats,
                    theory_rmse=math.sqrt(tv) if tv == tv else math.nan,
                    theory_variance=tv))
    return table


def run_rmse_vs_n(cfg: ExperimentConfig) -> ResultTable:
    return run_experiment("rmse_vs_n", cfg)


def run_theory_vs_mc(cfg: ExperimentConfig) -> ResultTable:
    return run_experiment("theory_vs_mc", cfg)


def run_metabolic(cfg: ExperimentConfig) -> ResultTable:
    return run_experiment("metabolic", cfg)


def run_random_walk(cfg: ExperimentConfig) -> ResultTable:
    return run_experiment("random_walk", cfg)


# --- online tracking -----------------------------------------------------------

@dataclass
class OnlineTrace:
    """Per-sample online estimates; NaN where an estimator is still underdetermined."""

    i: np.ndarray
    time_s: np.ndarray
    y: np.ndarray
    N_hat_RLS: np.ndarray
    N_hat_MME2: np.ndarray

    COLUMNS = ("i", "time_s", "y_ppm", "N_hat_RLS", "N_hat_MME2")

    def to_csv(self, stream=None):
        out = io.StringIO() if stream is None else stream
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for row in zip(self.i, self.time_s, self.y, self.N_hat_RLS, self.N_hat_MME2):
            writer.writerow([str(int(row[0]))] + ["" if math.isnan(v) else repr(float(v))
                                                  for v in row[1:]])
        return out.getvalue() if stream is None else None


def run_online_trace(trace: TimeSeries, p: ZoneParams, sigma: float = None) -> OnlineTrace:
    """Feed a trace sample by sample to online RLS and MME(2)."""
    y = trace.above_background(p.C0).with_origin().y
    rls = OnlineRLS(p, y[0], sigma=sigma)
    mme = OnlineMME(p, 2, y0=y[0])
    n_rls = np.full(len(y), np.nan)
    n_mme = np.full(len(y), np.nan)
    for i in range(1, len(y)):
        rls.update(y[i])
        mme.update(y[i])
        try:
            n_rls[i] = rls.estimate().N_hat
        except EstimationError:
            pass
        try:
            n_mme[i] = mme.estimate().N_hat
        except EstimationError:
            pass
    i = np.arange(len(y))
    return OnlineTrace(i, i * p.Ts, y, n_rls, n_mme)
