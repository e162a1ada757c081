"""Command-line front end: ``sourcestrength {simulate,estimate,theory,montecarlo}``.

Configuration is a JSON document; see README.md for the schema. Exit codes:
0 success, 2 configuration or schema error, 3 I/O error, 4 estimator domain error.
"""
import argparse
import csv
import io
import json
import math
import sys
import warnings

import numpy as np

from . import montecarlo, theory
from .errors import EstimationError, ParameterError, SourceStrengthError
from .estimators import fit
from .model import Constant, Heterogeneous, RandomWalk, TimeSeries, ZoneParams, simulate
from .units import cfm_to_m3s, cuft_to_m3, slpm_to_m3s

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DOMAIN = 0, 2, 3, 4

SIMULATE_COLUMNS = ("time_s", "concentration_ppm", "occupancy_true")


class ConfigError(Exception):
    """Malformed configuration or input data (exit code 2)."""


# --- configuration -------------------------------------------------------------

_ZONE_QUANTITIES = {
    "volume": {"volume_m3": float, "volume_cuft": cuft_to_m3},
    "flow": {"flow_m3s": float, "flow_cfm": cfm_to_m3s},
    "generation": {"c_m3s": float, "c_slpm": slpm_to_m3s},
}
_FIELD = {"volume": "M", "flow": "Q", "generation": "c"}
_ZONE_KEYS = {"preset", "c0_ppm", "ts_s"}.union(*(v.keys() for v in _ZONE_QUANTITIES.values()))
_SECTIONS = {"zone", "noise", "profile", "experiment"}
_PROFILE_KEYS = {
    "constant": {"N"},
    "random_walk": {"N0", "gamma", "floor"},
    "heterogeneous": {"met_rates", "body_area", "respiration_quotient"},
}
_EXPERIMENT_KEYS = {"scenario", "estimators", "trials", "seed", "sweep", "sigma", "n_grid",
                    "occupancy", "met_range", "workers", "block_size"}


def load_config(path):
    """Parse and structurally validate a JSON config file."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    _reject_unknown(doc, _SECTIONS, "")
    for name, section in doc.items():
        if not isinstance(section, dict):
            raise ConfigError(f"section '{name}' must be an object")
    return doc


def _reject_unknown(section, allowed, where):
    extra = sorted(set(section) - set(allowed))
    if extra:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown key '{prefix}{extra[0]}'")


def _number(section, key, where):
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"'{where}.{key}' must be a finite number")
    return float(value)


def _section(doc, name, required=True):
    if name not in doc:
        if required:
            raise ConfigError(f"missing section '{name}'")
        return None
    return doc[name]


def zone_from_config(doc) -> ZoneParams:
    zone = _section(doc, "zone")
    _reject_unknown(zone, _ZONE_KEYS, "zone")
    fields = {}
    if "preset" in zone:
        try:
            fields = vars(montecarlo.resolve_scenario(zone["preset"])).copy()
        except ParameterError as exc:
            raise ConfigError(f"zone.preset: {exc}") from None
    for quantity, variants in _ZONE_QUANTITIES.items():
        given = [k for k in variants if k in zone]
        if len(given) > 1:
            raise ConfigError(f"zone: give exactly one of {sorted(variants)} for {quantity}")
        if given:
            key = given[0]
            try:
                value = variants[key](_number(zone, key, "zone"))
            except ParameterError as exc:
                raise ConfigError(f"zone.{key}: {exc}") from None
            fields[_FIELD[quantity]] = value
        elif _FIELD[quantity] not in fields:
            raise ConfigError(f"zone: missing {quantity} (one of {sorted(variants)})")
    if "c0_ppm" in zone:
        fields["C0"] = _number(zone, "c0_ppm", "zone")
    if "ts_s" in zone:
        fields["Ts"] = _number(zone, "ts_s", "zone")
    try:
        return ZoneParams(**fields)
    except ParameterError as exc:
        raise ConfigError(f"zone: {exc}") from None


def sigma_from_config(doc, default=None):
    noise = _section(doc, "noise", required=default is None)
    if noise is None:
        return default
    _reject_unknown(noise, {"sigma_ppm"}, "noise")
    if "sigma_ppm" not in noise:
        raise ConfigError("missing key 'noise.sigma_ppm'")
    sigma = _number(noise, "sigma_ppm", "noise")
    if sigma < 0:
        raise ConfigError("'noise.sigma_ppm' must be >= 0")
    return sigma


def profile_from_config(doc):
    profile = _section(doc, "profile", required=False)
    if profile is None:
        return Constant(1.0)
    kind = profile.get("type", "constant")
    if kind not in _PROFILE_KEYS:
        raise ConfigError(f"profile.type must be one of {sorted(_PROFILE_KEYS)}")
    _reject_unknown(profile, _PROFILE_KEYS[kind] | {"type"}, "profile")
    try:
        if kind == "constant":
            return Constant(_number(profile, "N", "profile") if "N" in profile else 1.0)
        if kind == "random_walk":
            return RandomWalk(_number(profile, "N0", "profile"),
                              _number(profile, "gamma", "profile"),
                              bool(profile.get("floor", True)))
        return Heterogeneous(tuple(profile["met_rates"]),
                             profile.get("body_area", montecarlo.BODY_AREA),
                             profile.get("respiration_quotient",
                                         montecarlo.RESPIRATION_QUOTIENT))
    except KeyError as exc:
        raise ConfigError(f"missing key 'profile.{exc.args[0]}'") from None
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"profile: {exc}") from None


def experiment_from_config(doc, experiment, trials=None, seed=None, workers=None):
    section = dict(_section(doc, "experiment", required=False) or {})
    _reject_unknown(section, _EXPERIMENT_KEYS, "experiment")
    kwargs = {}
    if "zone" in doc:
        kwargs["scenario"] = zone_from_config(doc)
    if "noise" in doc:
        kwargs["sigma"] = sigma_from_config(doc)
    for key, value in section.items():
        if key == "sweep":
            if not isinstance(value, dict) or set(value) != {"kind", "values"}:
                raise ConfigError("'experiment.sweep' must have exactly 'kind' and 'values'")
            try:
                value = montecarlo.Sweep(value["kind"], tuple(value["values"]))
            except (ParameterError, TypeError) as exc:
                raise ConfigError(f"experiment.sweep: {exc}") from None
        elif key in ("estimators", "n_grid", "met_range"):
            value = tuple(value)
        kwargs[key] = value
    for key, value in (("trials", trials), ("seed", seed), ("workers", workers)):
        if value is not None:
            kwargs[key] = value
    try:
        return montecarlo.ExperimentConfig.for_experiment(experiment, **kwargs)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"experiment: {exc}") from None


# --- data files ----------------------------------------------------------------

def read_series(path, p: ZoneParams) -> TimeSeries:
    """Read a simulate-schema CSV as a raw series (``occupancy_true`` optional)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise ConfigError(f"{path}: empty file")
    header = rows[0]
    if header[:2] != list(SIMULATE_COLUMNS[:2]) or header[2:] not in ([], ["occupancy_true"]):
        raise ConfigError(f"{path}: header must be {','.join(SIMULATE_COLUMNS)} "
                          "(occupancy_true optional)")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] != len(header):
        raise ConfigError(f"{path}: every row needs {len(header)} values")
    t, y = data[:, 0], data[:, 1]
    expected = t[0] + p.Ts * np.arange(len(t))
    if not (t[0] in (0.0, p.Ts) and np.allclose(t, expected, rtol=0, atol=1e-6 * p.Ts)):
        raise ConfigError(f"{path}: times must be uniform with spacing ts_s={p.Ts} "
                          "starting at 0 or ts_s")
    return TimeSeries(p.Ts, y, raw=True, origin=t[0] == 0.0)


def _fmt(value):
    return repr(float(value))


def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w", newline="", encoding="utf-8")


def _emit(text, path):
    out = _open_out(path)
    try:
        out.write(text)
    finally:
        if out is not sys.stdout:
            out.close()


# --- commands ------------------------------------------------------------------

def cmd_simulate(args):
    doc = load_config(args.config)
    p = zone_from_config(doc)
    sigma = sigma_from_config(doc)
    profile = profile_from_config(doc)
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    trace = simulate(p, profile, sigma, args.n, seed=args.seed)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SIMULATE_COLUMNS)
    for t, y, occ in zip(trace.times, trace.y + p.C0, trace.truth):
        writer.writerow([_fmt(t), _fmt(y), _fmt(occ)])
    _emit(out.getvalue(), args.out)


def cmd_estimate(args):
    doc = load_config(args.config)
    p = zone_from_config(doc)
    series = read_series(args.data, p)
    if args.online:
        sigma = sigma_from_config(doc, default=0.0) or None
        if len(series) < 2:
            raise EstimationError("online estimation needs at least two samples")
        _emit(montecarlo.run_online_trace(series, p, sigma).to_csv(), args.out)
        return
    est = fit(args.method, series, p)
    _emit(f"N_hat,Q_hat_m3s,converged\n{_fmt(est.N_hat)},{_fmt(est.Q_hat)},"
          f"{str(est.converged).lower()}\n", args.out)


def _parse_floats(text, name):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{name} must be a comma-separated list of numbers") from None
    if not values or any(not (math.isfinite(v) and v > 0) for v in values):
        raise ConfigError(f"{name} values must be positive")
    return values


def cmd_theory(args):
    doc = load_config(args.config)
    p = zone_from_config(doc)
    sigma = sigma_from_config(doc, default=1.0) or 1.0
    profile = profile_from_config(doc)
    N = getattr(profile, "N", None) or getattr(profile, "N0", 1.0)
    method = args.method.lower()
    if args.K is not None and args.n_values is not None:
        raise ConfigError("give either --K or --n, not both")
    points = []
    if args.n_values is not None:
        for n in _parse_floats(args.n_values, "--n"):
            if n != int(n) or n < 2:
                raise ConfigError("--n values must be integers >= 2")
            points.append((p, int(n), None))
    else:
        n = args.samples
        for K in _parse_floats(args.K or "0.05,0.1,0.2,0.4,0.8,1.6,2.5", "--K"):
            points.append((p.with_(Q=K * p.M / (n * p.Ts)), n, K))
    order = args.order
    rows = []
    for q, n, requested_K in points:
        try:
            report = theory.variance_report(method, q, N, q.Q, n, sigma, m=args.m, order=order)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
        order = report.order
        # echo the requested K rather than its round trip through Q
        rows.append((requested_K if requested_K is not None else report.K, report.leading_factor, report.expansion_factor))
    out = io.StringIO()
    out.write(f"K,factor_exact,factor_expansion_{order}\n")
    for row in rows:
        out.write(",".join(_fmt(v) for v in row) + "\n")
    _emit(out.getvalue(), args.out)


def cmd_montecarlo(args):
    if args.experiment not in montecarlo.EXPERIMENTS:
        raise ConfigError(f"unknown experiment '{args.experiment}'; expected one of "
                          f"{', '.join(montecarlo.EXPERIMENTS)}")
    doc = load_config(args.config) if args.config else {}
    cfg = experiment_from_config(doc, args.experiment, args.trials, args.seed, args.workers)
    table = montecarlo.run_experiment(args.experiment, cfg)
    _emit(table.to_csv(), args.out)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sourcestrength",
        description="Estimate occupancy and ventilation from transient CO2 data.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a noisy simulated trace as CSV")
    sim.add_argument("--config", required=True)
    sim.add_argument("--n", type=int, required=True, help="number of sampling intervals")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", default="-")
    sim.set_defaults(func=cmd_simulate)

    est = sub.add_parser("estimate", help="estimate N and Q from a CSV trace")
    est.add_argument("--data", required=True)
    est.add_argument("--config", required=True)
    est.add_argument("--method", default="mme2", choices=["mle", "rls", "mme2", "mme3"])
    est.add_argument("--online", action="store_true",
                     help="per-sample online RLS and MME(2) estimates")
    est.add_argument("--seed", type=int, default=None, help="unused; accepted for uniformity")
    est.add_argument("--out", default="-")
    est.set_defaults(func=cmd_estimate)

    th = sub.add_parser("theory", help="normalized variance factors, exact and series")
    th.add_argument("--config", required=True)
    th.add_argument("--method", default="crlb", choices=["crlb", "rls", "mme"])
    th.add_argument("--m", type=int, default=2, help="moment order for --method mme")
    th.add_argument("--order", type=int, default=3, choices=[0, 1, 2, 3])
    th.add_argument("--K", default=None, help="comma-separated K values (Q varied, n fixed)")
    th.add_argument("--n", dest="n_values", default=None,
                    help="comma-separated sample counts (config Q)")
    th.add_argument("--samples", type=int, default=1000, help="fixed n for a --K sweep")
    th.add_argument("--out", default="-")
    th.set_defaults(func=cmd_theory)

    mc = sub.add_parser("montecarlo", help="run a Monte-Carlo study")
    mc.add_argument("--experiment", required=True,
                    help=f"one of {', '.join(montecarlo.EXPERIMENTS)}")
    mc.add_argument("--config", default=None)
    mc.add_argument("--trials", type=int, default=None)
    mc.add_argument("--seed", type=int, default=None)
    mc.add_argument("--workers", type=int, default=None)
    mc.add_argument("--out", default="-")
    mc.set_defaults(func=cmd_montecarlo)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SourceStrengthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
