"""Command-line entry point.

Subcommands: simulate, fit, summarize, export, ingest, check. Options
can also come from a JSON config file (``--config``); explicit flags
win over file values. The environment variable ``COUNT_GLASSO_SEED``
is the seed fallback when neither a flag nor the config provides one.

Exit codes: 0 success, 2 usage/configuration, 3 data, 4 numeric.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import driver, ingest, posterior, synthetic
from .errors import ConfigError, DataError, NumericError, ValidationError
from .geweke import geweke_check
from .model import Hyperparameters

SEED_ENV_VAR = "COUNT_GLASSO_SEED"


class Options:
    """Flag values with config-file fallback (flags win)."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = {}
        cfg_path = getattr(args, "config", None)
        if cfg_path:
            try:
                with open(cfg_path) as fh:
                    self.config = json.load(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config file {cfg_path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {cfg_path} is not valid JSON: {exc}") from exc
            if not isinstance(self.config, dict):
                raise ConfigError(f"config file {cfg_path} must hold a JSON object")

    def get(self, name: str, default=None):
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        if name in self.config:
            return self.config[name]
        return default

    def seed(self) -> int:
        value = self.get("seed")
        if value is None:
            value = os.environ.get(SEED_ENV_VAR)
        if value is None:
            return 0
        try:
            return int(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"seed must be an integer, got {value!r}") from exc


def _add_config_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, metavar="FILE",
                   help="JSON config file; explicit flags override its values")


def _add_hyper_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--a-lambda", default=None,
                   help="Gamma shape of the shrinkage prior; 'auto' uses the "
                        "number of dimensions A (default: auto)")
    p.add_argument("--b-lambda", type=float, default=None,
                   help="Gamma rate of the shrinkage prior (default: 0.01)")
    p.add_argument("--sigma2-mu", type=float, default=None,
                   help="prior variance of the averaged risks (default: 0.05)")
    p.add_argument("--nu", type=float, default=None,
                   help="degrees of freedom of the t proposal (default: 5)")
    p.add_argument("--newton-tol", type=float, default=None,
                   help="gradient sup-norm tolerance for mode finding (default: 1e-8)")
    p.add_argument("--newton-max-iter", type=int, default=None,
                   help="maximum Newton iterations per block (default: 50)")
    p.add_argument("--omega-eps", type=float, default=None,
                   help="lower clamp on |omega_ij| in the tau update (default: 1e-8)")


def _resolve_hyper(opts: Options, A: int) -> Hyperparameters:
    a_lambda = opts.get("a_lambda", "auto")
    if isinstance(a_lambda, str):
        if a_lambda.lower() == "auto":
            a_lambda = float(A)
        else:
            try:
                a_lambda = float(a_lambda)
            except ValueError as exc:
                raise ConfigError(f"--a-lambda must be a number or 'auto', got {a_lambda!r}") from exc
    return Hyperparameters(
        a_lambda=float(a_lambda),
        b_lambda=float(opts.get("b_lambda", 0.01)),
        sigma2_mu=float(opts.get("sigma2_mu", 0.05)),
        nu=float(opts.get("nu", 5.0)),
        newton_tol=float(opts.get("newton_tol", 1e-8)),
        newton_max_iter=int(opts.get("newton_max_iter", 50)),
        omega_eps=float(opts.get("omega_eps", 1e-8)),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="count-glasso",
        description="Bayesian sparse covariance structure analysis for correlated count data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    _add_config_flag(p)
    p.add_argument("--preset", choices=sorted(synthetic.PRESETS),
                   help="named (A, T) size preset")
    p.add_argument("--A", type=int, default=None, help="number of dimensions/areas")
    p.add_argument("--T", type=int, default=None, help="number of time steps")
    p.add_argument("--mu-true", type=float, default=None,
                   help="true averaged potential risk (default: 0.2)")
    p.add_argument("--C1", type=float, default=None,
                   help="true precision diagonal (default: 1.0)")
    p.add_argument("--C2", type=float, default=None,
                   help="true precision cross value pairing i with i-A/2 (default: 0.5)")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default: 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the MCMC sampler on a count matrix")
    _add_config_flag(p)
    p.add_argument("--counts", required=True, help="CSV count matrix (T rows, A columns)")
    p.add_argument("--iterations", type=int, default=None, help="total sweeps (default: 15000)")
    p.add_argument("--burn-in", type=int, default=None, help="discarded sweeps (default: 5000)")
    p.add_argument("--thin", type=int, default=None, help="keep every k-th sweep (default: 10)")
    p.add_argument("--chains", type=int, default=None, help="number of chains (default: 1)")
    p.add_argument("--seed", type=int, default=None, help="base RNG seed (default: 0)")
    p.add_argument("--no-save-z", action="store_true", default=None,
                   help="omit the (large) dispersity samples from the trace")
    _add_hyper_flags(p)
    p.add_argument("--out", required=True, help="trace output directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="summarize a persisted trace")
    _add_config_flag(p)
    p.add_argument("--trace", required=True, help="trace directory from fit")
    p.add_argument("--level", type=float, default=None,
                   help="credible level in (0, 1) (default: 0.95)")
    p.add_argument("--interval", choices=["eq", "hpd"], default=None,
                   help="equal-tailed or highest-density intervals (default: eq)")
    p.add_argument("--truth", default=None,
                   help="simulate output directory; adds a coverage report")
    p.add_argument("--out", default=None,
                   help="summary CSV path (default: summary.csv in the trace dir)")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("export", help="export thresholded partial-correlation edges")
    _add_config_flag(p)
    p.add_argument("--trace", required=True, help="trace directory from fit")
    p.add_argument("--top-q", type=float, default=None,
                   help="retained fraction of edges by |weight| (default: 0.02)")
    p.add_argument("--format", choices=["csv", "geojson", "both"], default=None,
                   help="output format (default: csv)")
    p.add_argument("--areas", default=None,
                   help="areas.json from ingest (required for geojson)")
    p.add_argument("--out", default=None,
                   help="output path without extension (default: edges in the trace dir)")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("ingest", help="aggregate raw events into weekly area counts")
    _add_config_flag(p)
    p.add_argument("--events", required=True, help="CSV file of event records")
    p.add_argument("--col-time", default=None, help="timestamp column name (default: timestamp)")
    p.add_argument("--col-x", default=None, help="easting/longitude column name (default: x)")
    p.add_argument("--col-y", default=None, help="northing/latitude column name (default: y)")
    p.add_argument("--col-category", default=None, help="optional category column name")
    p.add_argument("--year", type=int, required=True, help="calendar year to keep")
    p.add_argument("--nx", type=int, default=None, help="grid cells along x (default: 20)")
    p.add_argument("--ny", type=int, default=None, help="grid cells along y (default: 20)")
    p.add_argument("--areas", type=int, default=None, help="number of areas to retain (default: 60)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("check", help="run the joint-distribution sampler check")
    _add_config_flag(p)
    p.add_argument("--A", type=int, default=None, help="dimensions (default: 2)")
    p.add_argument("--T", type=int, default=None, help="time steps (default: 3)")
    p.add_argument("--draws", type=int, default=None, help="iterations per simulator (default: 100000)")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default: 0)")
    p.add_argument("--lambda-shape-offset", type=float, default=None,
                   help="deliberately corrupt the shrinkage-rate conditional "
                        "(harness self-test; default: 0)")
    _add_hyper_flags(p)
    p.set_defaults(func=cmd_check)

    return parser


def cmd_simulate(opts: Options) -> int:
    preset = opts.get("preset")
    if preset:
        A, T = synthetic.PRESETS[preset]
    else:
        A, T = opts.get("A"), opts.get("T")
        if A is None or T is None:
            raise ConfigError("simulate needs either --preset or both --A and --T")
    cfg = synthetic.SynthConfig(
        A=int(A),
        T=int(T),
        mu_true=float(opts.get("mu_true", 0.2)),
        C1=float(opts.get("C1", 1.0)),
        C2=float(opts.get("C2", 0.5)),
        seed=opts.seed(),
    )
    outdir = Path(opts.get("out"))
    synthetic.write_dataset(cfg, outdir)
    print(f"wrote y.csv ({cfg.T} x {cfg.A}), z_true.csv, omega_true.csv, meta.json to {outdir}")
    return 0


def cmd_fit(opts: Options) -> int:
    y = driver.load_counts(opts.get("counts"))
    hyper = _resolve_hyper(opts, y.A)
    cfg = driver.RunConfig(
        iterations=int(opts.get("iterations", 15000)),
        burn_in=int(opts.get("burn_in", 5000)),
        thin=int(opts.get("thin", 10)),
        chains=int(opts.get("chains", 1)),
        seed=opts.seed(),
        hyper=hyper,
        save_z=not bool(opts.get("no_save_z", False)),
    )
    traces = driver.fit(y, cfg)
    outdir = Path(opts.get("out"))
    driver.save_traces(traces, outdir, save_z=cfg.save_z)
    for k, trace in enumerate(traces):
        rates = trace.acceptance_rates()
        print(f"chain {k}: {len(trace)} retained samples, "
              f"acceptance mu={rates[0]:.3f}, z mean={np.nanmean(rates[1:]):.3f}")
    print(f"trace written to {outdir}")
    return 0


def cmd_summarize(opts: Options) -> int:
    level = float(opts.get("level", 0.95))
    interval = opts.get("interval", "eq")
    trace_dir = Path(opts.get("trace"))
    dirs = driver.chain_dirs(trace_dir)
    truth = opts.get("truth")
    mu_true = None
    if truth:
        meta_path = Path(truth) / "meta.json"
        if not meta_path.exists():
            raise DataError(f"no meta.json under {truth}")
        with open(meta_path) as fh:
            mu_true = float(json.load(fh)["config"]["mu_true"])

    for k, cdir in enumerate(dirs):
        arrays = driver.load_trace_arrays(cdir)
        summary = posterior.summarize_arrays(
            mu=arrays.mu,
            z=arrays.z,
            omega_ut=arrays.omega_ut,
            lam=arrays.lam,
            map_mu=arrays.mu[arrays.map_index()],
            map_z=None if arrays.z is None else arrays.z[arrays.map_index()],
            map_omega_ut=arrays.omega_ut[arrays.map_index()],
            map_lam=arrays.lam[arrays.map_index()],
            level=level,
            interval=interval,
            T=arrays.T,
            A=arrays.A,
            acceptance=arrays.acceptance,
        )
        out = opts.get("out")
        if out is None:
            out_path = cdir / "summary.csv"
        elif len(dirs) == 1:
            out_path = Path(out)
        else:
            out_path = Path(out).with_name(f"{Path(out).stem}_chain_{k}{Path(out).suffix}")
        summary.to_csv(out_path)
        print(f"chain {k}: wrote {out_path} ({len(summary.rows)} rows)")
        if arrays.z is None:
            print(f"chain {k}: trace has no z.csv; dispersity rows omitted")
        if mu_true is not None:
            mu_rows = summary.select("mu")
            inside = sum(1 for r in mu_rows if r.lo <= mu_true <= r.hi)
            coverage = inside / len(mu_rows)
            cov_path = out_path.with_name("coverage.json")
            with open(cov_path, "w") as fh:
                json.dump({"mu_true": mu_true, "inside": inside,
                           "total": len(mu_rows), "coverage": coverage}, fh, indent=2)
                fh.write("\n")
            print(f"chain {k}: mu coverage {inside}/{len(mu_rows)} = {coverage:.2f} "
                  f"at level {level}")
    return 0


def cmd_export(opts: Options) -> int:
    trace_dir = Path(opts.get("trace"))
    top_q = float(opts.get("top_q", 0.02))
    fmt = opts.get("format", "csv")
    areas_path = opts.get("areas")
    if fmt in ("geojson", "both") and not areas_path:
        raise ConfigError("--areas is required when exporting GeoJSON")

    dirs = driver.chain_dirs(trace_dir)
    arrays = [driver.load_trace_arrays(d) for d in dirs]
    # MAP state across all chains' retained samples
    best_chain = max(range(len(arrays)), key=lambda k: arrays[k].logpost.max())
    a = arrays[best_chain]
    omega = a.omega_matrix(a.map_index())
    p = posterior.partial_correlation(omega)
    edges = posterior.threshold_top_q(p, top_q)

    out = opts.get("out")
    stem = Path(out) if out else trace_dir / "edges"
    written = []
    if fmt in ("csv", "both"):
        csv_path = stem.with_suffix(".csv")
        with open(csv_path, "w") as fh:
            fh.write("i,j,weight\n")
            for i, j, w in edges.edges:
                fh.write(f"{i},{j},{w!r}\n")
        written.append(csv_path)
    if fmt in ("geojson", "both"):
        grid = ingest.grid_from_json(areas_path)
        if grid.A != a.A:
            raise ConfigError(
                f"areas file holds {grid.A} areas but the trace has A={a.A}"
            )
        geo_path = stem.with_suffix(".geojson")
        ingest.export_geojson(edges, grid, geo_path)
        written.append(geo_path)
    print(f"{len(edges)} edges (top {top_q:g} by |weight|) -> "
          + ", ".join(str(w) for w in written))
    return 0


def cmd_ingest(opts: Options) -> int:
    cmap = ingest.ColumnMap(
        timestamp=opts.get("col_time", "timestamp"),
        x=opts.get("col_x", "x"),
        y=opts.get("col_y", "y"),
        category=opts.get("col_category"),
    )
    year = int(opts.get("year"))
    parsed = ingest.parse_events(opts.get("events"), cmap)
    in_year = [e for e in parsed.records if e.timestamp.year == year]
    if not in_year:
        raise DataError(f"no valid events in year {year}")
    grid = ingest.build_grid(
        in_year,
        nx=int(opts.get("nx", 20)),
        ny=int(opts.get("ny", 20)),
        A=int(opts.get("areas", 60)),
    )
    counts, tallies = ingest.aggregate_weekly(in_year, grid, year)
    outdir = Path(opts.get("out"))
    outdir.mkdir(parents=True, exist_ok=True)
    np.savetxt(outdir / "counts.csv", counts.values, fmt="%d", delimiter=",")
    ingest.grid_to_json(grid, tallies, parsed.skipped, outdir / "areas.json")
    out_of_year = len(parsed.records) - len(in_year)
    print(f"rows skipped: {parsed.skipped}; events parsed: {len(parsed.records)}; "
          f"out of year {year}: {out_of_year}; outside retained areas: "
          f"{tallies.outside_areas}; counted: {tallies.counted}")
    if tallies.counted != len(in_year) - tallies.outside_areas:
        raise DataError("reconciliation failed: counted != in-year - outside")
    print(f"wrote counts.csv ({counts.T} x {counts.A}) and areas.json to {outdir}")
    return 0


def cmd_check(opts: Options) -> int:
    A = int(opts.get("A", 2))
    # The check simulates the prior predictive, so the shrinkage prior has
    # to be proper and concentrated; default Gamma(4, 4) keeps lambda near 1.
    a_lambda = opts.get("a_lambda", 4.0)
    if isinstance(a_lambda, str):
        a_lambda = float(A) if a_lambda.lower() == "auto" else float(a_lambda)
    hyper = Hyperparameters(
        a_lambda=float(a_lambda),
        b_lambda=float(opts.get("b_lambda", 4.0)),
        sigma2_mu=float(opts.get("sigma2_mu", 0.05)),
        nu=float(opts.get("nu", 5.0)),
        newton_tol=float(opts.get("newton_tol", 1e-8)),
        newton_max_iter=int(opts.get("newton_max_iter", 50)),
        omega_eps=float(opts.get("omega_eps", 1e-8)),
    )
    cfg = driver.RunConfig(iterations=2, burn_in=0, thin=1, seed=opts.seed(), hyper=hyper)
    report = geweke_check(
        cfg,
        A=A,
        T=int(opts.get("T", 3)),
        draws=int(opts.get("draws", 100000)),
        lambda_shape_offset=float(opts.get("lambda_shape_offset", 0.0)),
    )
    print(report)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = Options(args)
        return args.func(opts)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
