"""Command line entry point: ``sbps run | scan | diag``.

Exit codes: 0 success, 1 invalid input (config, arguments, unreadable
files), 2 failure while sampling or analysing.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy import stats

from . import analysis, io, plots
from .core import RunSummary, SamplerError
from .experiments import RunConfig, build_target, config_from_dict, mean_inter_bounce_time, run_experiment
from .samplers import ConfigError
from .targets import GaussianTarget, LogisticRegressionTarget

OUT_ENV = "SBPS_OUTPUT_DIR"
DEFAULT_OUT = "sbps_out"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
SCAN_AXES = ("k", "n", "step_size")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_dir(cfg: RunConfig, flag) -> Path:
    d = Path(flag or cfg.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    d.mkdir(parents=True, exist_ok=True)
    return d


def load_config(path, sets) -> RunConfig:
    values = io.read_config(path, RunConfig) if path else {}
    values.update(io.parse_overrides(sets, RunConfig))
    cfg = config_from_dict(values)
    cfg.validate()
    return cfg


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)
        fh.write("\n")


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    out_dir = _out_dir(cfg, args.out)
    res = run_experiment(cfg)
    if res.is_continuous:
        data_path = out_dir / "trajectory.csv"
        io.write_trajectory(res.trajectory, data_path)
    else:
        data_path = out_dir / "samples.csv"
        io.write_samples(res.samples, res.sample_epochs, data_path)
    summary = dict(res.summary, config=cfg.as_dict())
    _write_json(summary, out_dir / "summary.json")
    with open(out_dir / "config.txt", "w") as fh:
        fh.write(io.format_config(cfg))
    print(f"wrote {data_path} and {out_dir / 'summary.json'}")
    print(f"epochs {summary['epochs']:.2f}  bounces {summary['bounces']}  "
          f"violation_rate {summary['violation_rate']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# scan
# ---------------------------------------------------------------------------


def laplace_nll_variance(target) -> float:
    """Variance of NLL/N under the Laplace approximation, ``d / (2 N^2)``."""
    return target.dim / (2.0 * target.n_data**2)


def scan_cell(cfg_dict: dict) -> dict:
    """One (value, seed) run reduced to scalar metrics; failures become an ``error`` entry."""
    cell = {"error": "", "violations": 0, "proposals": 0, "mean_inter_bounce": math.nan,
            "nll_mean": math.nan, "nll_var": math.nan}
    try:
        cfg = config_from_dict(cfg_dict)
        res = run_experiment(cfg)
        s = res.summary
        cell["violations"], cell["proposals"] = s.get("violations", 0), s.get("proposals", 0)
        if s.get("diverged"):
            cell["error"] = "diverged"
            return cell
        target = res.target
        positions = None
        if res.is_continuous:
            cell["mean_inter_bounce"] = mean_inter_bounce_time(res.trajectory)
            if hasattr(target, "nll_batch"):
                positions = analysis.discretize(analysis.burn_in(res.trajectory), 2000)
        elif hasattr(target, "nll_batch"):
            S = res.samples[int(0.1 * len(res.samples)):]
            positions = S[:: max(1, len(S) // 5000)]
        if positions is not None:
            vals = analysis.nll_per_point(target, positions)
            if not np.all(np.isfinite(vals)):
                cell["error"] = "non-finite NLL"
            else:
                cell["nll_mean"], cell["nll_var"] = float(vals.mean()), float(vals.var())
    except (SamplerError, ValueError, FloatingPointError, np.linalg.LinAlgError) as err:
        cell["error"] = f"{type(err).__name__}: {err}"
    return cell


def summarize_scan(values, seeds, cells, laplace_var) -> list[dict]:
    rows = []
    for i, val in enumerate(values):
        group = cells[i * len(seeds):(i + 1) * len(seeds)]
        ok = [c for c in group if not c["error"]]
        props = sum(c["proposals"] for c in ok)
        row = {
            "value": val,
            "n_ok": len(ok),
            "n_failed": len(group) - len(ok),
            "violation_rate": sum(c["violations"] for c in ok) / props if props else math.nan,
            "mean_inter_bounce": float(np.median([c["mean_inter_bounce"] for c in ok])) if ok else math.nan,
            "nll_mean": float(np.mean([c["nll_mean"] for c in ok])) if ok else math.nan,
            "nll_var": float(np.mean([c["nll_var"] for c in ok])) if ok else math.nan,
            "laplace_var": laplace_var,
            "errors": "; ".join(sorted({c["error"] for c in group if c["error"]})),
        }
        rows.append(row)
    return rows


def select_step_size(rows) -> float | None:
    """Largest step whose NLL/N variance does not exceed the Laplace value."""
    ok = [r["value"] for r in rows
          if r["n_ok"] and not r["n_failed"] and r["nll_var"] <= r["laplace_var"]]
    return max(ok) if ok else None


def run_scan(base: RunConfig, axis: str, values, seeds, workers: int = 1) -> list[dict]:
    if axis not in SCAN_AXES:
        raise ConfigError(f"axis must be one of {', '.join(SCAN_AXES)}")
    cast = int if axis == "n" else float
    values = [cast(v) for v in values]
    cfgs = []
    for v in values:
        for s in seeds:
            cfg = base.replace(**{axis: v, "seed": int(s)})
            cfg.validate()
            cfgs.append(cfg.as_dict())
    workers = max(1, min(int(workers), os.cpu_count() or 1, len(cfgs)))
    if workers == 1:
        cells = [scan_cell(c) for c in cfgs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(scan_cell, cfgs))
    target = build_target(base)
    lap = laplace_nll_variance(target) if isinstance(target, LogisticRegressionTarget) else math.nan
    return summarize_scan(values, list(seeds), cells, lap)


SCAN_COLUMNS = ["value", "n_ok", "n_failed", "violation_rate", "mean_inter_bounce",
                "nll_mean", "nll_var", "laplace_var", "errors"]


def write_scan_csv(rows, axis, path):
    with open(path, "w", newline="") as fh:
        fh.write(",".join([axis] + SCAN_COLUMNS[1:]) + "\n")
        for r in rows:
            cells = []
            for c in SCAN_COLUMNS:
                x = r[c]
                if isinstance(x, str):
                    cells.append('"' + x.replace('"', "'") + '"' if x else "")
                elif isinstance(x, float):
                    cells.append(io.FLOAT_FMT % x)
                else:
                    cells.append(str(x))
            fh.write(",".join(cells) + "\n")


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"not a comma-separated list of numbers: {text!r}") from None


def cmd_scan(args) -> int:
    base = load_config(args.config, args.set)
    out_dir = _out_dir(base, args.out)
    values = _float_list(args.values)
    seeds = [int(s) for s in _float_list(args.seeds)]
    if not values or not seeds:
        raise UsageError("need at least one value and one seed")
    rows = run_scan(base, args.axis, values, seeds, args.workers)
    write_scan_csv(rows, args.axis, out_dir / "scan.csv")
    report = {"axis": args.axis, "seeds": seeds, "rows": rows, "config": base.as_dict()}
    if args.axis == "step_size":
        report["selected_step_size"] = select_step_size(rows)
        print(f"selected step size: {report['selected_step_size']}")
    _write_json(report, out_dir / "scan.json")
    metrics = {"violation rate": [r["violation_rate"] for r in rows],
               "mean inter-bounce time": [r["mean_inter_bounce"] for r in rows],
               "NLL/N variance": [r["nll_var"] for r in rows]}
    plots.plot_scan([r["value"] for r in rows], metrics, args.axis, out_dir / "scan.svg")
    for r in rows:
        print(f"{args.axis}={r['value']:g}  ok={r['n_ok']}  failed={r['n_failed']}  "
              f"violation_rate={r['violation_rate']:.4g}  inter_bounce={r['mean_inter_bounce']:.4g}  "
              f"nll_var={r['nll_var']:.3g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# diag
# ---------------------------------------------------------------------------


def _summary_from_json(d: dict, n_data: int) -> RunSummary:
    names = {f.name for f in dataclasses.fields(RunSummary)}
    s = RunSummary(**{k: v for k, v in d.items() if k in names})
    s.n_data = n_data
    return s


def diagnose_samples(samples, epochs, target, *, max_lag=200, burn=0.1, w_hat=None) -> dict:
    S = np.asarray(samples)[int(burn * len(samples)):]
    rep = {"epochs": float(epochs[-1]), "n_samples": len(samples), "acf": {}, "ess": {}, "ks": {}}
    for j in range(S.shape[1]):
        try:
            rep["acf"][f"w_{j}"] = analysis.acf(S[:, j], min(max_lag, len(S) - 1)).tolist()
            rep["ess"][f"w_{j}"] = analysis.ess(S[:, j])
        except analysis.DegenerateSeries:
            rep["acf"][f"w_{j}"], rep["ess"][f"w_{j}"] = [], 0.0
        if hasattr(target, "marginal_cdf") and len(S) >= 100:
            rep["ks"][f"w_{j}"] = analysis.ks_distance(S[:, j], lambda x, j=j: target.marginal_cdf(x, j))
    if hasattr(target, "nll_batch"):
        ep, vals = analysis.nll_trace((samples, epochs), target,
                                      np.arange(1, int(math.floor(epochs[-1])) + 1))
        rep["nll_epochs"], rep["nll_trace"] = ep.tolist(), vals.tolist()
        if hasattr(target, "hessian"):
            rep["laplace_center"], rep["laplace_spread"] = analysis.laplace_band(target, w_hat)
    return rep


def cmd_diag(args) -> int:
    path = Path(args.file)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    summary_path = Path(args.summary) if args.summary else path.with_name("summary.json")
    saved = {}
    if args.config:
        cfg = load_config(args.config, args.set)
    elif summary_path.exists():
        with open(summary_path) as fh:
            saved = json.load(fh)
        cfg = config_from_dict(dict(saved["config"], **io.parse_overrides(args.set, RunConfig)))
        cfg.validate()
    else:
        raise ConfigError("need --config or a summary.json with a config echo")
    out_dir = Path(args.out) if args.out else path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    target = build_target(cfg)
    w_hat = None
    if isinstance(target, LogisticRegressionTarget):
        from .targets import laplace_reference

        w_hat, _ = laplace_reference(target)

    if io.file_kind(path) == "trajectory":
        traj = io.read_trajectory(path)
        summary = analysis.summary_from_trajectory(traj, target.n_data)
        if saved:
            summary.violations = int(saved.get("violations", 0))
            summary.proposals = int(saved.get("proposals", summary.proposals))
        rep = analysis.diagnose(traj, target, summary, max_lag=args.max_lag, n_points=args.points,
                                burn=args.burn, w_hat=w_hat).as_dict()
        post = analysis.burn_in(traj, args.burn) if args.burn > 0 else traj
        positions = analysis.discretize(post, args.points)
    else:
        samples, epochs = io.read_samples(path)
        rep = diagnose_samples(samples, epochs, target, max_lag=args.max_lag, burn=args.burn, w_hat=w_hat)
        positions = samples[int(args.burn * len(samples)):]

    if isinstance(target, GaussianTarget):
        qq = {}
        for j in range(target.dim):
            ppf = stats.norm(target.mean[j], math.sqrt(target.var[j])).ppf
            theo, emp = analysis.qq_data(positions[:, j], ppf)
            qq[f"w_{j}"] = (theo, emp)
        rep["qq"] = {k: {"exact": t.tolist(), "sample": e.tolist()} for k, (t, e) in qq.items()}
        plots.plot_qq(qq, out_dir / "qq.svg")
    _write_json(rep, out_dir / "diagnostics.json")
    plots.plot_acf(rep.get("acf", {}), out_dir / "acf.svg")
    plots.plot_path(positions, out_dir / "path.svg")
    if rep.get("nll_trace"):
        plots.plot_nll_trace(rep["nll_epochs"], rep["nll_trace"], out_dir / "nll_trace.svg",
                             rep.get("laplace_center"), rep.get("laplace_spread"))
    print(f"wrote {out_dir / 'diagnostics.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sbps", description="Stochastic bouncy particle samplers.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")

    r = sub.add_parser("run", help="run one sampler and write its trajectory and summary")
    common(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("scan", help="sweep one knob over values and seeds")
    common(s)
    s.add_argument("--axis", required=True, choices=SCAN_AXES)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--seeds", default="0", help="comma-separated seeds")
    s.add_argument("--workers", type=int, default=1, help="process cap (bounded by the CPU count)")
    s.set_defaults(func=cmd_scan)

    d = sub.add_parser("diag", help="diagnostics and plots for a stored run")
    d.add_argument("file", help="trajectory.csv or samples.csv")
    d.add_argument("--summary", help="summary.json with the run's config (default: next to file)")
    d.add_argument("--config", help="config file describing the target, instead of a summary")
    d.add_argument("--set", action="append", metavar="KEY=VALUE")
    d.add_argument("--out", help="output directory (default: the file's directory)")
    d.add_argument("--max-lag", type=int, default=200)
    d.add_argument("--points", type=int, default=10_000, help="discretization size")
    d.add_argument("--burn", type=float, default=0.1, help="burn-in fraction")
    d.set_defaults(func=cmd_diag)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError, io.FileFormatError, FileNotFoundError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (SamplerError, ValueError, FloatingPointError, np.linalg.LinAlgError, OSError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
