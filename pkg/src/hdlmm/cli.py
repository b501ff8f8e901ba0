"""Command-line interface.

Every subcommand reads an optional JSON config (``--config``); flags given on
the command line override it. Results go to stdout or ``--out``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .data import DataError, DatasetSpec, read_dataset
from .errors import NumericalError
from .ew import EwConfig
from .pipeline import Analysis
from .sim import SCHEMA as SIM_SCHEMA, SimConfig, format_table, table_grid, run_study

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2

SCHEMAS = {
    "ftest": "hdlmm.ftest/1",
    "ci": "hdlmm.ci/1",
    "eb": "hdlmm.eb/1",
    "project": "hdlmm.project/1",
    "simulate": SIM_SCHEMA,
}

# (sigma_nu2, sigma_gamma2) of the four simulation tables
TABLES = {"table1": (0.0, 0.0), "table2": (0.0, 1.0), "table3": (1.0, 0.0), "table4": (1.0, 1.0)}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed for every random draw")
    p.add_argument("--out", type=Path, help="output file (directory for 'project'); stdout if omitted")
    p.add_argument("--alpha", type=float, help="EW temperature (default 4 ||Y||^2 / n)")
    p.add_argument("--u", type=int, help="EW model size (default: exponential screening)")
    p.add_argument("--chains", type=int, help="number of MH chains")
    p.add_argument("--chain-len", type=int, dest="chain_len", help="MH chain length")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hdlmm", description="Inference for high-dimensional linear mixed models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ftest", help="test sigma_nu^2 = 0 with the F_EW statistic")
    _add_common(p)
    p.add_argument("--delta", type=float, help="test level (default 0.05)")

    p = sub.add_parser("ci", help="confidence interval for sigma_nu^2")
    _add_common(p)
    p.add_argument("--level", type=float, help="confidence level (default 0.95)")

    p = sub.add_parser("eb", help="empirical Bayes prediction of eta, ranked by group")
    _add_common(p)

    p = sub.add_parser("project", help="write the A/B/C projections and whitening spectra as CSV")
    _add_common(p)

    p = sub.add_parser("simulate", help="run the simulation study over a grid of settings")
    _add_common(p)
    p.add_argument("--delta", type=float)
    p.add_argument("--level", type=float)
    p.add_argument("--grid", choices=sorted(TABLES), help="one of the four table grids")
    p.add_argument("--trials", type=int, help="trials per setting")
    p.add_argument("--jobs", type=int, default=1, help="worker processes per setting")
    p.add_argument("--format", choices=("json", "markdown", "csv"), default="json")
    p.add_argument("--records", action="store_true", help="include per-trial records in JSON output")
    return parser


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return cfg


def _ew_config(cfg: dict, args) -> EwConfig:
    ew = dict(cfg.get("ew", {}))
    for flag, key in (("alpha", "alpha"), ("u", "u"), ("chains", "n_chains"), ("chain_len", "chain_len")):
        val = getattr(args, flag, None)
        if val is not None:
            ew[key] = val
    if "chain_len" in ew and "burn_in" not in ew:
        ew["burn_in"] = min(EwConfig.burn_in, int(ew["chain_len"]) // 5)
    try:
        return EwConfig(**ew)
    except TypeError as exc:
        raise UsageError(f"bad 'ew' config: {exc}") from exc


def _pick(args, cfg: dict, name: str, default):
    val = getattr(args, name, None)
    return val if val is not None else cfg.get(name, default)


def _analysis(cfg: dict, args) -> tuple:
    if "dataset" not in cfg:
        raise UsageError("config needs a 'dataset' section")
    base = args.config.parent if args.config is not None else None
    spec = DatasetSpec.from_dict(cfg["dataset"], base_dir=base)
    ds = read_dataset(spec)
    seed = int(_pick(args, cfg, "seed", 0))
    an = Analysis(
        ds.data,
        ew=_ew_config(cfg, args),
        seed=seed,
        c_orthogonal_to_a=bool(cfg.get("c_orthogonal_to_a", True)),
    )
    return ds, an


def _dump_json(obj, out) -> None:
    text = json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
    _emit(text, out)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def cmd_ftest(cfg, args) -> int:
    _, an = _analysis(cfg, args)
    delta = float(_pick(args, cfg, "delta", 0.05))
    res = an.test(delta)
    _dump_json({"schema": SCHEMAS["ftest"], **an.summary(), "result": res.to_dict()}, args.out)
    return EXIT_OK


def cmd_ci(cfg, args) -> int:
    _, an = _analysis(cfg, args)
    level = float(_pick(args, cfg, "level", 0.95))
    est = an.variances()
    ci = an.ci(level)
    _dump_json(
        {"schema": SCHEMAS["ci"], **an.summary(), "result": ci.to_dict(), "estimates": est.to_dict()},
        args.out,
    )
    return EXIT_OK


def eb_table(ds, eta: np.ndarray) -> str:
    """Rows sorted by descending group-average eta_hat, then by row order."""
    codes = np.asarray(ds.z_index)
    sums = np.bincount(codes, weights=eta)
    avg = sums / np.bincount(codes)
    rank = np.argsort(-avg, kind="stable")
    pos = np.empty_like(rank)
    pos[rank] = np.arange(rank.size)
    order = np.lexsort((np.arange(eta.size), pos[codes]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row_id", "group", "eta_hat", "group_mean_eta_hat"])
    for i in order:
        w.writerow([ds.row_ids[i], ds.z_levels[codes[i]], repr(float(eta[i])), repr(float(avg[codes[i]]))])
    return buf.getvalue()


def cmd_eb(cfg, args) -> int:
    ds, an = _analysis(cfg, args)
    est = an.eb()
    _emit(eb_table(ds, est.eta_hat), args.out)
    return EXIT_OK


def _matrix_csv(M: np.ndarray, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in M:
            w.writerow([repr(float(x)) for x in row])


def cmd_project(cfg, args) -> int:
    ds, an = _analysis(cfg, args)
    if args.out is None:
        raise UsageError("project needs --out DIR for the matrix files")
    wh = an.whitening
    pset = wh.projections
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, M in (("A", pset.A), ("B", pset.B), ("C", pset.C)):
        files[name] = f"{name}.csv"
        _matrix_csv(M, out / files[name])
    with open(out / "spectra.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "index", "eigenvalue"])
        for k, d in enumerate(wh.d):
            w.writerow(["D", k, repr(float(d))])
        for k, lam in enumerate(wh.lam):
            w.writerow(["Lambda", k, repr(float(lam))])
    files["spectra"] = "spectra.csv"
    summary = {
        "schema": SCHEMAS["project"],
        "n": ds.data.n,
        "v": ds.data.v,
        "r": ds.data.r,
        "n_a": pset.n_a,
        "n_b": pset.n_b,
        "n_c": pset.n_c,
        "trace_d_inv": wh.trace_d_inv if wh.d.size else None,
        "trace_lambda_inv": wh.trace_lam_inv if wh.lam.size else None,
        "files": files,
    }
    _dump_json(summary, None)
    return EXIT_OK


def _sim_configs(cfg: dict, args) -> list:
    sim = dict(cfg.get("simulate", {}))
    base = dict(sim.get("base", {}))
    ew = _ew_config({"ew": base.pop("ew", cfg.get("ew", {}))}, args)
    for flag, key in (("seed", "seed"), ("delta", "delta"), ("level", "ci_level"), ("trials", "n_trials")):
        val = getattr(args, flag, None)
        if val is not None:
            base[key] = val
    if "seed" not in base and "seed" in cfg:
        base["seed"] = cfg["seed"]
    base["ew"] = ew
    grid = args.grid or sim.get("grid")
    explicit = sim.get("configs")
    try:
        if explicit is not None:
            if grid is not None:
                raise UsageError("give either a grid or an explicit 'configs' list, not both")
            configs = []
            for c in explicit:
                merged = {**base, **c}
                if isinstance(c.get("ew"), dict):
                    merged["ew"] = ew.replace(**c["ew"])
                configs.append(SimConfig.from_dict(merged))
            return configs
        grid = grid or "table1"
        if isinstance(grid, dict):
            nu, gam = float(grid["sigma_nu2"]), float(grid["sigma_gamma2"])
        elif grid in TABLES:
            nu, gam = TABLES[grid]
        else:
            raise UsageError(f"unknown grid {grid!r}; choose from {sorted(TABLES)}")
        return table_grid(nu, gam, **base)
    except (TypeError, KeyError) as exc:
        raise UsageError(f"bad simulate config: {exc}") from exc


def cmd_simulate(cfg, args) -> int:
    configs = _sim_configs(cfg, args)
    jobs = max(1, args.jobs)
    results = []
    for k, c in enumerate(configs):
        print(f"setting {k + 1}/{len(configs)}: rho={c.rho:g} v={c.v} r={c.r}", file=sys.stderr)
        results.append(run_study(c, n_jobs=jobs))
    if args.format == "json":
        _dump_json(
            {
                "schema": SIM_SCHEMA,
                "table": format_table(results, style="csv"),
                "settings": [r.to_dict(include_records=args.records) for r in results],
            },
            args.out,
        )
    else:
        _emit(format_table(results, style=args.format), args.out)
    return EXIT_OK


COMMANDS = {
    "ftest": cmd_ftest,
    "ci": cmd_ci,
    "eb": cmd_eb,
    "project": cmd_project,
    "simulate": cmd_simulate,
}


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def main(argv=None) -> int:
    with warnings.catch_warnings():
        warnings.showwarning = _show_warning
        return _main(argv)


def _main(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _read_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
