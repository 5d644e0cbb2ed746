"""Command-line front end.

Every command resolves its flags into a complete config dict, runs, and
writes ``manifest.json`` next to its outputs. ``rerun`` replays a manifest
into a fresh directory.

Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import logging
import math
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import io
from .core import DimensionError
from .covariance import covariance_pair
from .inference import (DEFAULT_ALPHA, ClimeInfeasibleError, bonferroni_select,
                        default_lambda_prime, run_untangle_and_chord)
from .simplex import LPInfeasible, LPUnbounded
from .simulation import (GeneratorError, GeneratorSpec, default_tracked, generate_model,
                         run_benchmark, run_coverage_study, sample_gaussian)
from .strings import (SUPPORT_THRESHOLD, AdmmConfig, InfeasiblePointError, SelectionError,
                      fit_strings, lambda_grid, select_lambda)

log = logging.getLogger("intersubject")

# recorded in every manifest so no constant is silent
DOCUMENTED_DEFAULTS = {
    "alpha": DEFAULT_ALPHA,
    "support_threshold": SUPPORT_THRESHOLD,
    "rho": AdmmConfig.rho,
    "tol": AdmmConfig.tol,
    "max_iters": AdmmConfig.max_iters,
    "lambda_grid": "C * sqrt(log d / n), C in 50 uniform values on [0, 5]",
    "lambda_prime": "0.5 * sqrt(log d / n)",
    "condition_number": "d",
    "bonferroni_level": "4 * alpha / d^2",
}


class UsageError(ValueError):
    pass


NUMERICAL_ERRORS = (ClimeInfeasibleError, InfeasiblePointError, SelectionError, LPInfeasible,
                    LPUnbounded, np.linalg.LinAlgError, FloatingPointError, RuntimeError)
USAGE_ERRORS = (UsageError, GeneratorError, DimensionError, FileNotFoundError, KeyError)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _abs(path) -> str | None:
    return None if path is None else str(Path(path).resolve())


def _admm(cfg: dict) -> AdmmConfig:
    return AdmmConfig(rho=cfg["rho"], tol=cfg["tol"], max_iters=cfg["max_iters"])


def _table_num(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.4f}"


def _read_inputs(cfg: dict):
    data = io.read_matrix_csv(cfg["data"])
    part = io.read_partition(cfg["partition"])
    if data.shape[1] != part.d:
        raise UsageError(f"data has {data.shape[1]} columns, partition covers {part.d}")
    return data, part


def _generator(cfg: dict, seed: int) -> GeneratorSpec:
    return GeneratorSpec(d=cfg["d"], s=cfg["s"], value=cfg["value"],
                         condition_number_target=cfg["cond"], n_groups=cfg["L"], seed=seed)


# ---------------------------------------------------------------------------
# resolution: flags -> complete config (idempotent)


def _resolve_common(cfg: dict) -> None:
    cfg.setdefault("rho", AdmmConfig.rho)
    cfg.setdefault("tol", AdmmConfig.tol)
    cfg.setdefault("max_iters", AdmmConfig.max_iters)
    try:
        _admm(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _resolve_model_flags(cfg: dict) -> None:
    if cfg.get("cond") is None:
        cfg["cond"] = float(cfg["d"])
    if cfg["L"] < 2:
        raise UsageError("--L must be at least 2")


def resolve_simulate(cfg: dict) -> dict:
    _resolve_model_flags(cfg)
    if cfg["n"] < 2:
        raise UsageError("--n must be at least 2")
    if cfg.get("n_val", 0) < 0:
        raise UsageError("--n-val must be nonnegative")
    return cfg


def _resolve_lambda(cfg: dict, n: int, d: int) -> None:
    if cfg.get("lambda") is not None:
        if cfg.get("lambda_grid") is not None:
            raise UsageError("give either --lambda or --lambda-grid")
        if cfg["lambda"] < 0:
            raise UsageError("--lambda must be nonnegative")
        return
    if cfg.get("val_data") is None:
        raise UsageError("without --lambda a validation sample (--val-data) is required")
    if cfg.get("lambda_grid") is None:
        cfg["lambda_grid"] = [float(v) for v in lambda_grid(d, n)]
    if any(v < 0 for v in cfg["lambda_grid"]):
        raise UsageError("lambda grid values must be nonnegative")


def resolve_estimate(cfg: dict) -> dict:
    _resolve_common(cfg)
    for key in ("data", "partition", "val_data"):
        cfg[key] = _abs(cfg.get(key))
    data, part = _read_inputs(cfg)
    _resolve_lambda(cfg, data.shape[0], part.d)
    return cfg


def resolve_infer(cfg: dict) -> dict:
    _resolve_common(cfg)
    for key in ("data", "partition", "val_data"):
        cfg[key] = _abs(cfg.get(key))
    data, part = _read_inputs(cfg)
    if data.shape[0] % 2:
        raise UsageError("infer needs an even number of rows")
    n = data.shape[0] // 2
    _resolve_lambda(cfg, n, part.d)
    if cfg.get("lambda_prime") is None:
        cfg["lambda_prime"] = default_lambda_prime(part.d, n)
    if not 0.0 < cfg["alpha"] < 1.0:
        raise UsageError("--alpha must lie in (0, 1)")
    return cfg


def resolve_benchmark(cfg: dict) -> dict:
    _resolve_common(cfg)
    _resolve_model_flags(cfg)
    if cfg["reps"] < 1:
        raise UsageError("--reps must be at least 1")
    if cfg.get("lambda_grid") is None:
        cfg["lambda_grid"] = [float(v) for v in lambda_grid(cfg["d"], cfg["n_train"])]
    _generator(cfg, cfg["seed"])
    return cfg


def resolve_coverage(cfg: dict) -> dict:
    _resolve_common(cfg)
    _resolve_model_flags(cfg)
    if cfg["reps"] < 2:
        raise UsageError("--reps must be at least 2")
    if not 0.0 < cfg["alpha"] < 1.0:
        raise UsageError("--alpha must lie in (0, 1)")
    if cfg.get("model_seed") is None:
        cfg["model_seed"] = cfg["seed"]
    if cfg.get("n_val") is None:
        cfg["n_val"] = cfg["n"]
    if cfg.get("lambda_prime") is None:
        cfg["lambda_prime"] = default_lambda_prime(cfg["d"], cfg["n"])
    spec = _generator(cfg, cfg["model_seed"])
    if cfg.get("tracked") is None:
        cfg["tracked"] = [[i.j + 1, i.k + 1] for i in default_tracked(spec.partition())]
    return cfg


# ---------------------------------------------------------------------------
# runners: config + out dir -> list of output file names


def run_simulate(cfg: dict, out: Path) -> tuple[list[str], dict]:
    model = generate_model(_generator(cfg, cfg["seed"]))
    rng = np.random.default_rng([cfg["seed"], 1])
    data = sample_gaussian(model, cfg["n"], rng)
    io.write_matrix_csv(out / "sigma.csv", model.sigma)
    io.write_matrix_csv(out / "omega.csv", model.omega)
    io.write_matrix_csv(out / "theta_star.csv", model.theta)
    io.write_matrix_csv(out / "data.csv", data)
    io.write_partition(out / "partition.json", model.partition)
    io.write_json(out / "support.json", {"s": model.s,
                                         "support": io.pairs_json(model.support)})
    files = ["sigma.csv", "omega.csv", "theta_star.csv", "data.csv", "partition.json",
             "support.json"]
    if cfg.get("n_val", 0):
        io.write_matrix_csv(out / "val.csv", sample_gaussian(model, cfg["n_val"], rng))
        files.append("val.csv")
    extra = {"raw_condition_number": model.raw_condition_number,
             "condition_number": model.condition_number}
    return files, extra


def run_estimate(cfg: dict, out: Path) -> tuple[list[str], dict]:
    data, part = _read_inputs(cfg)
    method = cfg["covariance"]
    cov = covariance_pair(data, part, center=cfg["center"], method=method)
    admm = _admm(cfg)
    files = ["theta_hat.csv", "fit.json"]
    if cfg.get("lambda") is not None:
        fit = fit_strings(cov, cfg["lambda"], admm)
    else:
        val = io.read_matrix_csv(cfg["val_data"])
        cov_val = covariance_pair(val, part, center=cfg["center"], method=method)
        sel = select_lambda(cov, cov_val, cfg["lambda_grid"], admm)
        fit = sel.best
        io.write_json(out / "selection.json", sel.to_json())
        files.append("selection.json")
    io.write_matrix_csv(out / "theta_hat.csv", fit.theta_hat)
    body = fit.to_json()
    mask = fit.support()
    body["support"] = io.pairs_json(i for i in part.inter_pairs() if mask[i.j, i.k])
    io.write_json(out / "fit.json", body)
    return files, {"converged": fit.converged}


def run_infer(cfg: dict, out: Path) -> tuple[list[str], dict]:
    data, part = _read_inputs(cfg)
    val = io.read_matrix_csv(cfg["val_data"]) if cfg.get("lambda") is None else None
    lam = cfg["lambda"] if cfg.get("lambda") is not None else cfg["lambda_grid"]
    res = run_untangle_and_chord(data, part, lam=lam, lambda_prime=cfg["lambda_prime"],
                                 cfg=_admm(cfg), alpha=cfg["alpha"], val_data=val,
                                 shuffle=cfg["shuffle"], seed=cfg["seed"], center=cfg["center"])
    io.write_matrix_csv(out / "theta_u.csv", res.theta_u)
    edges = res.edges()
    io.write_rows_csv(out / "edges.csv", io.EDGE_HEADER, [e.csv_row() for e in edges])
    body = res.to_json()
    body["fit"] = {k: v for k, v in res.fit.to_json().items() if k != "theta"}
    body["clime"] = {"m_max_row_l1": res.m.max_row_l1, "m_feasibility_gap": res.m.feasibility_gap,
                     "p_max_row_l1": res.p.max_row_l1, "p_feasibility_gap": res.p.feasibility_gap}
    files = ["theta_u.csv", "edges.csv", "inference.json"]
    if cfg["bonferroni"]:
        chosen = set(bonferroni_select(res, cfg["alpha"]))
        body["bonferroni_level"] = 4.0 * cfg["alpha"] / part.d ** 2
        io.write_rows_csv(out / "selected_edges.csv", io.EDGE_HEADER,
                          [e.csv_row() for e in edges if e.index in chosen])
        files.append("selected_edges.csv")
    io.write_json(out / "inference.json", body)
    if res.clamped:
        log.warning("variance floor applied to %d entries", len(res.clamped))
    return files, {"clamped": len(res.clamped)}


def run_benchmark_cmd(cfg: dict, out: Path) -> tuple[list[str], dict]:
    res = run_benchmark(_generator(cfg, cfg["seed"]), n_train=cfg["n_train"], n_val=cfg["n_val"],
                        grid=cfg["lambda_grid"], cfg=_admm(cfg), replications=cfg["reps"],
                        seed=cfg["seed"], jobs=cfg["jobs"], center=cfg["center"],
                        method=cfg["covariance"])
    metrics = ("precision", "recall", "f_score")
    io.write_rows_csv(out / "table.csv", ["d", "s", *metrics, "failed"],
                      [[cfg["d"], cfg["s"], *(res.row(m).formatted(4) for m in metrics),
                        res.failed]])
    rows = [[r + 1, m.tp, m.fp, m.fn, _table_num(m.precision), _table_num(m.recall),
             _table_num(m.f_score), repr(lam)]
            for r, m, lam in zip(res.rep_ids, res.per_rep, res.chosen_lambdas)]
    io.write_rows_csv(out / "replications.csv",
                      ["replication", "tp", "fp", "fn", *metrics, "lambda"], rows)
    if res.failed:
        log.warning("%d of %d replications failed", res.failed, res.replications)
    return ["table.csv", "replications.csv"], {"failed": res.failed}


def run_coverage_cmd(cfg: dict, out: Path) -> tuple[list[str], dict]:
    spec = _generator(cfg, cfg["model_seed"])
    model = generate_model(spec)
    tracked = io.pairs_from_json(cfg["tracked"])
    rep = run_coverage_study(spec, n_per_half=cfg["n"], alpha=cfg["alpha"],
                             replications=cfg["reps"], seed=cfg["seed"], lam=cfg.get("lambda"),
                             lambda_prime=cfg["lambda_prime"], cfg=_admm(cfg), n_val=cfg["n_val"],
                             tracked=tracked, jobs=cfg["jobs"], model=model)
    io.write_rows_csv(out / "coverage.csv",
                      ["d", "s", "avgcov_s", "avgcov_sc", "avglen_s", "avglen_sc", "failed"],
                      [[cfg["d"], cfg["s"], *(_table_num(v) for v in rep.to_row().values()),
                        rep.failed]])
    io.write_rows_csv(out / "per_entry.csv", ["j", "k", "in_support", "theta_star", "coverage"],
                      [[i.j + 1, i.k + 1, int(i in model.support), float(model.theta[i.j, i.k]),
                        _table_num(c)] for i, c in rep.per_entry_cov.items()])
    files = ["coverage.csv", "per_entry.csv"]
    for idx in tracked:
        name = f"qq_{idx.j + 1}_{idx.k + 1}.csv"
        io.write_rows_csv(out / name, ["replication", "z"],
                          [[r + 1, float(z)] for r, z in enumerate(rep.z_scores[idx])])
        files.append(name)
    if rep.failed:
        log.warning("%d of %d replications failed", rep.failed, cfg["reps"])
    extra = {"failed": rep.failed, "clamp_events": rep.clamp_events,
             "raw_condition_number": model.raw_condition_number,
             "condition_number": model.condition_number}
    return files, extra


COMMANDS = {
    "simulate": (resolve_simulate, run_simulate),
    "estimate": (resolve_estimate, run_estimate),
    "infer": (resolve_infer, run_infer),
    "benchmark": (resolve_benchmark, run_benchmark_cmd),
    "coverage": (resolve_coverage, run_coverage_cmd),
}

INPUT_KEYS = ("data", "partition", "val_data")


def execute(command: str, cfg: dict, out_dir) -> dict:
    """Resolve ``cfg``, run ``command`` into ``out_dir`` and write the manifest."""
    resolve, run = COMMANDS[command]
    started = _now()
    cfg = resolve(dict(cfg))
    out = io.ensure_dir(out_dir)
    files, extra = run(cfg, out)
    manifest = {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "defaults": DOCUMENTED_DEFAULTS,
        "started": started,
        "finished": _now(),
        "inputs": {k: cfg[k] for k in INPUT_KEYS if cfg.get(k)},
        "out_dir": str(out.resolve()),
        "outputs": files,
        "results": extra,
        "version": __version__,
        "environment": {"python": platform.python_version(), "numpy": np.__version__,
                        "scipy": scipy.__version__},
    }
    io.write_json(out / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# argument parsing


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _pair_list(text: str) -> list[list[int]]:
    out = []
    for item in text.split(";"):
        j, k = item.split(",")
        out.append([int(j), int(k)])
    return out


def _admm_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rho", type=float, default=AdmmConfig.rho)
    p.add_argument("--tol", type=float, default=AdmmConfig.tol)
    p.add_argument("--max-iters", type=int, default=AdmmConfig.max_iters)


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--L", type=int, default=2, help="number of groups")
    p.add_argument("--value", type=float, default=0.5)
    p.add_argument("--cond", type=float, default=None, help="condition number (default d)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="intersubject", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a model and a Gaussian sample")
    _model_flags(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--n-val", type=int, default=0, help="extra validation rows (val.csv)")
    p.add_argument("--out-dir", required=True)

    for name, helptext in (("estimate", "fit STRINGS"), ("infer", "de-biased inference")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True)
        p.add_argument("--partition", required=True)
        p.add_argument("--lambda", dest="lambda", type=float, default=None)
        p.add_argument("--lambda-grid", type=_float_list, default=None)
        p.add_argument("--val-data", default=None)
        p.add_argument("--center", action="store_true")
        _admm_flags(p)
        p.add_argument("--out-dir", required=True)
        if name == "estimate":
            p.add_argument("--covariance", choices=("sample", "kendall"), default="sample")
        else:
            p.add_argument("--lambda-prime", type=float, default=None)
            p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
            p.add_argument("--shuffle", action="store_true")
            p.add_argument("--seed", type=int, default=None)
            p.add_argument("--bonferroni", action="store_true")

    p = sub.add_parser("benchmark", help="support-recovery study")
    _model_flags(p)
    p.add_argument("--n-train", type=int, default=100)
    p.add_argument("--n-val", type=int, default=100)
    p.add_argument("--lambda-grid", type=_float_list, default=None)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--covariance", choices=("sample", "kendall"), default="sample")
    p.add_argument("--center", action="store_true")
    _admm_flags(p)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("coverage", help="confidence-interval coverage study")
    _model_flags(p)
    p.add_argument("--n", type=int, default=100, help="rows per half")
    p.add_argument("--n-val", type=int, default=None)
    p.add_argument("--model-seed", type=int, default=None)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--lambda", dest="lambda", type=float, default=None)
    p.add_argument("--lambda-prime", type=float, default=None)
    p.add_argument("--tracked", type=_pair_list, default=None,
                   help="1-based entries 'j,k;j,k;...' (default: first row of group 1)")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    _admm_flags(p)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("rerun", help="replay a manifest into a new directory")
    p.add_argument("manifest")
    p.add_argument("--out-dir", required=True)
    return ap


def _config_from_args(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "out_dir")}
    if cfg.get("tracked") is not None:
        cfg["tracked"] = [list(p) for p in cfg["tracked"]]
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "rerun":
            prior = io.read_json(args.manifest)
            command, cfg = prior["command"], prior["config"]
            if command not in COMMANDS:
                raise UsageError(f"unknown command in manifest: {command!r}")
        else:
            command, cfg = args.command, _config_from_args(args)
        manifest = execute(command, cfg, args.out_dir)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{command}: wrote {len(manifest['outputs'])} files to {manifest['out_dir']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
