"""Command-line front end: ``mfmc-lab <subcommand> [flags]``.

Every subcommand writes one ``manifest.json`` echoing the resolved
configuration plus one or more CSV files into ``--out-dir``. Settings
resolve as flags over ``--config`` JSON values over built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import __version__
from . import analytic as an
from .gram_entropy import DEFAULT_ALPHA, KernelConfig, dtc_with_bounds
from .synthetic import (
    RNG_ALGORITHM,
    sample_data_a,
    sample_data_b,
    sample_equicorrelated,
    sample_gaussian_pairs,
    sample_latent_class_trimodal,
)
from .training import (
    METRIC_COLUMNS,
    OBJECTIVES,
    GaussianPairSource,
    TrainConfig,
    format_cell,
    linear_probe,
    train_bimodal_estimator,
    train_mfmc,
)

EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_USAGE = 2

FAMILIES = ("data-a", "data-b")
DUMP_FAMILIES = ("equicorrelated", "data-a", "data-b", "gaussian-pairs", "latent-class")

COMMON_DEFAULTS: dict[str, Any] = {"seed": 0, "out_dir": "mfmc-out", "workers": 1}

_LATENT = {"classes": 4, "noise": 0.5, "n": 4000, "n_probe": 1000}
_TRAINER = {"batch_size": 200, "k": 8, "hidden": 64, "ridge": 1e-4, "temperature": 0.1, "eval_every": 200}

DEFAULTS: dict[str, dict[str, Any]] = {
    "bounds-gaussian": {"rho": [round(0.05 * i, 2) for i in range(20)]},
    "bounds-synthetic": {
        "family": list(FAMILIES),
        "m": list(range(3, 9)),
        "n": 500,
        "alpha": DEFAULT_ALPHA,
        "bandwidth": None,
        "n_seeds": 5,
    },
    "estimator-compare": {
        **_TRAINER,
        "rho": [0.0, 0.3, 0.6, 0.9],
        "d": 20,
        "iterations": 3000,
        "lr": 3e-4,
        "n_eval": 2000,
        "center": True,
    },
    "ablation": {
        **_TRAINER,
        **_LATENT,
        "objectives": ["mfmc-trace", "high-order-infonce", "mfmc-logdet", "mfmc-logdet:0"],
        "n_seeds": 5,
        "iterations": 6000,
        "lr": 3e-3,
        "fusion_hidden": 64,
        "eval_every": 500,
    },
    "probe": {
        **_TRAINER,
        **_LATENT,
        "objective": "mfmc-trace",
        "iterations": 2000,
        "lr": 3e-4,
        "fusion_hidden": 64,
    },
    "dump-data": {"family": "latent-class", "n": 500, "m": 3, "rho": 0.5, "d": 20, "classes": 4, "noise": 0.5},
}


class UsageError(ValueError):
    """Invalid flag or config value; maps to exit code 2."""


# -- small helpers ------------------------------------------------------------------


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_cell(v) for v in row])


def write_manifest(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def parallel_map(fn: Callable, items: list, workers: int) -> list:
    """Order-preserving map; results never depend on ``workers``."""
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _median(values: list[float]) -> float:
    finite = [v for v in values if v is not None and math.isfinite(v)]
    return float(statistics.median(finite)) if finite else float("nan")


def _trainer_config(cfg: dict, **extra) -> TrainConfig:
    keys = ("batch_size", "k", "hidden", "fusion_hidden", "ridge", "temperature", "eval_every", "lr",
            "iterations", "center", "objective")
    return TrainConfig(**({k: cfg[k] for k in keys if k in cfg} | extra))


def _latent_pair(cfg: dict, seed: int):
    """Training set and a fresh probe set sharing the same class anchors."""
    train = sample_latent_class_trimodal(cfg["classes"], cfg["n"], cfg["noise"], seed)
    probe = sample_latent_class_trimodal(cfg["classes"], cfg["n_probe"], cfg["noise"], seed + 1, anchor_seed=seed)
    return train, probe


def _manifest(command: str, cfg: dict, status: str, exit_code: int, outputs: list[str], started: float,
              **extra) -> dict:
    return {
        "command": command,
        "config": cfg,
        "status": status,
        "exit_code": exit_code,
        "outputs": sorted(outputs),
        "software_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "rng": RNG_ALGORITHM,
        "wall_seconds": round(time.perf_counter() - started, 3),
        **extra,
    }


# -- bounds-gaussian -----------------------------------------------------------------


def gaussian_bounds_rows(rhos: Sequence[float]) -> list[tuple[float, float, float, float, float]]:
    rows = []
    for rho in rhos:
        mi = an.gaussian_pair_third_mi3(rho)
        b = an.sandwich_bounds([mi] * 3)
        rows.append((float(rho), an.gaussian_dtc3(rho), b.lower, b.upper, mi))
    return rows


def cmd_bounds_gaussian(cfg: dict, out: Path) -> int:
    started = time.perf_counter()
    try:
        rows = gaussian_bounds_rows(cfg["rho"])
    except an.DomainError as exc:
        raise UsageError(str(exc)) from exc
    write_csv(out / "bounds_gaussian.csv", ("rho", "dtc", "lower", "upper", "mi_pair_third"), rows)
    ok = all(lo <= d <= up for _, d, lo, up, _ in rows)
    write_manifest(out / "manifest.json", _manifest(
        "bounds-gaussian", cfg, "completed", EXIT_OK, ["bounds_gaussian.csv"], started,
        units="nats", all_bounds_hold=ok))
    return EXIT_OK


# -- bounds-synthetic ----------------------------------------------------------------


def synthetic_cell(task: tuple[str, int, int, float, float | None, int]) -> dict:
    family, m, n, alpha, bandwidth, seed = task
    row = {"family": family, "m": m, "seed": seed, "dtc_hat": None, "lower_hat": None,
           "upper_hat": None, "bound_ok": None, "error": ""}
    try:
        sampler = sample_data_a if family == "data-a" else sample_data_b
        est = dtc_with_bounds(sampler(m, n, seed).variables(), alpha, KernelConfig(bandwidth=bandwidth))
        row.update(dtc_hat=est.dtc, lower_hat=est.lower, upper_hat=est.upper, bound_ok=est.bound_ok)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def cmd_bounds_synthetic(cfg: dict, out: Path) -> int:
    started = time.perf_counter()
    bad_family = [f for f in cfg["family"] if f not in FAMILIES]
    if bad_family:
        raise UsageError(f"unknown family {bad_family}; expected a subset of {list(FAMILIES)}")
    if not cfg["m"] or any(not 3 <= m <= 12 for m in cfg["m"]):
        raise UsageError("m grid must be a non-empty subset of 3..12")
    if cfg["n"] < 50:
        raise UsageError("n must be >= 50")
    if cfg["n_seeds"] < 1:
        raise UsageError("n_seeds must be >= 1")
    seeds = list(range(cfg["seed"], cfg["seed"] + cfg["n_seeds"]))
    tasks = [(f, m, cfg["n"], cfg["alpha"], cfg["bandwidth"], s) for f in cfg["family"] for m in cfg["m"] for s in seeds]
    rows = parallel_map(synthetic_cell, tasks, cfg["workers"])

    cols = ("family", "m", "seed", "dtc_hat", "lower_hat", "upper_hat", "bound_ok", "error")
    write_csv(out / "bounds_synthetic.csv", cols, ([r[c] for c in cols] for r in rows))

    summary = []
    for fam in cfg["family"]:
        fam_rows = [r for r in rows if r["family"] == fam]
        for m in cfg["m"]:
            cell = [r for r in fam_rows if r["m"] == m]
            summary.append(_summary_row(fam, m, cell))
        summary.append(_summary_row(fam, "all", fam_rows))
    summary.append(_summary_row("all", "all", rows))
    sum_cols = ("family", "m", "median_dtc_hat", "median_lower_hat", "median_upper_hat", "bound_rate", "n_errors")
    write_csv(out / "bounds_synthetic_summary.csv", sum_cols, summary)

    n_ok = sum(1 for r in rows if r["bound_ok"])
    write_manifest(out / "manifest.json", _manifest(
        "bounds-synthetic", cfg, "completed", EXIT_OK, ["bounds_synthetic.csv", "bounds_synthetic_summary.csv"],
        started, units="bits", seeds=seeds, bound_rate=n_ok / len(rows),
        n_errors=sum(1 for r in rows if r["error"])))
    return EXIT_OK


def _summary_row(family: str, m, rows: list[dict]) -> tuple:
    good = [r for r in rows if not r["error"]]
    rate = sum(1 for r in good if r["bound_ok"]) / len(rows) if rows else float("nan")
    return (family, m, _median([r["dtc_hat"] for r in good]), _median([r["lower_hat"] for r in good]),
            _median([r["upper_hat"] for r in good]), rate, len(rows) - len(good))


# -- estimator-compare ---------------------------------------------------------------


def estimator_run(task: tuple[float, str, dict, int]) -> dict:
    rho, objective, cfg, seed = task
    tcfg = _trainer_config(cfg, seed=seed)
    res = train_bimodal_estimator(GaussianPairSource(cfg["d"], rho), tcfg, objective, n_eval=cfg["n_eval"])
    return {"rho": rho, "objective": objective, "estimate": res.final_estimate,
            "status": res.manifest.status, "message": res.manifest.message,
            "trajectory": res.trajectory}


def cmd_estimator_compare(cfg: dict, out: Path) -> int:
    started = time.perf_counter()
    if not cfg["rho"] or any(not abs(r) < 1 for r in cfg["rho"]):
        raise UsageError("rho grid must be non-empty with |rho| < 1")
    if cfg["d"] < 1 or cfg["n_eval"] < cfg["batch_size"]:
        raise UsageError("need d >= 1 and n_eval >= batch_size")
    rhos = sorted(cfg["rho"])
    tasks = [(rho, o, cfg, cfg["seed"]) for rho in rhos for o in ("fmca-trace", "infonce")]
    runs = {(r["rho"], r["objective"]): r for r in parallel_map(estimator_run, tasks, cfg["workers"])}

    ceiling = math.log(cfg["batch_size"])
    rows = []
    for rho in rhos:
        f, i = runs[(rho, "fmca-trace")], runs[(rho, "infonce")]
        rows.append((rho, an.gaussian_mi_multidim(cfg["d"], rho), f["estimate"], i["estimate"], ceiling,
                     f["status"], i["status"]))
    write_csv(out / "estimator_compare.csv",
              ("rho", "true_mi", "fmca_estimate", "infonce_estimate", "infonce_ceiling", "fmca_status",
               "infonce_status"), rows)
    write_csv(out / "estimator_trajectory.csv", ("rho", "objective", "iteration", "estimate"),
              ((rho, o, it, v) for rho in rhos for o in ("fmca-trace", "infonce")
               for it, v in runs[(rho, o)]["trajectory"]))

    failed = [f"rho={k[0]} {k[1]}: {r['status']} {r['message']}" for k, r in sorted(runs.items())
              if r["status"] != "completed"]
    code = EXIT_RUN_FAILED if failed else EXIT_OK
    write_manifest(out / "manifest.json", _manifest(
        "estimator-compare", cfg, "failed" if failed else "completed", code,
        ["estimator_compare.csv", "estimator_trajectory.csv"], started, units="nats", failures=failed))
    return code


# -- ablation ------------------------------------------------------------------------


def parse_objective_token(token: str, default_ridge: float) -> tuple[str, float]:
    """``name`` or ``name:ridge``, e.g. ``mfmc-logdet:0``."""
    name, _, ridge = token.partition(":")
    if name not in OBJECTIVES:
        raise UsageError(f"unknown objective {name!r}; expected one of {list(OBJECTIVES)}")
    try:
        value = float(ridge) if ridge else float(default_ridge)
    except ValueError as exc:
        raise UsageError(f"bad ridge in {token!r}") from exc
    if value < 0:
        raise UsageError(f"ridge must be >= 0 in {token!r}")
    return name, value


def run_tag(objective: str, ridge: float, seed: int) -> str:
    return f"{objective}_ridge{ridge!r}_seed{seed}"


def ablation_run(task: tuple[str, float, int, dict]) -> dict:
    objective, ridge, seed, cfg = task
    train, probe = _latent_pair(cfg, cfg["seed"])
    res = train_mfmc(train, _trainer_config(cfg, objective=objective, ridge=ridge, seed=seed), probe)
    m = res.manifest
    return {
        "objective": objective,
        "ridge": ridge,
        "seed": seed,
        "status": m.status,
        "diverged": m.status != "completed",
        "iterations_run": len(m.records),
        "final_loss": m.records[-1]["loss"] if m.records else None,
        "best_probe": res.best_probe(0),
        "final_probe": res.final_probe(0),
        "message": m.message,
        "manifest": m.to_dict(),
    }


ABLATION_COLUMNS = ("objective", "ridge", "seed", "status", "diverged", "iterations_run", "final_loss",
                    "best_probe", "final_probe")


def cmd_ablation(cfg: dict, out: Path) -> int:
    started = time.perf_counter()
    variants = list(dict.fromkeys(parse_objective_token(t, cfg["ridge"]) for t in cfg["objectives"]))
    if not variants or cfg["n_seeds"] < 1:
        raise UsageError("need at least one objective and n_seeds >= 1")
    seeds = list(range(cfg["seed"], cfg["seed"] + cfg["n_seeds"]))
    tasks = [(o, r, s, cfg) for o, r in variants for s in seeds]
    rows = parallel_map(ablation_run, tasks, cfg["workers"])

    runs_dir = out / "runs"
    runs_dir.mkdir(exist_ok=True)
    outputs = ["ablation.csv", "ablation_summary.csv"]
    for row in rows:
        tag = run_tag(row["objective"], row["ridge"], row["seed"])
        run_dir = runs_dir / tag
        run_dir.mkdir(exist_ok=True)
        write_manifest(run_dir / "run.json", row["manifest"])
        _write_metrics(run_dir / "metrics.csv", row["manifest"]["records"])
        outputs += [f"runs/{tag}/run.json", f"runs/{tag}/metrics.csv"]
    write_csv(out / "ablation.csv", ABLATION_COLUMNS, ([r[c] for c in ABLATION_COLUMNS] for r in rows))

    summary = []
    for o, ridge in variants:
        sel = [r for r in rows if r["objective"] == o and r["ridge"] == ridge]
        summary.append((o, ridge, len(sel), sum(r["diverged"] for r in sel),
                        _median([r["best_probe"] for r in sel]), _median([r["final_probe"] for r in sel]),
                        _median([r["final_loss"] for r in sel if not r["diverged"]])))
    write_csv(out / "ablation_summary.csv",
              ("objective", "ridge", "n_runs", "n_diverged", "median_best_probe", "median_final_probe",
               "median_final_loss"), summary)
    write_manifest(out / "manifest.json", _manifest(
        "ablation", cfg, "completed", EXIT_OK, outputs, started, seeds=seeds,
        variants=[{"objective": o, "ridge": r} for o, r in variants],
        messages={run_tag(r["objective"], r["ridge"], r["seed"]): r["message"] for r in rows if r["message"]}))
    return EXIT_OK


def _write_metrics(path: Path, records: list[dict]) -> None:
    write_csv(path, METRIC_COLUMNS, ([rec.get(c) for c in METRIC_COLUMNS] for rec in records))


# -- probe ---------------------------------------------------------------------------


def cmd_probe(cfg: dict, out: Path) -> int:
    started = time.perf_counter()
    if cfg["objective"] not in OBJECTIVES:
        raise UsageError(f"unknown objective {cfg['objective']!r}")
    try:
        train, probe = _latent_pair(cfg, cfg["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    tcfg = _trainer_config(cfg, seed=cfg["seed"])
    res = train_mfmc(train, tcfg, probe)
    rows = []
    for j, e in enumerate(res.model.embed(probe.modalities, training=False)):
        p = linear_probe(e, probe.labels, tcfg.probe_l2, seed=tcfg.seed)
        rows.append((f"encoder{j + 1}", probe.modalities[j].shape[1], p.train_accuracy, p.test_accuracy,
                     1.0 / cfg["classes"]))
    write_csv(out / "probe.csv", ("encoder", "input_dim", "train_accuracy", "test_accuracy", "chance"), rows)
    _write_metrics(out / "metrics.csv", res.manifest.records)
    status = res.manifest.status
    code = EXIT_OK if status == "completed" else EXIT_RUN_FAILED
    write_manifest(out / "manifest.json", _manifest(
        "probe", cfg, status, code, ["probe.csv", "metrics.csv"], started, message=res.manifest.message,
        evaluations=res.manifest.evaluations))
    return code


# -- dump-data -----------------------------------------------------------------------


def cmd_dump_data(cfg: dict, out: Path) -> int:
    started = time.perf_counter()
    fam, n, seed = cfg["family"], cfg["n"], cfg["seed"]
    try:
        if fam == "equicorrelated":
            header, values = None, sample_equicorrelated(cfg["m"], cfg["rho"], n, seed)
        elif fam == "data-a":
            header, values = None, sample_data_a(cfg["m"], n, seed)
        elif fam == "data-b":
            header, values = None, sample_data_b(cfg["m"], n, seed)
        elif fam == "gaussian-pairs":
            x, y = sample_gaussian_pairs(cfg["d"], cfg["rho"], n, seed)
            header, values = x.columns + y.columns, np.hstack([x.values, y.values])
        elif fam == "latent-class":
            data = sample_latent_class_trimodal(cfg["classes"], n, cfg["noise"], seed)
            header = ["label"] + [f"m{j + 1}_{i + 1}" for j, mod in enumerate(data.modalities)
                                  for i in range(mod.shape[1])]
            values = np.column_stack([data.labels, *data.modalities])
        else:
            raise UsageError(f"unknown family {fam!r}; expected one of {list(DUMP_FAMILIES)}")
    except (ValueError, an.DomainError) as exc:
        raise UsageError(str(exc)) from exc
    if header is None:
        values.to_csv(out / "data.csv")
    else:
        write_csv(out / "data.csv", header,
                  ([int(r[0]), *map(float, r[1:])] if fam == "latent-class" else list(map(float, r))
                   for r in values))
    write_manifest(out / "manifest.json", _manifest("dump-data", cfg, "completed", EXIT_OK, ["data.csv"], started))
    return EXIT_OK


COMMANDS: dict[str, Callable[[dict, Path], int]] = {
    "bounds-gaussian": cmd_bounds_gaussian,
    "bounds-synthetic": cmd_bounds_synthetic,
    "estimator-compare": cmd_estimator_compare,
    "ablation": cmd_ablation,
    "probe": cmd_probe,
    "dump-data": cmd_dump_data,
}


# -- argument parsing ----------------------------------------------------------------


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _optional_float(text: str) -> float | None:
    return None if text.lower() in ("none", "median") else float(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="base seed (default 0)")
    common.add_argument("--out-dir", help="output directory (default ./mfmc-out)")
    common.add_argument("--config", help="JSON file of settings; flags take precedence")
    common.add_argument("--workers", type=int, help="process count for independent runs (default 1)")

    trainer = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    trainer.add_argument("--iterations", type=int)
    trainer.add_argument("--lr", type=float)
    trainer.add_argument("--batch-size", type=int)
    trainer.add_argument("--k", type=int, help="embedding width")
    trainer.add_argument("--hidden", type=int)
    trainer.add_argument("--ridge", type=float, help="covariance ridge epsilon")
    trainer.add_argument("--temperature", type=float)
    trainer.add_argument("--eval-every", type=int)

    latent = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    latent.add_argument("--classes", type=int)
    latent.add_argument("--noise", type=float)
    latent.add_argument("--n", type=int, help="training rows")
    latent.add_argument("--n-probe", type=int, help="held-out probe rows")
    latent.add_argument("--fusion-hidden", type=int)

    parser = argparse.ArgumentParser(prog="mfmc-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    kw = dict(argument_default=argparse.SUPPRESS)

    p = sub.add_parser("bounds-gaussian", parents=[common], help="closed-form DTC and sandwich bounds", **kw)
    p.add_argument("--rho", type=float, nargs="+")

    p = sub.add_parser("bounds-synthetic", parents=[common], help="Gram-entropy DTC and bounds on Data A/B", **kw)
    p.add_argument("--family", nargs="+", choices=FAMILIES)
    p.add_argument("--m", type=int, nargs="+")
    p.add_argument("--n", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--bandwidth", type=_optional_float, help="kernel width, or 'median'")
    p.add_argument("--n-seeds", type=int)

    p = sub.add_parser("estimator-compare", parents=[common, trainer], help="FMCA vs InfoNCE on Gaussian pairs",
                       **kw)
    p.add_argument("--rho", type=float, nargs="+")
    p.add_argument("--d", type=int)
    p.add_argument("--n-eval", type=int)
    p.add_argument("--center", type=_bool)

    p = sub.add_parser("ablation", parents=[common, trainer, latent], help="objective ablation over seeds", **kw)
    p.add_argument("--objectives", nargs="+", help="names, optionally name:ridge")
    p.add_argument("--n-seeds", type=int)

    p = sub.add_parser("probe", parents=[common, trainer, latent], help="per-encoder linear probes", **kw)
    p.add_argument("--objective", choices=OBJECTIVES)

    p = sub.add_parser("dump-data", parents=[common], help="write a synthetic sample to CSV", **kw)
    p.add_argument("--family", choices=DUMP_FAMILIES)
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--noise", type=float)
    return parser


def load_config_file(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve_config(command: str, flags: dict, file_values: dict | None = None) -> dict:
    """Defaults, then config-file values, then explicit flags."""
    base = {**COMMON_DEFAULTS, **DEFAULTS[command]}
    file_values = dict(file_values or {})
    unknown = sorted(set(file_values) - set(base))
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {unknown}")
    return {**base, **file_values, **flags}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = vars(parser.parse_args(argv))
    command = ns.pop("command")
    config_path = ns.pop("config", None)
    try:
        cfg = resolve_config(command, ns, load_config_file(config_path) if config_path else None)
        if cfg["workers"] < 1:
            raise UsageError("workers must be >= 1")
        out = Path(cfg["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[command](cfg, out)
    except UsageError as exc:
        print(f"mfmc-lab {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
