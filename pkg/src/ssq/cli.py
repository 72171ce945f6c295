"""Command-line interface: ``ssq estimate | simulate | analyze``.

Settings resolve in the order built-in default < ``--config`` file < flag.
The config file holds ``key = value`` lines (``#`` starts a comment); keys
are the long flag names with dashes or underscores, and unknown keys are
rejected. Every report echoes the resolved settings as ``# key=value``
header lines.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import sys
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import io
from .analysis import COLUMNS as ANALYZE_COLUMNS, run_analysis, zscore
from .core import Dataset, estimate
from .errors import ConfigError, DataError, SSQError
from .nuisance.registry import TOKENS, make_strategy
from .simulation import DgpSpec, run_study

DEFAULT_METHODS = "ks_ols,ks_sir,logistic,forest"


@dataclass(frozen=True)
class Opt:
    name: str
    type: Callable = str
    default: Any = None
    help: str = ""
    required: bool = False
    flag: bool = False


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if str(text).strip().lower() in ("", "none", "auto") else int(text)


COMMON = [
    Opt("tau", float, 0.5, "quantile level in (0, 1)"),
    Opt("level", float, 0.95, "confidence level"),
    Opt("folds", int, 10, "cross-fitting folds K"),
    Opt("seed", int, 1, "master seed"),
    Opt("out", str, None, "output path (default: stdout)"),
    Opt("format", str, "csv", "csv or md"),
    Opt("workers", int, 1, "worker threads for replications"),
    Opt("timestamp", _bool, False, "add a timestamp line to the report", flag=True),
    # strategy hyperparameters
    Opt("slices", _opt_int, None, "SIR slices (default ceil(n/5) equal-width, "
                                  "ceil(n/75) equal-count for sparse SIR)"),
    Opt("r", _opt_int, None, "number of directions (default 1 for ols/lasso, 2 for SIR)"),
    Opt("cv-folds", int, 10, "folds for lasso and L1-logistic tuning"),
    Opt("trees", int, 500, "forest size"),
    Opt("mtry", _opt_int, None, "forest split candidates (default ceil(sqrt(p)))"),
    Opt("min-leaf", int, 5, "forest minimum leaf size"),
    Opt("clip", _bool, False, "clip imputations into [-tau, 1 - tau]", flag=True),
]

COMMANDS = {
    "estimate": [
        Opt("input", str, None, "CSV with labeled and unlabeled rows", required=True),
        Opt("unlabeled", str, None, "optional second CSV of unlabeled rows"),
        Opt("response", str, "y", "response column name"),
        Opt("strategy", str, "ks_ols", f"one of {', '.join(TOKENS)}"),
        Opt("categorical", str, "", "comma-separated columns to integer-code"),
        Opt("standardize", _bool, False, "z-score numeric covariates", flag=True),
    ],
    "simulate": [
        Opt("model", str, None, "data-generating model a-e", required=True),
        Opt("p", int, None, "covariate dimension", required=True),
        Opt("q", _opt_int, None, "active covariates (default p)"),
        Opt("n", int, 500, "labeled sample size"),
        Opt("N", int, 5000, "unlabeled sample size"),
        Opt("methods", str, DEFAULT_METHODS, "comma-separated strategy tokens"),
        Opt("reps", int, 500, "Monte Carlo replications"),
        Opt("oracle-draws", int, 100_000, "draws for the oracle constants"),
    ],
    "analyze": [
        Opt("input", str, None, "fully labeled CSV", required=True),
        Opt("response", str, "y", "response column name"),
        Opt("n-labeled", int, None, "labeled rows kept per replication", required=True),
        Opt("methods", str, DEFAULT_METHODS, "comma-separated strategy tokens"),
        Opt("reps", int, 500, "subsampling replications"),
        Opt("categorical", str, "", "comma-separated columns to integer-code"),
        Opt("standardize", _bool, True, "z-score numeric covariates", flag=True),
    ],
}


def _key(name: str) -> str:
    return name.replace("-", "_")


HELP = {
    "estimate": "estimate a quantile from one labeled/unlabeled data file",
    "simulate": "Monte Carlo study on a synthetic model",
    "analyze": "subsample a fully labeled file and compare methods",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssq", description="Semi-supervised quantile estimation.", allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, opts in COMMANDS.items():
        p = sub.add_parser(cmd, help=HELP[cmd], description=HELP[cmd],
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                           argument_default=argparse.SUPPRESS, allow_abbrev=False)
        p.add_argument("--config", help="key = value settings file")
        for o in opts + COMMON:
            dest = _key(o.name)
            hint = o.help + ("" if o.default is None else f" (default: {o.default})")
            if o.flag:
                p.add_argument(f"--{o.name}", dest=dest, action="store_true", help=hint)
                p.add_argument(f"--no-{o.name}", dest=dest, action="store_false",
                               help=argparse.SUPPRESS)
            else:
                p.add_argument(f"--{o.name}", dest=dest, type=o.type, help=hint,
                               metavar=dest.upper())
    return parser


def read_config(path) -> dict[str, str]:
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[_key(k)] = v
    return out


def resolve(command: str, ns: argparse.Namespace) -> dict[str, Any]:
    opts = {_key(o.name): o for o in COMMANDS[command] + COMMON}
    given = vars(ns)
    file_values = read_config(given["config"]) if given.get("config") else {}
    unknown = sorted(set(file_values) - set(opts))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    cfg = {}
    for key, o in opts.items():
        if key in given:
            cfg[key] = given[key]
        elif key in file_values:
            try:
                cfg[key] = o.type(file_values[key])
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
        elif o.required:
            raise ConfigError(f"missing required setting --{o.name}")
        else:
            cfg[key] = o.default
    if cfg["format"] not in ("csv", "md"):
        raise ConfigError("--format must be csv or md")
    for key in ("tau", "level"):
        if not 0.0 < cfg[key] < 1.0:
            raise ConfigError(f"--{key} must lie strictly inside (0, 1), got {cfg[key]}")
    if cfg["folds"] < 2 or cfg["workers"] < 1:
        raise ConfigError("need --folds >= 2 and --workers >= 1")
    return cfg


def _methods(text: str) -> list[str]:
    out = [m.strip() for m in text.split(",") if m.strip()]
    if not out:
        raise ConfigError("no methods given")
    for m in out:
        if m not in TOKENS and not m.startswith("oracle:"):
            raise ConfigError(f"unknown strategy token {m!r}")
    return out


def _strategy_params(cfg) -> dict:
    return {"r": cfg["r"], "slices": cfg["slices"], "cv_folds": cfg["cv_folds"],
            "n_trees": cfg["trees"], "mtry": cfg["mtry"], "min_leaf": cfg["min_leaf"],
            "clip": cfg["clip"]}


def _meta(command: str, cfg: dict) -> dict:
    meta = {"command": command}
    meta.update({k: ("" if v is None else v) for k, v in cfg.items() if k not in ("out",)})
    if cfg.get("timestamp"):
        meta["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return meta


def _emit(cfg: dict, text: str) -> None:
    if cfg["out"]:
        io.atomic_write(cfg["out"], text)
    else:
        sys.stdout.write(text)


def _categorical(cfg) -> list[str]:
    return [c.strip() for c in cfg["categorical"].split(",") if c.strip()]


def _standardized(loaded: io.LoadedData, cats: list[str]) -> Dataset:
    d = loaded.data
    skip = [loaded.covariates.index(c) for c in cats]
    x = zscore(np.vstack([d.labeled_x, d.unlabeled_x]), skip)
    return Dataset(d.labeled_y, x[:d.n], x[d.n:])


def cmd_estimate(cfg: dict) -> str:
    cats = _categorical(cfg)
    loaded = io.load_data(cfg["input"], cfg["response"], cfg["unlabeled"], cats)
    data = _standardized(loaded, cats) if cfg["standardize"] else loaded.data
    strategy = make_strategy(cfg["strategy"], cfg["tau"], **_strategy_params(cfg))
    fit = estimate(data, cfg["tau"], strategy, cfg["folds"], cfg["level"], cfg["seed"])
    rows = [
        {"method": "supervised", "estimate": fit.theta_sup, "se": fit.se_sup,
         "ci_lo": fit.ci_sup[0], "ci_hi": fit.ci_sup[1]},
        {"method": cfg["strategy"], "estimate": fit.theta_ss, "se": fit.se_ss,
         "ci_lo": fit.ci_ss[0], "ci_hi": fit.ci_ss[1]},
    ]
    meta = _meta("estimate", cfg)
    meta.update({"n": fit.n, "N": fit.N, "p": data.p, "nu": fit.nu, "f_hat": fit.f_hat.value,
                 "bandwidth": fit.f_hat.bandwidth, "sigma2_ss": fit.sigma2_ss})
    cols = ["method", "estimate", "se", "ci_lo", "ci_hi"]
    if cfg["format"] == "md":
        return io.markdown_table(rows, cols)
    return io.report_csv(rows, meta, cols)


def cmd_simulate(cfg: dict, progress=None) -> str:
    spec = DgpSpec(cfg["model"], cfg["p"], cfg["n"], cfg["N"], cfg["q"], cfg["tau"])
    table = run_study(spec, _methods(cfg["methods"]), cfg["folds"], cfg["reps"], cfg["level"],
                      cfg["seed"], cfg["workers"], cfg["oracle_draws"], _strategy_params(cfg),
                      progress)
    table.config = {**_meta("simulate", cfg), "q": spec.q}
    if cfg["format"] == "md":
        cols = ["method", "re", "ese", "ase", "bias", "cr", "replications", "failures"]
        head = (f"model ({spec.model}), p={spec.p}, q={spec.q}, n={spec.n}, N={spec.N}, "
                f"tau={spec.tau}, ORE={table.oracle.ore:.2f}, theta0={table.oracle.theta0:.4f}\n\n")
        return head + io.markdown_table(table.as_dicts(), cols)
    return io.metrics_csv(table)


def cmd_analyze(cfg: dict, progress=None) -> str:
    cats = _categorical(cfg)
    loaded = io.load_data(cfg["input"], cfg["response"], None, cats)
    data = _standardized(loaded, cats) if cfg["standardize"] else loaded.data
    if data.N:
        raise DataError("analyze needs a fully labeled input file")
    report = run_analysis(data.labeled_y, data.labeled_x, cfg["n_labeled"],
                          _methods(cfg["methods"]), cfg["tau"], cfg["reps"], cfg["folds"],
                          cfg["level"], cfg["seed"], cfg["workers"], _strategy_params(cfg))
    meta = _meta("analyze", cfg)
    meta.update({f"gold_{k}": v for k, v in report.gold.items()})
    if cfg["format"] == "md":
        head = (f"gold standard: {report.gold['theta']:.4f} "
                f"(se {report.gold['se']:.4f}, {report.gold['rows']} rows)\n\n")
        return head + io.markdown_table(report.rows, ANALYZE_COLUMNS)
    return io.report_csv(report.rows, meta, ANALYZE_COLUMNS)


HANDLERS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "analyze": cmd_analyze}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = resolve(ns.command, ns)
        _emit(cfg, HANDLERS[ns.command](cfg))
    except SSQError as exc:
        print(f"ssq {ns.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
