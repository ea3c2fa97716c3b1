"""Command-line entry point: ``bartborrow {simulate,replicate,analyze,diagnose}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bart import BartHyper, InputError, McmcConfig
from .data import ACUPUNCTURE_SCHEMA, SYNTH_MODES, dataset_to_csv, load_dataset, synthesize_external
from .effects import cate_from_effects, conditional_effect_draws, pate_from_effects, test_superiority
from .models import METHODS, child_seed, fit_method
from .simgen import VARIANTS, ScenarioSpec, generate_scenario, run_replications

log = logging.getLogger("bartborrow")

DEFAULTS = {
    "seed": 0,
    "iters": 1100,
    "burn": 100,
    "trees": 200,
    "out": None,
    "scenario": 1,
    "variant": "cond-indep",
    "n_trial": 50,
    "n_external": None,
    "reps": 100,
    "methods": None,
    "jobs": None,
    "data": None,
    "schema": None,
    "estimand": "CATE",
    "level": 0.95,
    "threshold": [0.0],
    "points_out": None,
    "synthesize": None,
    "n_ext": 301,
    "baseline": 0,
    "n_perm": 100,
    "standardize": False,
}


def _methods(text: str) -> list[str]:
    names = [m.strip() for m in text.split(",") if m.strip()]
    for m in names:
        if m not in METHODS:
            raise argparse.ArgumentTypeError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bartborrow", description="Borrowing external controls with BART.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="mode", required=True)
    S = argparse.SUPPRESS

    def common(sp, iters=True, n_iter=1100, n_trees=200):
        sp.add_argument("--config", help="JSON file of option values; command-line flags take precedence")
        sp.add_argument("--seed", type=int, default=S, help="master seed (default 0)")
        sp.add_argument("--out", default=S, help="output file (default stdout)")
        if iters:
            sp.add_argument("--iters", type=int, default=S, help=f"total MCMC iterations (default {n_iter})")
            sp.add_argument("--burn", type=int, default=S, help="burn-in iterations (default 100)")
            sp.add_argument("--trees", type=int, default=S, help=f"number of BART trees (default {n_trees})")

    def scenario(sp):
        sp.add_argument("--scenario", type=int, choices=(1, 2, 3), default=S)
        sp.add_argument("--variant", choices=VARIANTS, default=S)
        sp.add_argument("--n-trial", dest="n_trial", type=int, default=S)
        sp.add_argument("--n-external", dest="n_external", type=int, default=S, help="rows per external source")

    def dataset(sp):
        sp.add_argument("--data", default=S, help="comma-delimited dataset")
        sp.add_argument("--schema", default=S, help="'acupuncture' or a JSON file mapping column roles")
        sp.add_argument("--synthesize", choices=SYNTH_MODES, default=S, help="append synthetic external controls")
        sp.add_argument("--n-ext", dest="n_ext", type=int, default=S, help="synthetic external rows (default 301)")
        sp.add_argument("--baseline", default=S, help="baseline covariate name or index for synthesis")

    sp = sub.add_parser("simulate", help="write one simulated dataset")
    common(sp, iters=False)
    scenario(sp)

    sp = sub.add_parser("replicate", help="run a simulation study and write the metrics table")
    common(sp)
    scenario(sp)
    sp.add_argument("--reps", type=int, default=S)
    sp.add_argument("--methods", type=_methods, default=S, help="comma-separated subset of " + ",".join(METHODS))
    sp.add_argument("--jobs", type=int, default=S, help="worker processes")

    sp = sub.add_parser("analyze", help="estimate treatment effects on a dataset")
    common(sp)
    dataset(sp)
    sp.add_argument("--methods", type=_methods, default=S, help="default BART- without external rows, else BART")
    sp.add_argument("--estimand", choices=("CATE", "PATE"), default=S)
    sp.add_argument("--level", type=float, default=S)
    sp.add_argument("--threshold", type=float, nargs="+", default=S, help="superiority thresholds")
    sp.add_argument("--points-out", dest="points_out", default=S, help="per-patient effect summaries")
    sp.add_argument("--standardize", action="store_true", default=S, help="standardize covariates for HLM/NNHM")

    sp = sub.add_parser("diagnose", help="permutation test of source vs outcome given covariates")
    common(sp, n_iter=500, n_trees=50)
    dataset(sp)
    sp.add_argument("--n-perm", dest="n_perm", type=int, default=S, help="permutations (default 100)")
    sp.add_argument("--jobs", type=int, default=S)
    return p


def resolve(ns: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    explicit = {k for k in vars(ns) if k != "config"}
    if getattr(ns, "config", None):
        try:
            loaded = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {ns.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise InputError("config must be a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
        explicit |= set(loaded)
    cfg.update({k: v for k, v in vars(ns).items() if k != "config"})
    if isinstance(cfg["methods"], str):
        cfg["methods"] = _methods(cfg["methods"])
    if isinstance(cfg["threshold"], (int, float)):
        cfg["threshold"] = [float(cfg["threshold"])]
    cfg["_explicit"] = explicit
    return cfg


def _mcmc(cfg, seed=None) -> McmcConfig:
    return McmcConfig(int(cfg["iters"]), int(cfg["burn"]), cfg["seed"] if seed is None else seed)


def _emit(text: str, path) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _load(cfg):
    if not cfg["data"]:
        raise InputError("--data is required")
    schema = cfg["schema"]
    if schema == "acupuncture":
        schema = ACUPUNCTURE_SCHEMA
    elif isinstance(schema, str):
        try:
            schema = json.loads(Path(schema).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read schema {cfg['schema']}: {exc}") from None
    ds = load_dataset(cfg["data"], schema)
    if cfg["synthesize"]:
        base = cfg["baseline"]
        base = int(base) if isinstance(base, int) or str(base).isdigit() else str(base)
        ext = synthesize_external(ds.trial_only(), int(cfg["n_ext"]), cfg["synthesize"], child_seed(cfg["seed"], 99), base)
        ds = ds.concat(ext)
    return ds


def cmd_simulate(cfg) -> int:
    spec = ScenarioSpec(cfg["scenario"], cfg["variant"], cfg["n_trial"], cfg["n_external"], cfg["seed"])
    gen = generate_scenario(spec)
    _emit(dataset_to_csv(gen.dataset), cfg["out"])
    return 0


def cmd_replicate(cfg) -> int:
    spec = ScenarioSpec(cfg["scenario"], cfg["variant"], cfg["n_trial"], cfg["n_external"], cfg["seed"])
    methods = cfg["methods"] or list(METHODS)

    def progress(done, total):
        log.info("replication %d/%d", done, total)

    report = run_replications(
        spec, methods, int(cfg["reps"]), _mcmc(cfg), int(cfg["seed"]), BartHyper(m=int(cfg["trees"])), cfg["jobs"], progress
    )
    _emit(report.to_csv(), cfg["out"])
    return 0


def _f(v: float) -> str:
    return f"{v:.6f}"


def cmd_analyze(cfg) -> int:
    ds = _load(cfg)
    has_external = ds.n_external_sources > 0
    methods = cfg["methods"] or (["BART"] if has_external else ["BART-"])
    level = float(cfg["level"])
    X = ds.trial_covariates
    hyper = BartHyper(m=int(cfg["trees"]))

    summary = io.StringIO()
    sw = csv.writer(summary, lineterminator="\n")
    sw.writerow(["Model", "Estimand", "Mean", "CI low", "CI high", "CI length", "Threshold", "Pr(>threshold)", "Reject"])
    points = io.StringIO()
    pw = csv.writer(points, lineterminator="\n")
    pw.writerow(["Model", "patient", "arm", "delta_mean", "ci_low", "ci_high"])
    trial_arm = ds.arm[ds.trial]

    for name in methods:
        seed = child_seed(cfg["seed"], 1 + METHODS.index(name))
        post = fit_method(name, ds, _mcmc(cfg, seed), hyper, bool(cfg["standardize"]))
        delta = conditional_effect_draws(post, X)
        if cfg["estimand"] == "PATE":
            est = pate_from_effects(delta, child_seed(cfg["seed"], 0), level)
        else:
            est = cate_from_effects(delta, level)
        for thr in cfg["threshold"]:
            t = test_superiority(est, thr, level)
            sw.writerow(
                [name, est.estimand, _f(est.mean), _f(est.ci_low), _f(est.ci_high), _f(est.ci_length), _f(thr), _f(t.posterior_prob), int(t.reject)]
            )
        a = (1.0 - level) / 2.0
        lo, hi = np.quantile(delta, [a, 1.0 - a], axis=0)
        mean = delta.mean(axis=0)
        for i in range(X.shape[0]):
            pw.writerow([name, i + 1, int(trial_arm[i]), _f(mean[i]), _f(lo[i]), _f(hi[i])])

    _emit(summary.getvalue(), cfg["out"])
    if cfg["points_out"]:
        _emit(points.getvalue(), cfg["points_out"])
    return 0


def cmd_diagnose(cfg) -> int:
    from .diagnostics import DIAG_HYPER, permutation_test_ci

    ds = _load(cfg)
    iters = cfg["iters"] if "iters" in cfg["_explicit"] else 500
    hyper = BartHyper(m=int(cfg["trees"])) if "trees" in cfg["_explicit"] else DIAG_HYPER
    res = permutation_test_ci(ds, int(cfg["n_perm"]), McmcConfig(int(iters), int(cfg["burn"])), cfg["seed"], hyper, cfg["jobs"])
    buf = io.StringIO()
    buf.write(f"# observed_r2={res.observed_r2:.6f} p_value={res.p_value:.4f} n_perm={res.n_perm}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["permutation", "null_r2"])
    for i, r in enumerate(res.null_r2):
        w.writerow([i + 1, _f(r)])
    _emit(buf.getvalue(), cfg["out"])
    return 0


COMMANDS = {"simulate": cmd_simulate, "replicate": cmd_replicate, "analyze": cmd_analyze, "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(message)s")
    mode = ns.mode
    del ns.mode, ns.verbose
    try:
        cfg = resolve(ns)
        return COMMANDS[mode](cfg)
    except InputError as exc:
        print(f"bartborrow {mode}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
