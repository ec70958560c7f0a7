"""Configuration-driven command line entry point.

Subcommands map one-to-one onto library operations:

  gen         draw a synthetic landscape and save it as .npz
  diagnose    count-dispersion diagnostics for user-superposition traffic
  solve       first-price bid for one exponential-market opportunity
  tune        budget pacing on an exponential landscape
  experiment  full grid sweep (profit_ratio, conversion_ratio, poisson_check)

Every run reads a JSON config (--config), optionally overridden by --seed,
and writes its outputs plus the resolved config under --out. Exit codes:
0 success, 1 usage or config error (nothing partially written), 2 solver or
pacing non-convergence (tables are still written, rows flagged).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import experiment_harness as harness
from .bid_optimizer import (
    ExpMarketOpportunity,
    check_uniqueness_conditions,
    fpa_gap,
    solve_fpa_exponential,
    tune_multiplier,
    write_tuning_trace,
)
from .experiment_harness import _atomic_write

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def _configure_logging() -> None:
    level_name = os.environ.get("AUCTIONFLOW_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_json_config(path) -> dict:
    if not os.path.exists(path):
        raise ValueError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(
                f"config {path} is not valid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from exc
    if not isinstance(doc, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    return doc


_REQUIRED = object()


def _take(doc: dict, schema: dict, context: str) -> dict:
    """Resolve doc against {field: default}; _REQUIRED marks required fields."""
    unknown = set(doc) - set(schema)
    if unknown:
        raise ValueError(f"unknown {context} fields: {sorted(unknown)}")
    resolved = {}
    for field, default in schema.items():
        if field in doc:
            resolved[field] = doc[field]
        elif default is _REQUIRED:
            raise ValueError(f"{context} config is missing required field {field!r}")
        else:
            resolved[field] = default
    return resolved


def _write_resolved_config(doc: dict, out_dir: str, name: str) -> None:
    path = os.path.join(out_dir, name)
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    logger.info("resolved config written to %s", path)


def _cmd_gen(doc: dict, args, out_dir: str) -> int:
    kind = doc.get("kind")
    if kind == "discrete":
        cfg = _take(
            doc,
            {"kind": _REQUIRED, "n": 20, "N": 10000, "alpha_dep": 0.0, "seed": 0},
            "gen",
        )
        if args.seed is not None:
            cfg["seed"] = args.seed
        land = harness.generate_discrete_landscape(
            int(cfg["n"]), int(cfg["N"]), float(cfg["alpha_dep"]), int(cfg["seed"])
        )
    elif kind == "exponential":
        cfg = _take(
            doc,
            {
                "kind": _REQUIRED,
                "N": 10000,
                "logdelta_mean": 0.0,
                "logdelta_sd": 0.0,
                "gamma_as_rate": False,
                "seed": 0,
            },
            "gen",
        )
        if args.seed is not None:
            cfg["seed"] = args.seed
        land = harness.generate_exponential_landscape(
            int(cfg["N"]),
            float(cfg["logdelta_mean"]),
            float(cfg["logdelta_sd"]),
            int(cfg["seed"]),
            bool(cfg["gamma_as_rate"]),
        )
    else:
        raise ValueError("gen config must set kind to 'discrete' or 'exponential'")
    path = os.path.join(out_dir, "landscape.npz")
    harness.save_landscape(land, path)
    _write_resolved_config(cfg, out_dir, "gen_config.json")
    print(path)
    return EXIT_OK


def _build_opportunity(cfg: dict) -> ExpMarketOpportunity:
    p, lam = float(cfg["p"]), float(cfg["lam"])
    lam1, delta = cfg["lam1"], cfg["delta"]
    if lam1 is not None and delta is not None:
        raise ValueError("set at most one of lam1 and delta")
    if delta is not None:
        return ExpMarketOpportunity.from_delta(p, lam, float(delta))
    if lam1 is None:
        lam1 = lam  # conversion rate defaults to the market rate
    return ExpMarketOpportunity.from_rates(p, lam, float(lam1))


def _cmd_solve(doc: dict, args, out_dir: str) -> int:
    cfg = _take(
        doc,
        {"p": _REQUIRED, "lam": _REQUIRED, "lam1": None, "delta": None, "multiplier": _REQUIRED},
        "solve",
    )
    opp = _build_opportunity(cfg)
    multiplier = float(cfg["multiplier"])
    try:
        bid = solve_fpa_exponential(opp, multiplier)
    except RuntimeError as exc:
        print(f"solve did not converge: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    unique = check_uniqueness_conditions(opp, 1.0 / multiplier)
    result = {
        "bid": bid,
        "residual_gap": fpa_gap(opp, multiplier, bid),
        "uniqueness_satisfied": unique.satisfied,
        "uniqueness_clause": unique.clause,
    }
    _atomic_write(
        os.path.join(out_dir, "solve_result.json"),
        json.dumps(result, indent=2, sort_keys=True) + "\n",
    )
    _write_resolved_config(cfg, out_dir, "solve_config.json")
    print(repr(bid))
    return EXIT_OK


def _tune_landscape(cfg: dict, args):
    inline = cfg["landscape"]
    path = cfg["landscape_path"]
    if (inline is None) == (path is None):
        raise ValueError("tune config must set exactly one of landscape and landscape_path")
    if path is not None:
        land = harness.load_landscape(path)
        if not isinstance(land, harness.ExpLandscape):
            raise ValueError("tune requires an exponential landscape")
        return land, {"landscape_path": str(path)}
    gen = _take(
        dict(inline),
        {"N": 10000, "logdelta_mean": 0.0, "logdelta_sd": 0.0, "gamma_as_rate": False, "seed": 0},
        "tune.landscape",
    )
    if args.seed is not None:
        gen["seed"] = args.seed
    land = harness.generate_exponential_landscape(
        int(gen["N"]),
        float(gen["logdelta_mean"]),
        float(gen["logdelta_sd"]),
        int(gen["seed"]),
        bool(gen["gamma_as_rate"]),
    )
    return land, {"landscape": gen}


def _cmd_tune(doc: dict, args, out_dir: str) -> int:
    cfg = _take(
        doc,
        {
            "budget": _REQUIRED,
            "landscape": None,
            "landscape_path": None,
            "C0": 1.0,
            "delta": 1e-3,
            "max_iter": 200,
            "dependency_aware": True,
            "damping": 1.0,
        },
        "tune",
    )
    land, land_doc = _tune_landscape(cfg, args)
    state, conversions = tune_multiplier(
        land,
        float(cfg["budget"]),
        C0=float(cfg["C0"]),
        delta=float(cfg["delta"]),
        max_iter=int(cfg["max_iter"]),
        dependency_aware=bool(cfg["dependency_aware"]),
        damping=float(cfg["damping"]),
    )
    result = {
        "multiplier": state.C,
        "spend_to_budget_ratio": state.r,
        "iterations": state.iterations,
        "converged": state.converged,
        "expected_conversions": conversions,
    }
    _atomic_write(
        os.path.join(out_dir, "tune_result.json"),
        json.dumps(result, indent=2, sort_keys=True) + "\n",
    )
    write_tuning_trace(state.trajectory, os.path.join(out_dir, "tuning_trace.csv"))
    resolved = {k: v for k, v in cfg.items() if k not in ("landscape", "landscape_path")}
    resolved.update(land_doc)
    _write_resolved_config(resolved, out_dir, "tune_config.json")
    print(repr(state.C))
    if not state.converged:
        print("tuning did not converge; results written with converged=false", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_diagnose(doc: dict, args, out_dir: str) -> int:
    doc = dict(doc)
    doc.setdefault("kind", "poisson_check")
    if doc["kind"] != "poisson_check":
        raise ValueError("diagnose config kind must be poisson_check")
    config = harness.ExperimentConfig.from_dict(doc)
    if args.seed is not None:
        config = harness.ExperimentConfig.from_dict({**config.to_dict(), "seeds": [args.seed]})
    rows, qq = harness.run_poisson_check_experiment(config)
    table = os.path.join(out_dir, "diagnostics.csv")
    harness.write_poisson_csv(rows, table)
    harness.write_plot_data(harness.qq_plot_triples(qq), os.path.join(out_dir, "diagnostics_qq.csv"))
    _write_resolved_config(config.to_dict(), out_dir, "diagnose_config.json")
    print(table)
    return EXIT_OK


def _cmd_experiment(doc: dict, args, out_dir: str) -> int:
    config = harness.ExperimentConfig.from_dict(doc)
    if args.seed is not None:
        config = harness.ExperimentConfig.from_dict({**config.to_dict(), "seeds": [args.seed]})
    table = config.output_path or f"{config.kind}.csv"
    if not os.path.isabs(table):
        table = os.path.join(out_dir, table)
    status = EXIT_OK
    if config.kind == "profit_ratio":
        rows = harness.run_profit_ratio_experiment(config, jobs=args.jobs)
        harness.write_profit_csv(rows, table)
    elif config.kind == "conversion_ratio":
        rows = harness.run_conversion_ratio_experiment(config, jobs=args.jobs)
        harness.write_conversion_csv(rows, table)
        bad = sum(not r.converged for r in rows)
        if bad:
            print(
                f"{bad} of {len(rows)} pacing cells did not converge; "
                "rows carry ratio=nan",
                file=sys.stderr,
            )
            status = EXIT_NOT_CONVERGED
    else:
        rows, qq = harness.run_poisson_check_experiment(config)
        harness.write_poisson_csv(rows, table)
        harness.write_plot_data(
            harness.qq_plot_triples(qq), os.path.join(out_dir, f"{config.kind}_qq.csv")
        )
    _write_resolved_config(config.to_dict(), out_dir, f"{config.kind}_config.json")
    print(table)
    return status


_HANDLERS = {
    "gen": _cmd_gen,
    "diagnose": _cmd_diagnose,
    "solve": _cmd_solve,
    "tune": _cmd_tune,
    "experiment": _cmd_experiment,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="auctionflow",
        description="Auction simulation and bid-optimization toolkit",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    specs = {
        "gen": "generate a synthetic landscape",
        "diagnose": "Poisson-ness diagnostics for superposition traffic",
        "solve": "solve the first-price bid equation for one opportunity",
        "tune": "tune the pacing multiplier against a budget",
        "experiment": "run a full experiment grid",
    }
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a JSON config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed(s)")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--jobs", type=int, default=1, help="parallel grid cells")
    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse reserves status 2 for usage errors; remap so that 2 always
        # means non-convergence for scripted callers
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    try:
        doc = _load_json_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        return _HANDLERS[args.subcommand](doc, args, args.out)
    except (ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
