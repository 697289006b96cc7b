"""Command-line harness: solve menus, audit feasibility, simulate, compare.

Exit codes: 0 success, 2 config/validation error, 3 infeasible menu,
4 runtime failure.  All outputs are deterministic functions of the
config file and its seeds, so reruns are byte-identical.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .contracts import ContractMenu, solve_optimal_menu, verify_feasibility
from .learning import run_scheme_comparison
from .simulation import run_round

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_RUNTIME = 4


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.from_json(args.config)
    return config.with_overrides(
        seed=getattr(args, "seed_override", None),
        mode=getattr(args, "mode", None),
        out_dir=getattr(args, "out", None),
    )


def _out_dir(config: ExperimentConfig) -> Path:
    path = Path(config.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_solve(args: argparse.Namespace) -> int:
    """Solve the optimal menu and write it with its feasibility report."""
    config = _load_config(args)
    profile = config.build_profile()
    curve = config.build_curve()
    menu = solve_optimal_menu(profile, curve, config.benchmarks)
    report = verify_feasibility(profile, menu)
    out = _out_dir(config)
    menu.to_json(out / "menu.json")
    report.to_json(out / "feasibility.json")
    print(f"menu: {out / 'menu.json'}")
    print(f"feasibility: {out / 'feasibility.json'}")
    print(f"feasible: {report.feasible}; IR binding at types {list(report.ir_binding)}")
    if not report.feasible:
        for line in report.violations():
            print(f"  violated: {line}")
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    """Check an externally supplied menu against the config's profile."""
    config = _load_config(args)
    menu = ContractMenu.from_json(args.menu)
    profile = config.build_profile()
    report = verify_feasibility(profile, menu)
    out = _out_dir(config)
    report.to_json(out / "audit.json")
    print(f"audit: {out / 'audit.json'}")
    print(f"feasible: {report.feasible}")
    for entry in report.to_dict()["ir"]:
        print(
            f"  IR type {entry['index']}: slack {entry['slack']:.6g}"
            f"{' (binding)' if entry['binding'] else ''}"
        )
    for entry in report.to_dict()["ic"]:
        if entry["binding"] or entry["slack"] < -report.tolerance:
            state = "binding" if entry["binding"] else "VIOLATED"
            print(f"  IC {entry['i']} vs {entry['j']}: slack {entry['slack']:.6g} ({state})")
    if not report.feasible:
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    """Run one contracting round per seed and write ledger + per-client files."""
    config = _load_config(args)
    profile = config.build_profile()
    curve = config.build_curve()
    menu = solve_optimal_menu(profile, curve, config.benchmarks)
    round_mode = "analytic" if config.mode == "analytic" else "stochastic"
    out = _out_dir(config)
    for seed in config.seeds:
        outcome = run_round(profile, menu, curve, config.population, round_mode, seed)
        outcome.to_json(out / f"round_seed{seed}.json")
        outcome.clients_to_csv(out / f"round_seed{seed}.csv")
        mean_utility = outcome.realized_server_utility / len(outcome.clients)
        print(
            f"seed {seed}: mode {round_mode}, participants "
            f"{sum(1 for cl in outcome.clients if not cl.rejected)}/{config.population}, "
            f"mean server utility {mean_utility:.6g}, ties {len(outcome.ties)}"
        )
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    """Run the three-scheme comparison and write CSV + JSON summaries."""
    config = _load_config(args)
    if config.mode != "ml":
        raise ConfigError("mode: compare requires mode='ml'")
    report = run_scheme_comparison(config)
    out = _out_dir(config)
    report.rounds_to_csv(out / "comparison.csv")
    report.clients_to_csv(out / "clients.csv")
    report.summary_to_json(out / "summary.json")
    orderings = report.orderings()
    print(f"comparison: {out / 'comparison.csv'}")
    for c_key, entry in orderings["per_c"].items():
        means = ", ".join(f"{s}={v:.4f}" for s, v in entry["means"].items())
        print(f"c={c_key}: {means}")
        for claim in ("contract_ge_fedavg", "fedavg_ge_flat"):
            if claim in entry:
                print(f"  {claim}: {entry[claim]}")
    if "contract_small_c_ge_large_c" in orderings:
        print(f"contract_small_c_ge_large_c: {orderings['contract_small_c_ge_large_c']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedpact",
        description="Contract menus and coverage-aware aggregation for federated rounds",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed-override", dest="seed_override", type=int, default=None,
                       help="replace the config's seed list with this single seed")
        p.add_argument("--mode", choices=("analytic", "ml"), default=None,
                       help="override the config's mode")

    p_solve = sub.add_parser("solve", help="solve the optimal menu for a config")
    common(p_solve)
    p_solve.set_defaults(fn=cmd_solve)

    p_audit = sub.add_parser("audit", help="audit a menu file against a config's profile")
    p_audit.add_argument("menu", help="menu JSON to audit")
    common(p_audit)
    p_audit.set_defaults(fn=cmd_audit)

    p_sim = sub.add_parser("simulate", help="run contracting rounds per seed")
    common(p_sim)
    p_sim.set_defaults(fn=cmd_simulate)

    p_cmp = sub.add_parser("compare", help="run the aggregation-scheme comparison")
    common(p_cmp)
    p_cmp.set_defaults(fn=cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
