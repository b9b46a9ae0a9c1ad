"""Command-line surface.

Subcommands mirror the offline/online pipeline: ``demo-gen`` records
demonstrations, ``fit`` trains the behavior model and runs the
history-length study, ``table`` compiles the policy and safe-probability
tables, ``simulate``/``evaluate`` run episodes, ``sweep-beta`` picks the
exploration weight and ``verify-optimism`` checks the guided value against
the exact adaptive oracle on the bundled toy instance.

Exit codes: 0 success, 2 configuration error, 3 parse error, 4 numeric
error, 5 planning-budget overrun (only with --strict-budget), 1 otherwise.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .core import ConfigError, Intention, NumericError, ParseError, ScenarioKind
from . import dataio
from .guided import init_safe_table, read_safe_table, update_safe_table, write_safe_table
from .human_model import (
    GPModel,
    gp_fit,
    history_length_study,
    build_policy_table,
    generate_demonstrations,
)
from .harness import (
    DEFAULT_BETA_GRID,
    evaluate,
    export_report,
    sweep_beta,
)
from .planner import PolicyKind, make_toy_instance, verify_optimism
from .simulator import run_episode
from .tables import (
    fit_models_from_demos,
    load_models,
    load_policy_table,
    save_models,
    write_policy_table,
)

EX_OK = 0
EX_ERROR = 1
EX_CONFIG = 2
EX_PARSE = 3
EX_NUMERIC = 4
EX_BUDGET = 5


def _load_app(args) -> cfgmod.AppConfig:
    if getattr(args, "config", None):
        return cfgmod.parse_config(args.config)
    return cfgmod.default_config()


def _cmd_demo_gen(args) -> int:
    app = _load_app(args)
    out = Path(args.out)
    rng = np.random.default_rng(args.seed)
    kinds = [ScenarioKind(k) for k in args.scenarios.split(",")]
    for kind in kinds:
        scn = cfgmod.preset_scenario(kind, unsafe=False)
        labeled, unlabeled = generate_demonstrations(
            scn, args.episodes, rng, params=app.synthetic
        )
        tag = kind.value.replace("-", "_")
        dataio.write_demo_set(out, labeled, f"dh_{tag}", with_intention=True)
        dataio.write_demo_set(out, unlabeled, f"dg_{tag}", with_intention=False)
        print(f"{kind.value}: wrote {len(labeled)} labeled + {len(unlabeled)} expert episodes")
    return EX_OK


def _cmd_fit(args) -> int:
    app = _load_app(args)
    demos = _read_labeled_demos(Path(args.demos))
    models = fit_models_from_demos(demos, app.gp, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_models(out / "gp_models.npz", models)
    print(f"fit {len(models)} models on k={app.gp.history_k}")

    if args.study:
        k_values = [int(k) for k in args.study.split(",")]
        subset = _study_subset(demos, app.gp.study_episodes, args.seed)
        rows = history_length_study(subset, k_values, app.gp.hyper, seed=args.seed)
        study_path = out / "history_study.csv"
        with open(study_path, "w") as fh:
            fh.write("k,train_mse,test_mse\n")
            for row in rows:
                fh.write(f"{row.k},{row.train_mse!r},{row.test_mse!r}\n")
        for row in rows:
            print(f"k={row.k}: train MSE {row.train_mse:.4f}, test MSE {row.test_mse:.4f}")
    return EX_OK


def _read_labeled_demos(directory: Path):
    demos = []
    for prefix in ("dh_lane_switch", "dh_intersection", "dh_lane_merge", "dh"):
        try:
            demos.extend(dataio.read_demo_set(directory, prefix))
        except ParseError:
            continue
    if not demos:
        raise ParseError("no labeled demonstration files found", str(directory))
    return demos


def _read_expert_demos(directory: Path):
    demos = []
    for prefix in ("dg_lane_switch", "dg_intersection", "dg_lane_merge", "dg"):
        try:
            demos.extend(dataio.read_demo_set(directory, prefix))
        except ParseError:
            continue
    if not demos:
        raise ParseError("no expert demonstration files found", str(directory))
    return demos


def _study_subset(demos, per_intention: int, seed: int):
    rng = np.random.default_rng(seed)
    by_intent = {}
    for ep in demos:
        by_intent.setdefault(ep.intention, []).append(ep)
    subset = []
    for eps in by_intent.values():
        order = rng.permutation(len(eps))[:per_intention]
        subset.extend(eps[i] for i in order)
    return subset


def _cmd_table(args) -> int:
    app = _load_app(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    models = load_models(Path(args.models) / "gp_models.npz")
    table = build_policy_table(models, app.gp.history_k)
    write_policy_table(out / "policy_table.txt", table)
    print(f"policy table: {table.n_entries} entries")

    expert = _read_expert_demos(Path(args.demos))
    safe = update_safe_table(init_safe_table(include_switch=True), expert)
    write_safe_table(out / "safe_table.txt", safe)
    print(f"safe table: {safe.total_count} demonstrated pairs, phi={safe.phi:.5f}")
    return EX_OK


def _cmd_simulate(args) -> int:
    app = _load_app(args)
    scn = cfgmod.load_preset(args.scenario)
    table = load_policy_table(Path(args.tables) / "policy_table.txt")
    safe = read_safe_table(Path(args.tables) / "safe_table.txt")
    kind = PolicyKind(args.policy)
    from .planner import make_controller

    controller = make_controller(kind, scn, app.planner, table, safe)
    rng = np.random.default_rng(args.seed)
    log = run_episode(
        scn, controller, app.synthetic, rng, policy_name=kind.value, table=table
    )
    for rec in log.records:
        x = rec.state
        print(
            f"t={rec.t:3d} d_h={x.d_h:6.2f} d_r={x.d_r:6.2f} v_h={x.v_h:5.2f} v_r={x.v_r:5.2f} "
            f"a_r={rec.robot_action.name:<11} a_h={rec.human_accel:+5.2f} "
            f"P(cons)={rec.belief.p_conservative:5.3f} tmtc={rec.tmtc:6.2f}"
        )
    print(
        f"intention={log.intention.value} outcome={log.outcome.value} "
        f"steps={log.steps_to_goal} near_miss={log.near_miss}"
    )
    if args.out:
        dataio.write_episode_log(args.out, log, scn.accel_mag)
    budget_hits = getattr(controller, "budget_hits", 0)
    if args.strict_budget and budget_hits:
        print(f"planning budget exceeded on {budget_hits} steps", file=sys.stderr)
        return EX_BUDGET
    return EX_OK


def _cmd_evaluate(args) -> int:
    app = _load_app(args)
    table = load_policy_table(Path(args.tables) / "policy_table.txt")
    safe = read_safe_table(Path(args.tables) / "safe_table.txt")
    report = evaluate(app, table, safe, runs=args.runs)
    path = export_report(report, Path(args.out), format=args.format)
    for c in report.cells:
        print(
            f"{c.scenario.value:>12}/{c.variant:<6} {c.policy.value:<9} "
            f"T(goal)={c.mean_time_to_goal:6.2f}s +-{c.sem_time_to_goal:4.2f} "
            f"P(near-miss)={c.near_miss_rate:5.3f}"
        )
    for cmp in report.comparisons:
        marker = "significant" if cmp.significant else "not significant"
        print(
            f"test {cmp.scenario.value}/{cmp.variant} {cmp.metric}: "
            f"{cmp.lhs.value}={cmp.lhs_value:.3f} < {cmp.rhs.value}={cmp.rhs_value:.3f}? "
            f"p={cmp.p_value:.4f} ({marker})"
        )
    for flag in report.flags:
        print(f"flag: {flag}")
    print(f"report written to {path}")
    return EX_OK


def _cmd_sweep_beta(args) -> int:
    app = _load_app(args)
    table = load_policy_table(Path(args.tables) / "policy_table.txt")
    safe = read_safe_table(Path(args.tables) / "safe_table.txt")
    grid = [float(b) for b in args.grid.split(",")] if args.grid else list(DEFAULT_BETA_GRID)
    result = sweep_beta(app, table, safe, grid=grid, runs=args.runs)
    for row in result.rows:
        print(
            f"beta={row.beta:<6g} mean T(goal)={row.mean_time_to_goal:6.2f}s "
            f"P(near-miss)={row.near_miss_rate:5.3f}"
        )
    print(f"selected beta = {result.selected_beta}")
    if args.out:
        Path(args.out).write_text(
            json.dumps(
                {
                    "selected_beta": result.selected_beta,
                    "rows": [
                        {
                            "beta": r.beta,
                            "mean_time_to_goal": r.mean_time_to_goal,
                            "near_miss_rate": r.near_miss_rate,
                        }
                        for r in result.rows
                    ],
                },
                indent=2,
            )
            + "\n"
        )
    return EX_OK


def _cmd_verify_optimism(args) -> int:
    model, pg, gamma = make_toy_instance()
    report = verify_optimism(
        model,
        pg,
        gamma,
        horizon=args.horizon,
        epsilon=args.epsilon,
        n_beliefs=args.beliefs,
    )
    print(report.summary())
    if args.out:
        Path(args.out).write_text(
            json.dumps(
                {
                    "beta": report.beta,
                    "phi": report.phi,
                    "epsilon": report.epsilon,
                    "horizon": report.horizon,
                    "gamma": report.gamma,
                    "n_checked": report.n_checked,
                    "min_slack": report.min_slack,
                    "violations": [list(v) for v in report.violations],
                    "ok": report.ok,
                },
                indent=2,
            )
            + "\n"
        )
    return EX_OK if report.ok else EX_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intentplan",
        description="Intention-aware planning with demonstration-guided exploration",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo-gen", help="record synthetic demonstration logs")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int, default=160)
    p.add_argument("--scenarios", default="lane-switch,intersection,lane-merge")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_demo_gen)

    p = sub.add_parser("fit", help="fit the behavior model, optionally study history length")
    p.add_argument("--config")
    p.add_argument("--demos", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--study", default="", help="comma list of k values, e.g. 0,1,2,3")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("table", help="compile the policy and safe-probability tables")
    p.add_argument("--config")
    p.add_argument("--models", required=True)
    p.add_argument("--demos", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_table)

    p = sub.add_parser("simulate", help="run one verbose episode")
    p.add_argument("--config")
    p.add_argument("--scenario", required=True, help="preset name, e.g. intersection-safe")
    p.add_argument("--policy", default="ipl", choices=[k.value for k in PolicyKind])
    p.add_argument("--tables", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="")
    p.add_argument("--strict-budget", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("evaluate", help="run the batch suite and export the report")
    p.add_argument("--config")
    p.add_argument("--tables", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="csv", choices=["csv", "json"])
    p.add_argument("--runs", type=int, default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep-beta", help="select the exploration weight on safe scenarios")
    p.add_argument("--config")
    p.add_argument("--tables", required=True)
    p.add_argument("--grid", default="")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--out", default="")
    p.set_defaults(func=_cmd_sweep_beta)

    p = sub.add_parser("verify-optimism", help="check the guided value against the exact oracle")
    p.add_argument("--horizon", type=int, default=3)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--beliefs", type=int, default=21)
    p.add_argument("--out", default="")
    p.set_defaults(func=_cmd_verify_optimism)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EX_CONFIG
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EX_PARSE
    except (NumericError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EX_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EX_ERROR


if __name__ == "__main__":
    sys.exit(main())
