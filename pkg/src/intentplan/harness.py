"""Batch evaluation, metric aggregation, the exploration-weight sweep and
report export.

Episodes are driven by per-cell seed streams derived from one master seed;
initial conditions (intention, starting state) are shared across policies
so comparisons run on common scenarios, and two evaluations with the same
master seed produce byte-identical reports.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats as scipy_stats

from .config import AppConfig, SuiteConfig, preset_scenario
from .core import (
    ConfigError,
    EpisodeLog,
    Intention,
    Outcome,
    ScenarioConfig,
    ScenarioKind,
)
from .guided import SafeProbTable
from .human_model import PolicyTable, SyntheticDriverParams
from .planner import (
    Planner,
    PlannerConfig,
    PolicyKind,
    TabularModel,
    compile_driving_model,
    make_controller,
)
from .simulator import run_episode

#: Near-miss rate observed in ordinary traffic; plotted as the reference
#: line when judging how dangerous a policy is.
DAILY_TRAFFIC_NEAR_MISS_RATE = 0.35

NEAR_MISS_TMTC_SECONDS = 1.0

_METRIC_NAMES = ("mean_time_to_goal", "sem_time_to_goal", "near_miss_rate", "timeout_rate", "runs")


@dataclass(frozen=True)
class CellMetrics:
    """Aggregates for one (scenario, variant, policy) cell."""

    scenario: ScenarioKind
    variant: str
    policy: PolicyKind
    runs: int
    mean_time_to_goal: float
    sem_time_to_goal: float
    near_miss_rate: float
    timeout_rate: float
    near_miss_count: int
    times: tuple[float, ...] = field(repr=False)
    belief_conservative: tuple[float, ...] = field(repr=False)  # mean per step
    belief_correct: tuple[float, ...] = field(repr=False)
    goal_distance: tuple[float, ...] = field(repr=False)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.scenario.value, self.variant, self.policy.value)


@dataclass(frozen=True)
class Comparison:
    """One-sided significance test between two cells."""

    scenario: ScenarioKind
    variant: str
    metric: str
    lhs: PolicyKind
    rhs: PolicyKind
    lhs_value: float
    rhs_value: float
    p_value: float
    significant: bool


@dataclass(frozen=True)
class MetricsReport:
    master_seed: int
    runs: int
    beta: float
    cells: tuple[CellMetrics, ...]
    comparisons: tuple[Comparison, ...]
    flags: tuple[str, ...]

    def cell(self, scenario: ScenarioKind, variant: str, policy: PolicyKind) -> CellMetrics:
        for c in self.cells:
            if c.scenario is scenario and c.variant == variant and c.policy is policy:
                return c
        raise KeyError((scenario, variant, policy))


def one_sided_proportion_test(k1: int, n1: int, k2: int, n2: int) -> float:
    """Pooled two-proportion z test of H1: p1 < p2; returns the p-value."""
    if n1 == 0 or n2 == 0:
        return 1.0
    p1, p2 = k1 / n1, k2 / n2
    pooled = (k1 + k2) / (n1 + n2)
    denom = pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)
    if denom <= 0.0:
        return 1.0
    z = (p1 - p2) / math.sqrt(denom)
    return float(scipy_stats.norm.cdf(z))


def one_sided_welch_test(x: Sequence[float], y: Sequence[float]) -> float:
    """Welch's t test of H1: mean(x) < mean(y); returns the p-value."""
    res = scipy_stats.ttest_ind(list(x), list(y), equal_var=False, alternative="less")
    p = float(res.pvalue)
    return 1.0 if math.isnan(p) else p


def _episode_seed(master: int, si: int, vi: int, ei: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=master, spawn_key=(si, vi, ei, stream))
    return np.random.default_rng(ss)


def _aggregate(
    logs: Sequence[EpisodeLog],
    scenario: ScenarioKind,
    variant: str,
    policy: PolicyKind,
    dt: float,
    belief_horizon: int,
) -> CellMetrics:
    times = tuple(log.steps_to_goal * dt for log in logs)
    near = sum(1 for log in logs if log.min_tmtc < NEAR_MISS_TMTC_SECONDS)
    timeouts = sum(1 for log in logs if log.outcome is Outcome.TIMEOUT)
    n = len(logs)
    mean_t = float(np.mean(times))
    sem_t = float(np.std(times, ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    cons = np.zeros(belief_horizon)
    correct = np.zeros(belief_horizon)
    dist = np.zeros(belief_horizon)
    for log in logs:
        records = log.records
        for t in range(belief_horizon):
            rec = records[min(t, len(records) - 1)]  # carry the final step forward
            p_c = rec.belief.p_conservative
            cons[t] += p_c
            correct[t] += p_c if log.intention is Intention.CONSERVATIVE else 1.0 - p_c
            dist[t] += rec.state.d_r
    cons /= n
    correct /= n
    dist /= n
    return CellMetrics(
        scenario=scenario,
        variant=variant,
        policy=policy,
        runs=n,
        mean_time_to_goal=mean_t,
        sem_time_to_goal=sem_t,
        near_miss_rate=near / n,
        timeout_rate=timeouts / n,
        near_miss_count=near,
        times=times,
        belief_conservative=tuple(cons),
        belief_correct=tuple(correct),
        goal_distance=tuple(dist),
    )


def evaluate(
    app: AppConfig,
    table: PolicyTable,
    safe: SafeProbTable,
    *,
    suite: SuiteConfig | None = None,
    runs: int | None = None,
    collect_logs: bool = False,
) -> MetricsReport | tuple[MetricsReport, dict]:
    """Run the full (scenario, variant, policy) grid of seeded episodes.

    The near-miss classification is computed from the logged per-step
    safety metric, never from planner internals.
    """
    suite = suite or app.suite
    if runs is not None:
        suite = replace(suite, runs=runs)
    if table is None or safe is None:
        raise ConfigError("evaluation requires both the policy and safe-probability tables")

    pcfg = app.planner
    cells: list[CellMetrics] = []
    all_logs: dict[tuple[str, str, str], list[EpisodeLog]] = {}
    for si, kind in enumerate(suite.scenarios):
        models: dict[bool, TabularModel] = {}
        for vi, variant in enumerate(suite.variants):
            unsafe = variant == "unsafe"
            scn = preset_scenario(kind, unsafe)
            if unsafe not in models:
                models[unsafe] = compile_driving_model(scn, table, pcfg)
            model = models[unsafe]
            for policy in suite.policies:
                planner = None
                if policy is not PolicyKind.HEURISTIC:
                    planner = Planner(policy, scn, pcfg, table, safe=safe, model=model)
                logs = []
                for ei in range(suite.runs):
                    controller = (
                        make_controller(policy, scn, pcfg, table, safe)
                        if policy is PolicyKind.HEURISTIC
                        else planner
                    )
                    log = run_episode(
                        scn,
                        controller,
                        app.synthetic,
                        _episode_seed(suite.master_seed, si, vi, ei, 1),
                        policy_name=policy.value,
                        table=table,
                        init_rng=_episode_seed(suite.master_seed, si, vi, ei, 0),
                    )
                    logs.append(log)
                cells.append(
                    _aggregate(logs, kind, variant, policy, scn.dt, suite.belief_horizon)
                )
                if collect_logs:
                    all_logs[(kind.value, variant, policy.value)] = logs

    report = MetricsReport(
        master_seed=suite.master_seed,
        runs=suite.runs,
        beta=pcfg.beta,
        cells=tuple(cells),
        comparisons=tuple(_comparisons(cells, suite)),
        flags=tuple(_flags(cells, suite)),
    )
    if collect_logs:
        return report, all_logs
    return report


def _cells_by_key(cells: Sequence[CellMetrics]) -> dict[tuple, CellMetrics]:
    return {(c.scenario, c.variant, c.policy): c for c in cells}


def _comparisons(cells: Sequence[CellMetrics], suite: SuiteConfig) -> list[Comparison]:
    by = _cells_by_key(cells)
    out: list[Comparison] = []
    for kind in suite.scenarios:
        if "unsafe" in suite.variants:
            iplg = by.get((kind, "unsafe", PolicyKind.IPLG))
            ipl = by.get((kind, "unsafe", PolicyKind.IPL))
            if iplg and ipl:
                p = one_sided_proportion_test(
                    iplg.near_miss_count, iplg.runs, ipl.near_miss_count, ipl.runs
                )
                out.append(
                    Comparison(
                        kind, "unsafe", "near_miss_rate", PolicyKind.IPLG, PolicyKind.IPL,
                        iplg.near_miss_rate, ipl.near_miss_rate, p, p < 0.05,
                    )
                )
        if "safe" in suite.variants:
            myopic = by.get((kind, "safe", PolicyKind.MYOPIC))
            for pol in (PolicyKind.IPL, PolicyKind.IPLG):
                cell = by.get((kind, "safe", pol))
                if cell and myopic:
                    p = one_sided_welch_test(cell.times, myopic.times)
                    out.append(
                        Comparison(
                            kind, "safe", "mean_time_to_goal", pol, PolicyKind.MYOPIC,
                            cell.mean_time_to_goal, myopic.mean_time_to_goal, p, p < 0.05,
                        )
                    )
    return out


def _flags(cells: Sequence[CellMetrics], suite: SuiteConfig) -> list[str]:
    flags = []
    by = _cells_by_key(cells)
    ipl = by.get((ScenarioKind.INTERSECTION, "unsafe", PolicyKind.IPL))
    if ipl is not None and ipl.near_miss_rate <= DAILY_TRAFFIC_NEAR_MISS_RATE:
        flags.append(
            "deviation: unguided exploration stayed at or below the daily-traffic "
            f"near-miss reference ({ipl.near_miss_rate:.3f} <= {DAILY_TRAFFIC_NEAR_MISS_RATE})"
            " in the unsafe intersection scenario"
        )
    for c in cells:
        if c.timeout_rate > 0:
            flags.append(
                f"timeouts: {c.scenario.value}/{c.variant}/{c.policy.value} "
                f"had {c.timeout_rate:.1%} timeout episodes (counted at the timeout duration)"
            )
    return flags


# --- exploration-weight sweep ----------------------------------------------------


DEFAULT_BETA_GRID = (0.1, 0.3, 1.0, 3.0, 10.0)


@dataclass(frozen=True)
class SweepRow:
    beta: float
    mean_time_to_goal: float
    near_miss_rate: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    selected_beta: float


def sweep_beta(
    app: AppConfig,
    table: PolicyTable,
    safe: SafeProbTable,
    grid: Sequence[float] = DEFAULT_BETA_GRID,
    runs: int | None = None,
) -> SweepResult:
    """Evaluate the unguided explorer per exploration weight on the safe
    scenarios and select the grid argmin of mean time-to-goal. The selected
    weight is then used by both the plain and the guided policy."""
    if not grid:
        raise ConfigError("beta grid must be non-empty")
    suite = replace(
        app.suite,
        variants=("safe",),
        policies=(PolicyKind.IPL,),
        runs=runs if runs is not None else app.suite.runs,
    )
    rows = []
    for beta in grid:
        swept = replace(app, planner=replace(app.planner, beta=beta))
        report = evaluate(swept, table, safe, suite=suite)
        times = [t for c in report.cells for t in c.times]
        near = sum(c.near_miss_count for c in report.cells)
        n = sum(c.runs for c in report.cells)
        rows.append(SweepRow(beta, float(np.mean(times)), near / n))
    best = min(range(len(rows)), key=lambda i: rows[i].mean_time_to_goal)
    return SweepResult(tuple(rows), rows[best].beta)


# --- export -----------------------------------------------------------------------


def _metric_rows(report: MetricsReport) -> list[list]:
    rows = []
    for c in report.cells:
        values = {
            "mean_time_to_goal": c.mean_time_to_goal,
            "sem_time_to_goal": c.sem_time_to_goal,
            "near_miss_rate": c.near_miss_rate,
            "timeout_rate": c.timeout_rate,
            "runs": float(c.runs),
        }
        for metric in _METRIC_NAMES:
            rows.append([c.scenario.value, c.variant, c.policy.value, metric, repr(values[metric])])
    return rows


def export_report(report: MetricsReport, path: str | Path, format: str = "csv") -> Path:
    """Write a stable-schema report file plus a per-step belief companion.

    CSV: one row per (scenario, variant, policy, metric). JSON: the full
    structure with metadata. The companion ``<stem>_trajectories.csv``
    carries mean belief and goal distance per step.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["scenario", "variant", "policy", "metric", "value"])
        writer.writerows(_metric_rows(report))
        path.write_text(buf.getvalue())
    elif format == "json":
        payload = {
            "metadata": {
                "master_seed": report.master_seed,
                "runs": report.runs,
                "beta": report.beta,
                "near_miss_tmtc_seconds": NEAR_MISS_TMTC_SECONDS,
                "daily_traffic_near_miss_rate": DAILY_TRAFFIC_NEAR_MISS_RATE,
            },
            "cells": [
                {
                    "scenario": c.scenario.value,
                    "variant": c.variant,
                    "policy": c.policy.value,
                    "runs": c.runs,
                    "mean_time_to_goal": c.mean_time_to_goal,
                    "sem_time_to_goal": c.sem_time_to_goal,
                    "near_miss_rate": c.near_miss_rate,
                    "timeout_rate": c.timeout_rate,
                }
                for c in report.cells
            ],
            "comparisons": [
                {
                    "scenario": cmp.scenario.value,
                    "variant": cmp.variant,
                    "metric": cmp.metric,
                    "lhs": cmp.lhs.value,
                    "rhs": cmp.rhs.value,
                    "lhs_value": cmp.lhs_value,
                    "rhs_value": cmp.rhs_value,
                    "p_value": cmp.p_value,
                    "significant": cmp.significant,
                }
                for cmp in report.comparisons
            ],
            "flags": list(report.flags),
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        raise ConfigError(f"unknown export format {format!r}")

    companion = path.with_name(path.stem + "_trajectories.csv")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["scenario", "variant", "policy", "step", "mean_p_conservative", "mean_p_correct", "mean_d_goal"]
    )
    for c in report.cells:
        for t, (pc, pk, dg) in enumerate(
            zip(c.belief_conservative, c.belief_correct, c.goal_distance)
        ):
            writer.writerow([c.scenario.value, c.variant, c.policy.value, t, repr(pc), repr(pk), repr(dg)])
    companion.write_text(buf.getvalue())
    return path


def read_report_csv(path: str | Path) -> dict[tuple[str, str, str, str], float]:
    """Read back a CSV report into {(scenario, variant, policy, metric): value}."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["scenario"], row["variant"], row["policy"], row["metric"])
            out[key] = float(row["value"])
    return out
