"""Dev loop: build the pipeline once, run mini-evaluations across cells."""

import sys
import time
from dataclasses import replace

import numpy as np

from intentplan.config import preset_scenario, default_config
from intentplan.core import ScenarioKind, Outcome
from intentplan.human_model import generate_demonstrations, build_policy_table
from intentplan.tables import fit_models_from_demos
from intentplan.guided import init_safe_table, update_safe_table
from intentplan.planner import compile_driving_model, Planner, PolicyKind, make_controller
from intentplan.simulator import run_episode


def build_pipeline(app, demo_eps=28, seed=0):
    rng = np.random.default_rng(seed)
    demos, expert_demos = [], []
    for kind in ScenarioKind:
        for unsafe in (False, True):
            dh, dg = generate_demonstrations(
                preset_scenario(kind, unsafe), demo_eps, rng, params=app.synthetic
            )
            demos.extend(dh)
            expert_demos.extend(dg)
    models = fit_models_from_demos(demos, app.gp, seed=0)
    table = build_policy_table(models, app.gp.history_k)
    safe = update_safe_table(init_safe_table(include_switch=True), expert_demos)
    return demos, expert_demos, table, safe


def cellrun(app, table, safe, kind, unsafe, policy, n=60, model=None):
    scn = preset_scenario(kind, unsafe)
    pcfg = app.planner
    if model is None:
        model = compile_driving_model(scn, table, pcfg)
    planner = None if policy is PolicyKind.HEURISTIC else Planner(
        policy, scn, pcfg, table, safe=safe, model=model
    )
    times, nm, tout, beliefs10 = [], 0, 0, []
    for ei in range(n):
        ctl = make_controller(policy, scn, pcfg, table, safe) if planner is None else planner
        log = run_episode(
            scn, ctl, app.synthetic, np.random.default_rng((ei, 1)),
            policy_name=policy.value, table=table,
            init_rng=np.random.default_rng((ei, 0)),
        )
        times.append(log.steps_to_goal * scn.dt)
        nm += log.near_miss
        tout += log.outcome is Outcome.TIMEOUT
        recs = log.records
        from intentplan.core import Intention
        r = recs[min(10, len(recs) - 1)]
        pc = r.belief.p_conservative
        beliefs10.append(pc if log.intention is Intention.CONSERVATIVE else 1 - pc)
    return np.mean(times), nm / n, tout, np.mean(beliefs10), model


def main():
    app = default_config()
    t0 = time.time()
    demos, expert_demos, table, safe = build_pipeline(app)
    print(f"pipeline: {time.time()-t0:.1f}s  phi={safe.phi:.5f}")
    kinds = [ScenarioKind(k) for k in sys.argv[1:]] if len(sys.argv) > 1 else list(ScenarioKind)
    for kind in kinds:
        for unsafe in (False, True):
            model = None
            for pol in (PolicyKind.MYOPIC, PolicyKind.HEURISTIC, PolicyKind.IPL, PolicyKind.IPLG):
                t0 = time.time()
                t, nm, to, b10, model = cellrun(app, table, safe, kind, unsafe, pol, model=model)
                print(
                    f"{kind.value:<13}/{'unsafe' if unsafe else 'safe':<6} {pol.value:<9} "
                    f"T={t:6.2f}s nm={nm:5.2f} to={to} P(correct)@10={b10:.3f} ({time.time()-t0:.1f}s)"
                )


if __name__ == "__main__":
    main()
