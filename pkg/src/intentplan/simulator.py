"""1-D longitudinal interaction dynamics along fixed paths.

Both vehicles control only speed; distances are measured along each path to
the shared conflict point. Crossing-path scenarios (intersection,
lane-merge) use a conflict-zone occupancy model for the time measured to
collision; the lane-switch scenario uses same-lane closing time once the
robot is in (or moving into) the human's lane, and the conflict point there
is the merge location.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .core import (
    Belief,
    BoundedHistory,
    EpisodeLog,
    HumanAction,
    Intention,
    InvalidActionError,
    Outcome,
    RobotAction,
    SWITCH_ACTIONS,
    ScenarioConfig,
    ScenarioKind,
    StepRecord,
    WorldState,
    pad_history,
)
from .human_model import GPModel, SyntheticDriverParams, feature_vector, synth_human_step
from .planner import belief_update


# --- kinematics ---------------------------------------------------------------


def step_dynamics(
    x: WorldState, a_r: float, a_h: float, dt: float, v_max: float = 15.0
) -> WorldState:
    """Semi-implicit update of both vehicles; distances clamp at zero
    (crossing is detected separately on the signed positions)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    v_h = min(max(x.v_h + a_h * dt, 0.0), v_max)
    v_r = min(max(x.v_r + a_r * dt, 0.0), v_max)
    return WorldState(max(x.d_h - v_h * dt, 0.0), max(x.d_r - v_r * dt, 0.0), v_h, v_r)


def zone_interval(d: float, v: float, length: float) -> tuple[float, float] | None:
    """Time window during which a vehicle occupies the conflict zone.

    ``d`` is the signed remaining distance to the zone start; the vehicle
    occupies the zone until it has traveled ``length`` past it. Returns
    None if the vehicle has already cleared the zone or can never reach it.
    """
    if d + length <= 0.0:
        return None
    if d <= 0.0:
        entry = 0.0
    elif v <= 0.0:
        return None
    else:
        entry = d / v
    exit_ = math.inf if v <= 0.0 else (d + length) / v
    return entry, exit_


def time_to_mutual_collision(
    d_h: float, v_h: float, d_r: float, v_r: float, length: float
) -> float:
    """Time until both vehicles occupy the conflict zone simultaneously,
    assuming both hold their current speed; infinity if that never happens."""
    a = zone_interval(d_h, v_h, length)
    b = zone_interval(d_r, v_r, length)
    if a is None or b is None:
        return math.inf
    start = max(a[0], b[0])
    end = min(a[1], b[1])
    return start if start < end else math.inf


def zone_tmtc_vec(
    d_h: np.ndarray, v_h: np.ndarray, d_r: np.ndarray, v_r: np.ndarray, length: float
) -> np.ndarray:
    """Vectorized :func:`time_to_mutual_collision`."""
    with np.errstate(divide="ignore", invalid="ignore"):
        entry_h = np.where(d_h <= 0.0, 0.0, np.where(v_h > 0.0, d_h / v_h, np.inf))
        exit_h = np.where(v_h > 0.0, (d_h + length) / v_h, np.inf)
        entry_r = np.where(d_r <= 0.0, 0.0, np.where(v_r > 0.0, d_r / v_r, np.inf))
        exit_r = np.where(v_r > 0.0, (d_r + length) / v_r, np.inf)
    gone_h = d_h + length <= 0.0
    gone_r = d_r + length <= 0.0
    start = np.maximum(entry_h, entry_r)
    end = np.minimum(exit_h, exit_r)
    tm = np.where(start < end, start, np.inf)
    return np.where(gone_h | gone_r | np.isinf(start), np.inf, tm)


def rear_end_ttc(s_h: float, v_h: float, s_r: float, v_r: float, length: float) -> float:
    """Same-lane closing time between the two cars (positions measured as
    distance remaining to the conflict point, so the smaller value leads)."""
    separation = abs(s_h - s_r) - length
    if separation <= 0.0:
        return 0.0
    if s_r > s_h:  # robot behind
        closing = v_r - v_h
    else:
        closing = v_h - v_r
    if closing <= 0.0:
        return math.inf
    return separation / closing


def rear_end_ttc_vec(
    s_h: np.ndarray, v_h: np.ndarray, s_r: np.ndarray, v_r: np.ndarray, length: float
) -> np.ndarray:
    separation = np.abs(s_h - s_r) - length
    closing = np.where(s_r > s_h, v_r - v_h, v_h - v_r)
    with np.errstate(divide="ignore", invalid="ignore"):
        ttc = np.where(closing > 0.0, separation / closing, np.inf)
    return np.where(separation <= 0.0, 0.0, ttc)


def cut_in_ahead_ttc(s_h: float, v_h: float, s_r: float, v_r: float, length: float) -> float:
    """Closing time onto a robot that is ahead of the human; infinite when
    the robot is abreast or behind. This is the danger a driver perceives
    from a car that might move (or has moved) into the lane ahead."""
    lead = s_h - s_r - length  # how far the robot leads the human
    if lead <= 0.0:
        return math.inf
    closing = v_h - v_r
    if closing <= 0.0:
        return math.inf
    return lead / closing


# --- simulation state -----------------------------------------------------------


@dataclass(frozen=True)
class SimState:
    """Signed internal state; negative positions mean the conflict point
    has been crossed. ``in_conflict_lane`` is True whenever the robot's
    path shares the conflict point with the human's (always, except in the
    lane-switch scenario before the robot moves over)."""

    s_h: float
    s_r: float
    v_h: float
    v_r: float
    in_conflict_lane: bool
    switch_remaining: int = 0
    switch_target_conflict: bool = True

    @property
    def switching(self) -> bool:
        return self.switch_remaining > 0

    @property
    def conflict_active(self) -> bool:
        if self.switching:
            return self.switch_target_conflict
        return self.in_conflict_lane

    def world_state(self) -> WorldState:
        return WorldState(max(self.s_h, 0.0), max(self.s_r, 0.0), self.v_h, self.v_r)


def apply_lane_switch(state: SimState, action: RobotAction, scn: ScenarioConfig) -> SimState:
    """Begin a lane change; the conflict geometry of the target lane applies
    for the whole maneuver."""
    if scn.kind is not ScenarioKind.LANE_SWITCH:
        raise InvalidActionError(f"{action.name} is only available in lane-switch scenarios")
    if action not in SWITCH_ACTIONS:
        raise InvalidActionError(f"{action.name} is not a lane switch")
    if state.switching:
        raise InvalidActionError("a lane change is already in progress")
    entering = action is RobotAction.SWITCH_LEFT
    if entering and state.in_conflict_lane:
        raise InvalidActionError("no lane to the left: already in the target lane")
    if not entering and not state.in_conflict_lane:
        raise InvalidActionError("no lane to the right: already in the start lane")
    return replace(
        state,
        switch_remaining=scn.lane_change_steps,
        switch_target_conflict=entering,
    )


def step_sim(state: SimState, a_r: float, a_h: float, scn: ScenarioConfig) -> tuple[SimState, bool]:
    """Advance one step; returns the new state and whether a lane change
    completed on this step."""
    v_h = min(max(state.v_h + a_h * scn.dt, 0.0), scn.v_max)
    v_r = min(max(state.v_r + a_r * scn.dt, 0.0), scn.v_max)
    s_h = state.s_h - v_h * scn.dt
    s_r = state.s_r - v_r * scn.dt
    completed = False
    remaining = state.switch_remaining
    in_lane = state.in_conflict_lane
    if remaining > 0:
        remaining -= 1
        if remaining == 0:
            in_lane = state.switch_target_conflict
            completed = True
    return (
        replace(
            state,
            s_h=s_h,
            s_r=s_r,
            v_h=v_h,
            v_r=v_r,
            in_conflict_lane=in_lane,
            switch_remaining=remaining,
        ),
        completed,
    )


def metric_tmtc(state: SimState, scn: ScenarioConfig) -> float:
    """Safety metric at a state: infinite while the robot occupies a
    non-conflicting lane or either vehicle has cleared the zone."""
    if scn.kind is ScenarioKind.LANE_SWITCH:
        if not state.conflict_active:
            return math.inf
        return rear_end_ttc(state.s_h, state.v_h, state.s_r, state.v_r, scn.vehicle_length)
    return time_to_mutual_collision(state.s_h, state.v_h, state.s_r, state.v_r, scn.vehicle_length)


def danger_tmtc(state: SimState, scn: ScenarioConfig) -> float:
    """The human driver's danger signal: conflict treated as live no matter
    which lane the robot is currently in. In the lane-switch scenario only
    a robot ahead reads as danger (one does not yield to a car behind)."""
    if scn.kind is ScenarioKind.LANE_SWITCH:
        return cut_in_ahead_ttc(state.s_h, state.v_h, state.s_r, state.v_r, scn.vehicle_length)
    return time_to_mutual_collision(state.s_h, state.v_h, state.s_r, state.v_r, scn.vehicle_length)


@dataclass(frozen=True)
class SimContext:
    """Per-step observation handed to controllers alongside (belief, x, h)."""

    t: int
    scenario: ScenarioKind
    human_crossed: bool
    robot_crossed: bool
    can_switch: bool
    switching: bool
    tmtc_if_go: float


def _tmtc_if_go(state: SimState, scn: ScenarioConfig) -> float:
    """Risk the scripted expert anticipates from going now: the symmetric
    in-lane closing time for a lane change, the zone conflict time (a short
    acceleration burst ahead) for crossing scenarios."""
    if scn.kind is ScenarioKind.LANE_SWITCH:
        return rear_end_ttc(state.s_h, state.v_h, state.s_r, state.v_r, scn.vehicle_length)
    boosted = replace(state, v_r=min(state.v_r + 2.0, scn.v_max))
    return danger_tmtc(boosted, scn)


def sample_initial_state(scn: ScenarioConfig, rng: np.random.Generator) -> SimState:
    """Draw the initial state from the scenario ranges, rejecting starts
    that are already closer than ``min_initial_tmtc`` to a collision."""
    for _ in range(200):
        state = SimState(
            s_h=rng.uniform(*scn.d_h),
            s_r=rng.uniform(*scn.d_r),
            v_h=rng.uniform(*scn.v_h),
            v_r=rng.uniform(*scn.v_r),
            in_conflict_lane=scn.kind is not ScenarioKind.LANE_SWITCH,
        )
        margin = danger_tmtc(state, scn)
        if scn.kind is ScenarioKind.LANE_SWITCH:
            margin = min(
                margin,
                rear_end_ttc(state.s_h, state.v_h, state.s_r, state.v_r, scn.vehicle_length),
            )
        if margin >= scn.min_initial_tmtc:
            return state
    return state


def _human_accel(
    human,
    x: WorldState,
    history: BoundedHistory,
    intention: Intention,
    rng: np.random.Generator,
    tmtc: float,
    scn: ScenarioConfig,
) -> HumanAction:
    if isinstance(human, SyntheticDriverParams):
        return synth_human_step(
            human, x, history, intention, rng, tmtc=tmtc, zone_length=scn.vehicle_length
        )
    if isinstance(human, Mapping):
        model: GPModel = human[intention]
        h = pad_history(history, model.k)
        mean, std = model.predict_batch(feature_vector(x, h)[None, :])
        accel = float(mean[0] + std[0] * rng.standard_normal())
        return HumanAction(min(max(accel, -3.0), 3.0))
    raise TypeError(f"unsupported human model: {type(human)!r}")


def run_episode(
    scn: ScenarioConfig,
    controller,
    human,
    rng: np.random.Generator,
    *,
    policy_name: str = "",
    table=None,
    intention: Intention | None = None,
    init_rng: np.random.Generator | None = None,
) -> EpisodeLog:
    """Closed-loop episode: the controller picks robot actions from the
    tracked belief, the human model reacts, and every step is logged with
    its safety metric. Ends at the scenario goal or at the step timeout.

    ``init_rng`` (defaults to ``rng``) draws the intention and initial
    state, so policies can be compared on common starting conditions.
    """
    init_rng = init_rng or rng
    if intention is None:
        intention = Intention.CONSERVATIVE if init_rng.random() < 0.5 else Intention.AGGRESSIVE
    sim = sample_initial_state(scn, init_rng)

    k = table.k if table is not None else 2
    raw_history: list[tuple[float, float]] = []
    belief = Belief(0.5)
    records: list[StepRecord] = []
    outcome = Outcome.TIMEOUT
    steps_to_goal = scn.timeout_steps

    for t in range(scn.timeout_steps):
        x = sim.world_state()
        h = pad_history(raw_history, k)
        tm = metric_tmtc(sim, scn)
        ctx = SimContext(
            t=t,
            scenario=scn.kind,
            human_crossed=sim.s_h <= -scn.vehicle_length,
            robot_crossed=sim.s_r <= -scn.vehicle_length,
            can_switch=(
                scn.kind is ScenarioKind.LANE_SWITCH
                and not sim.in_conflict_lane
                and not sim.switching
            ),
            switching=sim.switching,
            tmtc_if_go=_tmtc_if_go(sim, scn),
        )
        if sim.switching:
            a_r = RobotAction.KEEP  # committed to the maneuver
        else:
            a_r = controller.select_action(belief, x, h, ctx)
            if a_r in SWITCH_ACTIONS:
                sim = apply_lane_switch(sim, a_r, scn)

        human_act = _human_accel(human, x, h, intention, rng, danger_tmtc(sim, scn), scn)
        records.append(StepRecord(t, x, a_r, human_act.accel, belief, tm))

        if table is not None:
            belief = belief_update(belief, x, h, human_act, table)
        sim, completed_switch = step_sim(
            sim, scn.action_accel(a_r), human_act.accel, scn
        )
        raw_history.append((scn.probe_accel(a_r), human_act.accel))

        if scn.kind is ScenarioKind.LANE_SWITCH:
            reached = completed_switch and sim.in_conflict_lane
        else:
            reached = sim.s_r <= -scn.vehicle_length
        if reached:
            outcome = Outcome.GOAL_REACHED
            steps_to_goal = t + 1
            break

    return EpisodeLog(
        scenario=scn.name,
        policy=policy_name,
        intention=intention,
        outcome=outcome,
        steps_to_goal=steps_to_goal,
        records=tuple(records),
    )


def replay_episode(log: EpisodeLog, scn: ScenarioConfig) -> bool:
    """Re-simulate from the logged initial state and actions; True iff every
    logged world state is reproduced exactly."""
    first = log.records[0].state
    sim = SimState(
        s_h=first.d_h,
        s_r=first.d_r,
        v_h=first.v_h,
        v_r=first.v_r,
        in_conflict_lane=scn.kind is not ScenarioKind.LANE_SWITCH,
    )
    for i, rec in enumerate(log.records):
        if sim.world_state() != rec.state:
            return False
        a_r = rec.robot_action
        if a_r in SWITCH_ACTIONS and not sim.switching:
            sim = apply_lane_switch(sim, a_r, scn)
        sim, _ = step_sim(sim, scn.action_accel(a_r), rec.human_accel, scn)
    return True
