"""Plain-text serialization for demonstration logs, episode logs and tables.

Demonstration record format, one episode per file:

    # intention conservative          <- header, human-model logs only
    0 12.5 10.0 3.0 1.0 0.0 -0.35     <- t d_h d_r v_h v_r a_r a_h

All values are decimal text (``repr`` precision, so files round-trip
exactly). The a_r column carries the robot's longitudinal acceleration;
lane switches are encoded with the sentinels +9.0 (switch-left) and -9.0
(switch-right), which lie outside the feasible acceleration range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .core import (
    AccelBin,
    Belief,
    EpisodeLog,
    HumanAction,
    Intention,
    Outcome,
    ParseError,
    RobotAction,
    StepRecord,
    WorldState,
    discretize_accel,
)

SWITCH_LEFT_SENTINEL = 9.0
SWITCH_RIGHT_SENTINEL = -9.0


def encode_robot_action(action: RobotAction, accel: float) -> float:
    if action is RobotAction.SWITCH_LEFT:
        return SWITCH_LEFT_SENTINEL
    if action is RobotAction.SWITCH_RIGHT:
        return SWITCH_RIGHT_SENTINEL
    return accel


def decode_robot_action(raw: float) -> RobotAction:
    """Recover the discrete robot action from a logged a_r column value."""
    if raw == SWITCH_LEFT_SENTINEL:
        return RobotAction.SWITCH_LEFT
    if raw == SWITCH_RIGHT_SENTINEL:
        return RobotAction.SWITCH_RIGHT
    return RobotAction(int(discretize_accel(raw)))


def decode_robot_accel(raw: float, probe_accel: float = 2.0) -> float:
    """Effective acceleration a logged robot action contributes to history.

    Switch sentinels map to ``probe_accel``: a lane change reads as an
    assertive (accelerate-like) move to the other driver.
    """
    if raw in (SWITCH_LEFT_SENTINEL, SWITCH_RIGHT_SENTINEL):
        return probe_accel
    return raw


@dataclass(frozen=True)
class DemoStep:
    """One recorded step: world state plus both agents' controls."""

    t: int
    state: WorldState
    a_r_raw: float
    a_h: float

    @property
    def robot_action(self) -> RobotAction:
        return decode_robot_action(self.a_r_raw)

    def robot_accel(self, probe_accel: float = 2.0) -> float:
        return decode_robot_accel(self.a_r_raw, probe_accel)


@dataclass(frozen=True)
class DemoEpisode:
    """An episode of demonstration data; ``intention`` is present only in
    human-model logs (the expert log carries no label)."""

    intention: Intention | None
    steps: tuple[DemoStep, ...]


def write_demo_episode(path: str | Path, episode: DemoEpisode, with_intention: bool) -> None:
    lines = []
    if with_intention:
        if episode.intention is None:
            raise ValueError("cannot write an intention header without a label")
        lines.append(f"# intention {episode.intention.value}")
    for s in episode.steps:
        x = s.state
        lines.append(f"{s.t} {x.d_h!r} {x.d_r!r} {x.v_h!r} {x.v_r!r} {s.a_r_raw!r} {s.a_h!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_demo_episode(path: str | Path) -> DemoEpisode:
    path = Path(path)
    intention = None
    steps = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "intention":
                try:
                    intention = Intention(parts[1])
                except ValueError:
                    raise ParseError(f"unknown intention {parts[1]!r}", str(path), lineno)
            continue
        fields = line.split()
        if len(fields) != 7:
            raise ParseError(f"expected 7 fields, got {len(fields)}", str(path), lineno)
        try:
            t = int(fields[0])
            vals = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise ParseError(f"bad numeric field: {exc}", str(path), lineno)
        try:
            state = WorldState(*vals[:4])
        except ValueError as exc:
            raise ParseError(str(exc), str(path), lineno)
        steps.append(DemoStep(t, state, vals[4], vals[5]))
    if not steps:
        raise ParseError("empty demonstration file", str(path), 1)
    return DemoEpisode(intention, tuple(steps))


def write_demo_set(
    directory: str | Path, episodes: Sequence[DemoEpisode], prefix: str, with_intention: bool
) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, ep in enumerate(episodes):
        p = directory / f"{prefix}_{i:03d}.txt"
        write_demo_episode(p, ep, with_intention)
        paths.append(p)
    return paths


def read_demo_set(directory: str | Path, prefix: str) -> list[DemoEpisode]:
    directory = Path(directory)
    paths = sorted(directory.glob(f"{prefix}_*.txt"))
    if not paths:
        raise ParseError(f"no {prefix}_*.txt files found", str(directory))
    return [read_demo_episode(p) for p in paths]


def demo_sets_from_episode_log(log: EpisodeLog, scenario_accel: float) -> tuple[DemoEpisode, DemoEpisode]:
    """Project an episode log onto the two demonstration record shapes."""
    steps = tuple(
        DemoStep(
            r.t,
            r.state,
            encode_robot_action(r.robot_action, _longitudinal_accel(r.robot_action, scenario_accel)),
            r.human_accel,
        )
        for r in log.records
    )
    return DemoEpisode(log.intention, steps), DemoEpisode(None, steps)


def _longitudinal_accel(action: RobotAction, accel_mag: float) -> float:
    if action is RobotAction.ACCELERATE:
        return accel_mag
    if action is RobotAction.DECELERATE:
        return -accel_mag
    return 0.0


# --- episode logs -----------------------------------------------------------


def write_episode_log(path: str | Path, log: EpisodeLog, scenario_accel: float = 2.0) -> None:
    lines = [
        "# episode v1",
        f"# scenario {log.scenario}",
        f"# policy {log.policy}",
        f"# intention {log.intention.value}",
        f"# outcome {log.outcome.value} {log.steps_to_goal}",
        "# columns t d_h d_r v_h v_r a_r a_h p_conservative tmtc",
    ]
    for r in log.records:
        x = r.state
        a_r = encode_robot_action(r.robot_action, _longitudinal_accel(r.robot_action, scenario_accel))
        lines.append(
            f"{r.t} {x.d_h!r} {x.d_r!r} {x.v_h!r} {x.v_r!r} {a_r!r} {r.human_accel!r} "
            f"{r.belief.p_conservative!r} {r.tmtc!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_episode_log(path: str | Path) -> EpisodeLog:
    path = Path(path)
    meta: dict[str, str] = {}
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split(None, 1)
            if len(parts) == 2:
                meta[parts[0]] = parts[1]
            continue
        fields = line.split()
        if len(fields) != 9:
            raise ParseError(f"expected 9 fields, got {len(fields)}", str(path), lineno)
        try:
            t = int(fields[0])
            vals = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise ParseError(f"bad numeric field: {exc}", str(path), lineno)
        records.append(
            StepRecord(
                t,
                WorldState(*vals[:4]),
                decode_robot_action(vals[4]),
                vals[5],
                Belief(vals[6]),
                vals[7],
            )
        )
    try:
        outcome_field, steps_field = meta["outcome"].split()
        return EpisodeLog(
            scenario=meta["scenario"],
            policy=meta["policy"],
            intention=Intention(meta["intention"]),
            outcome=Outcome(outcome_field),
            steps_to_goal=int(steps_field),
            records=tuple(records),
        )
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad or missing episode header: {exc}", str(path))


# --- flat tables ------------------------------------------------------------


def write_table(path: str | Path, header: dict[str, str], rows: Iterable[Sequence[float]]) -> None:
    """Write a flat table keyed by DiscreteIndex ordinal (first column)."""
    lines = [f"# {k} {v}" for k, v in header.items()]
    for row in rows:
        lines.append(" ".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path: str | Path) -> tuple[dict[str, str], list[list[float]]]:
    path = Path(path)
    header: dict[str, str] = {}
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split(None, 1)
            if len(parts) == 2:
                header[parts[0]] = parts[1]
            continue
        try:
            rows.append([float(f) for f in line.split()])
        except ValueError as exc:
            raise ParseError(f"bad numeric field: {exc}", str(path), lineno)
    return header, rows
