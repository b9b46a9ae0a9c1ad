"""Safe-probability table learned from expert demonstrations.

Each (discretized state, robot action) pair carries a Beta posterior over
"the expert would do this here". The prior (alpha=0.05, beta=5) starts every
pair close to unsafe; each demonstrated occurrence increments a count n and
the posterior mean (alpha + n) / (alpha + beta + n) drifts toward 1. The
planner multiplies its exploration bonus by this probability, so probing is
suppressed exactly where the expert never probed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    LONGITUDINAL_ACTIONS,
    N_STATE_CELLS,
    SWITCH_ACTIONS,
    InvalidActionError,
    RobotAction,
    WorldState,
    discretize_state,
)
from .dataio import DemoEpisode, read_table, write_table

PRIOR_ALPHA = 0.05
PRIOR_BETA = 5.0


@dataclass(frozen=True)
class SafeProbTable:
    """Beta-posterior safe probability per (state cell, robot action).

    Keys use only the four state bins (81 cells): expert logs carry no
    history column, so the table matches the recorded data exactly.
    """

    alpha: float
    beta: float
    counts: np.ndarray = field(repr=False)
    actions: tuple[RobotAction, ...] = LONGITUDINAL_ACTIONS

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("Beta prior parameters must be strictly positive")
        expected = (N_STATE_CELLS, len(self.actions))
        if self.counts.shape != expected:
            raise ValueError(f"counts shape {self.counts.shape}, expected {expected}")
        if np.any(self.counts < 0):
            raise ValueError("demonstration counts cannot be negative")

    def column(self, action: RobotAction) -> int:
        try:
            return self.actions.index(action)
        except ValueError:
            raise InvalidActionError(f"{action.name} has no column in this table")

    def probabilities(self) -> np.ndarray:
        """Posterior mean safe probability for every cell and action."""
        return (self.alpha + self.counts) / (self.alpha + self.beta + self.counts)

    @property
    def phi(self) -> float:
        """Minimum safe probability over the whole table; strictly positive."""
        return float(self.probabilities().min())

    @property
    def total_count(self) -> int:
        return int(self.counts.sum())


def init_safe_table(include_switch: bool = False) -> SafeProbTable:
    """Fresh table at the prior: every pair close to unsafe, none at zero."""
    actions = LONGITUDINAL_ACTIONS + (SWITCH_ACTIONS if include_switch else ())
    counts = np.zeros((N_STATE_CELLS, len(actions)), dtype=np.int64)
    return SafeProbTable(PRIOR_ALPHA, PRIOR_BETA, counts, actions)


def update_safe_table(table: SafeProbTable, demos: Sequence[DemoEpisode]) -> SafeProbTable:
    """Count every demonstrated (state, action) occurrence into a new table.

    Counting is order-independent: permuting episodes or records yields the
    identical table.
    """
    counts = table.counts.copy()
    for ep in demos:
        for step in ep.steps:
            cell = discretize_state(step.state).ordinal
            counts[cell, table.column(step.robot_action)] += 1
    return SafeProbTable(table.alpha, table.beta, counts, table.actions)


def safe_prob(table: SafeProbTable, x: WorldState, action: RobotAction) -> float:
    """Posterior safe probability of taking ``action`` at the cell of ``x``."""
    cell = discretize_state(x).ordinal
    col = table.column(action)
    n = table.counts[cell, col]
    return float((table.alpha + n) / (table.alpha + table.beta + n))


def write_safe_table(path: str | Path, table: SafeProbTable) -> None:
    header = {
        "table": "safe-prob",
        "alpha": repr(table.alpha),
        "beta": repr(table.beta),
        "actions": ",".join(a.name.lower() for a in table.actions),
        "columns": "state_ordinal " + " ".join(f"n_{a.name.lower()}" for a in table.actions),
    }
    rows = [[i, *map(int, table.counts[i])] for i in range(N_STATE_CELLS)]
    write_table(path, header, rows)


def read_safe_table(path: str | Path) -> SafeProbTable:
    header, rows = read_table(path)
    actions = tuple(RobotAction[name.upper()] for name in header["actions"].split(","))
    counts = np.zeros((N_STATE_CELLS, len(actions)), dtype=np.int64)
    for row in rows:
        counts[int(row[0])] = [int(v) for v in row[1:]]
    return SafeProbTable(float(header["alpha"]), float(header["beta"]), counts, actions)
