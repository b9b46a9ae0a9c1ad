"""Shared domain types: world state, intentions, actions, histories and the
discretization that maps continuous driving quantities onto table bins."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterator, Sequence


class InvalidStateError(ValueError):
    """A world-state quantity is negative or non-finite."""


class InvalidActionError(ValueError):
    """An action value is non-finite or not allowed in the current scenario."""


class ConfigError(ValueError):
    """Inconsistent or incomplete configuration."""


class ParseError(ValueError):
    """A serialized record could not be parsed; carries file/line context."""

    def __init__(self, message: str, source: str = "", line: int | None = None):
        loc = f"{source}:{line}: " if line is not None else (f"{source}: " if source else "")
        super().__init__(loc + message)
        self.source = source
        self.line = line


class NumericError(ArithmeticError):
    """A numerical routine produced a non-finite or non-normalizable result."""


class Intention(Enum):
    CONSERVATIVE = "conservative"
    AGGRESSIVE = "aggressive"

    def other(self) -> "Intention":
        return Intention.AGGRESSIVE if self is Intention.CONSERVATIVE else Intention.CONSERVATIVE


#: Canonical ordering used for all per-intention arrays.
INTENTIONS = (Intention.CONSERVATIVE, Intention.AGGRESSIVE)


class RobotAction(IntEnum):
    """Discrete robot controls. Enum order is the deterministic tie-break order."""

    DECELERATE = 0
    KEEP = 1
    ACCELERATE = 2
    SWITCH_LEFT = 3
    SWITCH_RIGHT = 4


LONGITUDINAL_ACTIONS = (RobotAction.DECELERATE, RobotAction.KEEP, RobotAction.ACCELERATE)
SWITCH_ACTIONS = (RobotAction.SWITCH_LEFT, RobotAction.SWITCH_RIGHT)


class AccelBin(IntEnum):
    DECELERATE = 0
    KEEP = 1
    ACCELERATE = 2


# Bin boundaries. Distance/speed bins are half-open on the right; the keep
# bin is closed on both sides.
DISTANCE_EDGES = (5.0, 20.0)
SPEED_EDGES = (1.0, 5.0)
ACCEL_KEEP_BAND = 0.2

# Representative continuous value per bin (midpoints for bounded bins,
# fixed representatives for the unbounded ones).
DISTANCE_REPS = (2.5, 12.5, 30.0)
SPEED_REPS = (0.5, 3.0, 7.0)
ACCEL_REPS = (-2.0, 0.0, 2.0)

DISTANCE_BIN_NAMES = ("near", "middle", "far")
SPEED_BIN_NAMES = ("low", "middle", "high")

N_BINS = 3
N_STATE_CELLS = N_BINS ** 4


def _check_nonneg(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0.0:
        raise InvalidStateError(f"{name} must be finite and non-negative, got {value!r}")
    return value


def discretize_distance(d: float) -> int:
    """Map a distance in meters onto {0: near, 1: middle, 2: far}."""
    d = _check_nonneg(d, "distance")
    if d < DISTANCE_EDGES[0]:
        return 0
    if d < DISTANCE_EDGES[1]:
        return 1
    return 2


def discretize_speed(v: float) -> int:
    """Map a speed in m/s onto {0: low, 1: middle, 2: high}."""
    v = _check_nonneg(v, "speed")
    if v < SPEED_EDGES[0]:
        return 0
    if v < SPEED_EDGES[1]:
        return 1
    return 2


def discretize_accel(a: float) -> AccelBin:
    """Map an acceleration in m/s^2 onto the three accel bins.

    Decelerate is (-inf, -0.2), keep is the closed band [-0.2, 0.2],
    accelerate is (0.2, +inf).
    """
    a = float(a)
    if not math.isfinite(a):
        raise InvalidActionError(f"acceleration must be finite, got {a!r}")
    if a < -ACCEL_KEEP_BAND:
        return AccelBin.DECELERATE
    if a > ACCEL_KEEP_BAND:
        return AccelBin.ACCELERATE
    return AccelBin.KEEP


@dataclass(frozen=True)
class WorldState:
    """Continuous interaction state: distances to the potential colliding
    point and current speeds for the human-driven and robot cars."""

    d_h: float
    d_r: float
    v_h: float
    v_r: float

    def __post_init__(self):
        _check_nonneg(self.d_h, "d_h")
        _check_nonneg(self.d_r, "d_r")
        _check_nonneg(self.v_h, "v_h")
        _check_nonneg(self.v_r, "v_r")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.d_h, self.d_r, self.v_h, self.v_r)


@dataclass(frozen=True)
class StateBins:
    """The four discretized state axes (no history)."""

    d_h: int
    d_r: int
    v_h: int
    v_r: int

    @property
    def ordinal(self) -> int:
        return ((self.d_h * N_BINS + self.d_r) * N_BINS + self.v_h) * N_BINS + self.v_r

    @classmethod
    def from_ordinal(cls, ordinal: int) -> "StateBins":
        if not 0 <= ordinal < N_STATE_CELLS:
            raise ValueError(f"state ordinal out of range: {ordinal}")
        v_r = ordinal % N_BINS
        ordinal //= N_BINS
        v_h = ordinal % N_BINS
        ordinal //= N_BINS
        d_r = ordinal % N_BINS
        return cls(ordinal // N_BINS, d_r, v_h, v_r)


def discretize_state(x: WorldState) -> StateBins:
    """Discretize a world state onto the four state bins."""
    return StateBins(
        discretize_distance(x.d_h),
        discretize_distance(x.d_r),
        discretize_speed(x.v_h),
        discretize_speed(x.v_r),
    )


#: A bounded history is the last k (robot accel, human accel) pairs, oldest
#: first, zero-padded on the left when fewer than k steps have happened.
BoundedHistory = tuple[tuple[float, float], ...]


def pad_history(raw: Sequence[tuple[float, float]], k: int) -> BoundedHistory:
    """Return the last k action pairs of ``raw``, left-padded with (0, 0)."""
    if k < 0:
        raise ValueError(f"history length must be >= 0, got {k}")
    tail = [(float(a), float(b)) for a, b in raw[-k:]] if k > 0 else []
    pad = [(0.0, 0.0)] * (k - len(tail))
    return tuple(pad + tail)


@dataclass(frozen=True)
class Belief:
    """Belief over the latent intention; stores P(conservative)."""

    p_conservative: float

    def __post_init__(self):
        p = float(self.p_conservative)
        if not math.isfinite(p) or not 0.0 <= p <= 1.0:
            raise ValueError(f"p_conservative must be in [0, 1], got {p!r}")

    @property
    def p_aggressive(self) -> float:
        return 1.0 - self.p_conservative

    def p(self, intention: Intention) -> float:
        return self.p_conservative if intention is Intention.CONSERVATIVE else self.p_aggressive

    def as_tuple(self) -> tuple[float, float]:
        return (self.p_conservative, self.p_aggressive)


@dataclass(frozen=True)
class HumanAction:
    """Continuous human longitudinal acceleration with its derived bin."""

    accel: float

    def __post_init__(self):
        if not math.isfinite(float(self.accel)):
            raise InvalidActionError(f"human acceleration must be finite, got {self.accel!r}")

    @property
    def bin(self) -> AccelBin:
        return discretize_accel(self.accel)


@dataclass(frozen=True)
class DiscreteIndex:
    """Cell of the planning/policy table: four state bins plus the accel
    bins of the k most recent (robot, human) action pairs, oldest first.

    For k=2 the index space has exactly 3**8 = 6561 cells.
    """

    state: StateBins
    history: tuple[tuple[int, int], ...]

    @property
    def k(self) -> int:
        return len(self.history)

    @property
    def ordinal(self) -> int:
        o = self.state.ordinal
        for a_r, a_h in self.history:
            o = (o * N_BINS + a_r) * N_BINS + a_h
        return o

    @property
    def state_ordinal(self) -> int:
        return self.state.ordinal

    @classmethod
    def from_ordinal(cls, ordinal: int, k: int) -> "DiscreteIndex":
        if not 0 <= ordinal < n_cells(k):
            raise ValueError(f"ordinal out of range for k={k}: {ordinal}")
        digits = []
        for _ in range(2 * k):
            digits.append(ordinal % N_BINS)
            ordinal //= N_BINS
        digits.reverse()
        history = tuple((digits[i], digits[i + 1]) for i in range(0, 2 * k, 2))
        return cls(StateBins.from_ordinal(ordinal), history)

    @classmethod
    def from_state(cls, x: WorldState, history: BoundedHistory) -> "DiscreteIndex":
        bins = tuple(
            (int(discretize_accel(a_r)), int(discretize_accel(a_h))) for a_r, a_h in history
        )
        return cls(discretize_state(x), bins)

    def representative_state(self) -> WorldState:
        s = self.state
        return WorldState(
            DISTANCE_REPS[s.d_h], DISTANCE_REPS[s.d_r], SPEED_REPS[s.v_h], SPEED_REPS[s.v_r]
        )

    def representative_history(self) -> BoundedHistory:
        return tuple((ACCEL_REPS[a_r], ACCEL_REPS[a_h]) for a_r, a_h in self.history)


def n_cells(k: int) -> int:
    return N_BINS ** (4 + 2 * k)


def all_indices(k: int) -> Iterator[DiscreteIndex]:
    """Enumerate every DiscreteIndex in ordinal order."""
    for ordinal in range(n_cells(k)):
        yield DiscreteIndex.from_ordinal(ordinal, k)


class ScenarioKind(Enum):
    LANE_SWITCH = "lane-switch"
    INTERSECTION = "intersection"
    LANE_MERGE = "lane-merge"


class Outcome(Enum):
    GOAL_REACHED = "goal_reached"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class ScenarioConfig:
    """Geometry, kinematic limits and initial-state ranges for one scenario.

    ``d_h/d_r/v_h/v_r`` are (low, high) sampling ranges for the initial
    state. The collision zone is an interval of length ``vehicle_length``
    at the shared conflict point; a vehicle occupies it from the moment its
    remaining distance reaches zero until it has traveled a further
    ``vehicle_length`` meters.
    """

    kind: ScenarioKind
    unsafe: bool
    d_h: tuple[float, float]
    d_r: tuple[float, float]
    v_h: tuple[float, float]
    v_r: tuple[float, float]
    dt: float = 0.33
    vehicle_length: float = 4.0
    v_max: float = 15.0
    accel_mag: float = 2.0
    decel_mag: float = -2.0
    timeout_steps: int = 120
    lane_change_steps: int = 3
    min_initial_tmtc: float = 1.2

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.vehicle_length <= 0:
            raise ConfigError("vehicle_length must be positive")
        if self.accel_mag <= 0 or self.decel_mag >= 0:
            raise ConfigError("accel_mag must be > 0 and decel_mag < 0")
        for name in ("d_h", "d_r", "v_h", "v_r"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo < 0 or hi <= lo:
                raise ConfigError(f"initial range {name} must be non-degenerate, got ({lo}, {hi})")

    @property
    def name(self) -> str:
        return f"{self.kind.value}-{'unsafe' if self.unsafe else 'safe'}"

    def actions(self) -> tuple[RobotAction, ...]:
        """Actions available in this scenario (tie-break order)."""
        if self.kind is ScenarioKind.LANE_SWITCH:
            return LONGITUDINAL_ACTIONS + SWITCH_ACTIONS
        return LONGITUDINAL_ACTIONS

    def action_accel(self, action: RobotAction) -> float:
        """Longitudinal acceleration applied by a robot action."""
        if action is RobotAction.ACCELERATE:
            return self.accel_mag
        if action is RobotAction.DECELERATE:
            return self.decel_mag
        return 0.0

    def probe_accel(self, action: RobotAction) -> float:
        """Acceleration value recorded in the interaction history.

        Lane switches are recorded as a full acceleration: cutting in is an
        assertive move the other driver reacts to like a speed probe.
        """
        if action in SWITCH_ACTIONS:
            return self.accel_mag
        return self.action_accel(action)


@dataclass(frozen=True)
class StepRecord:
    """One simulation step of an episode log."""

    t: int
    state: WorldState
    robot_action: RobotAction
    human_accel: float
    belief: Belief
    tmtc: float


@dataclass(frozen=True)
class EpisodeLog:
    """Per-step trace of one interaction plus its outcome metadata."""

    scenario: str
    policy: str
    intention: Intention
    outcome: Outcome
    steps_to_goal: int
    records: tuple[StepRecord, ...] = field(repr=False)

    def __post_init__(self):
        for prev, cur in zip(self.records, self.records[1:]):
            if cur.t <= prev.t:
                raise ValueError("episode records must have strictly increasing timestamps")

    @property
    def near_miss(self) -> bool:
        return any(r.tmtc < 1.0 for r in self.records)

    @property
    def min_tmtc(self) -> float:
        return min((r.tmtc for r in self.records), default=math.inf)
