"""Intention-conditioned human behavior model.

A Gaussian-process regressor per driver type maps (world state, bounded
action history) to the driver's next longitudinal acceleration. The fitted
models are compiled offline into a discretized policy table so the online
planner only does table lookups. A rule-based synthetic driver plays the
role of the recorded participants and is the ground truth for all tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import ndtr

from .core import (
    ACCEL_KEEP_BAND,
    ACCEL_REPS,
    INTENTIONS,
    AccelBin,
    Belief,
    BoundedHistory,
    DiscreteIndex,
    HumanAction,
    Intention,
    InvalidActionError,
    RobotAction,
    ScenarioConfig,
    WorldState,
    all_indices,
    n_cells,
    pad_history,
)
from .dataio import DemoEpisode

LIKELIHOOD_FLOOR = 1e-3


@dataclass(frozen=True)
class GPHyperparams:
    """Kernel length scales per physical quantity plus observation noise."""

    length_d: float = 5.0
    length_v: float = 2.0
    length_a: float = 1.0
    noise_std: float = 0.15
    jitter: float = 1e-8

    def __post_init__(self):
        for name in ("length_d", "length_v", "length_a", "noise_std"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")

    def scales(self, k: int) -> np.ndarray:
        """Per-coordinate length scales for a feature vector of history k."""
        return np.array(
            [self.length_d, self.length_d, self.length_v, self.length_v]
            + [self.length_a] * (2 * k),
            dtype=float,
        )


def feature_vector(x: WorldState, history: BoundedHistory) -> np.ndarray:
    """Concatenate the world state with the padded history accelerations."""
    flat = [a for pair in history for a in pair]
    return np.array([x.d_h, x.d_r, x.v_h, x.v_r, *flat], dtype=float)


def rbf_kernel(f: np.ndarray, g: np.ndarray, hyper: GPHyperparams) -> float:
    """Radial-basis similarity of two feature vectors.

    Each squared coordinate difference is scaled by the length scale of its
    physical quantity (distance, speed or acceleration); the result is
    exp(-1/2 * sum), hence symmetric, 1 exactly at f == g and in (0, 1].
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape or f.ndim != 1:
        raise ValueError(f"feature shape mismatch: {f.shape} vs {g.shape}")
    k = (f.size - 4) // 2
    if f.size != 4 + 2 * k:
        raise ValueError(f"feature dimension {f.size} is not 4 + 2k")
    z = (f - g) / GPHyperparams.scales(hyper, k)
    return float(np.exp(-0.5 * np.dot(z, z)))


def _kernel_matrix(a: np.ndarray, b: np.ndarray, hyper: GPHyperparams) -> np.ndarray:
    k = (a.shape[1] - 4) // 2
    scales = hyper.scales(k)
    sa = a / scales
    sb = b / scales
    sq = (
        np.sum(sa**2, axis=1)[:, None]
        + np.sum(sb**2, axis=1)[None, :]
        - 2.0 * sa @ sb.T
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-0.5 * sq)


@dataclass(frozen=True)
class GPModel:
    """A fitted regressor for one driver type.

    The prior mean is the arithmetic mean of the training targets, the
    kernel is :func:`rbf_kernel` and observations carry iid noise of
    standard deviation ``hyper.noise_std``.
    """

    intention: Intention
    k: int
    hyper: GPHyperparams
    train_x: np.ndarray = field(repr=False)
    train_y: np.ndarray = field(repr=False)
    mu0: float
    _chol: np.ndarray = field(repr=False)
    _alpha: np.ndarray = field(repr=False)

    @property
    def n_train(self) -> int:
        return self.train_x.shape[0]

    def predict_batch(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and std of the observed acceleration at each query."""
        queries = np.asarray(queries, dtype=float)
        if queries.ndim != 2 or queries.shape[1] != self.train_x.shape[1]:
            raise ValueError(
                f"query dimension {queries.shape} does not match model dim {self.train_x.shape[1]}"
            )
        k_star = _kernel_matrix(queries, self.train_x, self.hyper)
        mean = self.mu0 + k_star @ self._alpha
        v = solve_triangular(self._chol, k_star.T, lower=True)
        var = 1.0 - np.sum(v**2, axis=0) + self.hyper.noise_std**2
        var = np.maximum(var, 1e-12)
        return mean, np.sqrt(var)


def training_pairs(episodes: Sequence[DemoEpisode], k: int, probe_accel: float = 2.0):
    """Build (features, targets) from demonstration episodes.

    The history fed to the features at step t is the t-k..t-1 window of the
    same episode, zero-padded near the episode start.
    """
    xs, ys = [], []
    for ep in episodes:
        raw: list[tuple[float, float]] = []
        for step in ep.steps:
            h = pad_history(raw, k)
            xs.append(feature_vector(step.state, h))
            ys.append(step.a_h)
            raw.append((step.robot_accel(probe_accel), step.a_h))
    return np.array(xs, dtype=float), np.array(ys, dtype=float)


def gp_fit(
    episodes: Sequence[DemoEpisode],
    k: int,
    hyper: GPHyperparams,
    intention: Intention | None = None,
    prior_mean: float | None = None,
) -> GPModel:
    """Fit one regressor on episodes that all share the same intention label.

    The prior mean defaults to the arithmetic mean of the training targets;
    per-intention models meant for belief tracking should share a pooled
    prior mean so that regions without data predict identically for both
    driver types instead of fabricating intention evidence.
    """
    if not episodes:
        raise ValueError("cannot fit a model on zero episodes")
    labels = {ep.intention for ep in episodes}
    if intention is None:
        if len(labels) != 1 or None in labels:
            raise ValueError(f"episodes carry mixed or missing intention labels: {labels}")
        intention = next(iter(labels))
    elif labels - {intention}:
        raise ValueError(f"episodes labeled {labels} do not match requested {intention}")

    x, y = training_pairs(episodes, k)
    if x.shape[0] == 0:
        raise ValueError("no training pairs in the given episodes")
    mu0 = float(np.mean(y)) if prior_mean is None else float(prior_mean)
    gram = _kernel_matrix(x, x, hyper)
    gram[np.diag_indices_from(gram)] += hyper.noise_std**2 + hyper.jitter
    try:
        chol, _ = cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"kernel matrix not positive definite: {exc}")
    chol = np.tril(chol)
    alpha = cho_solve((chol, True), y - mu0)
    return GPModel(intention, k, hyper, x, y, mu0, chol, alpha)


def gp_predict(model: GPModel, f: np.ndarray) -> tuple[float, float]:
    """Predictive mean and std of the acceleration at a single feature vector."""
    mean, std = model.predict_batch(np.asarray(f, dtype=float)[None, :])
    return float(mean[0]), float(std[0])


@dataclass(frozen=True)
class StudyRow:
    k: int
    train_mse: float
    test_mse: float


def history_length_study(
    episodes: Sequence[DemoEpisode],
    k_values: Sequence[int],
    hyper: GPHyperparams,
    train_fraction: float = 0.8,
    seed: int = 0,
) -> list[StudyRow]:
    """Held-out prediction error as a function of history length.

    Episodes are split 80/20 at episode granularity (per intention), one
    model per intention is fit on the training split, and the MSE is pooled
    over both intentions.
    """
    if not k_values:
        raise ValueError("k_values must be non-empty")
    rng = np.random.default_rng(seed)
    by_intent: dict[Intention, list[DemoEpisode]] = {i: [] for i in INTENTIONS}
    for ep in episodes:
        if ep.intention is None:
            raise ValueError("history study needs intention-labeled episodes")
        by_intent[ep.intention].append(ep)

    splits: dict[Intention, tuple[list[DemoEpisode], list[DemoEpisode]]] = {}
    for intent, eps in by_intent.items():
        if len(eps) < 2:
            raise ValueError(f"need at least 2 episodes per intention, got {len(eps)} for {intent}")
        order = rng.permutation(len(eps))
        cut = max(1, int(round(train_fraction * len(eps))))
        cut = min(cut, len(eps) - 1)
        splits[intent] = (
            [eps[i] for i in order[:cut]],
            [eps[i] for i in order[cut:]],
        )

    rows = []
    for k in k_values:
        train_se, train_n, test_se, test_n = 0.0, 0, 0.0, 0
        for intent in INTENTIONS:
            train_eps, test_eps = splits[intent]
            model = gp_fit(train_eps, k, hyper, intent)
            for eps, is_train in ((train_eps, True), (test_eps, False)):
                x, y = training_pairs(eps, k)
                mean, _ = model.predict_batch(x)
                se = float(np.sum((mean - y) ** 2))
                if is_train:
                    train_se += se
                    train_n += y.size
                else:
                    test_se += se
                    test_n += y.size
        rows.append(StudyRow(k, train_se / train_n, test_se / test_n))
    return rows


def grid_search_hyperparams(
    episodes: Sequence[DemoEpisode],
    k: int,
    base: GPHyperparams,
    length_grid: Sequence[float] = (0.5, 1.0, 2.0),
    seed: int = 0,
) -> GPHyperparams:
    """Refit over multiplicative length-scale factors, minimizing held-out MSE."""
    best, best_mse = base, math.inf
    for factor in length_grid:
        hyper = replace(
            base,
            length_d=base.length_d * factor,
            length_v=base.length_v * factor,
            length_a=base.length_a * factor,
        )
        row = history_length_study(episodes, [k], hyper, seed=seed)[0]
        if row.test_mse < best_mse:
            best, best_mse = hyper, row.test_mse
    return best


# --- policy table -----------------------------------------------------------


@dataclass(frozen=True)
class PolicyTable:
    """Discretized per-intention distribution over the human accel bins.

    ``probs[i, cell, bin]`` is the probability the driver of intention
    ``INTENTIONS[i]`` produces an acceleration in ``bin`` at ``cell``. Rows
    are exact Gaussian-CDF partitions and sum to 1; the likelihood floor is
    applied only when a value is read for a Bayes update.
    """

    k: int
    probs: np.ndarray = field(repr=False)
    rep_accels: tuple[float, float, float] = ACCEL_REPS
    floor: float = LIKELIHOOD_FLOOR

    def __post_init__(self):
        expected = (len(INTENTIONS), n_cells(self.k), 3)
        if self.probs.shape != expected:
            raise ValueError(f"policy table shape {self.probs.shape}, expected {expected}")

    @property
    def n_entries(self) -> int:
        return self.probs.shape[1]

    def distribution(self, index: DiscreteIndex, intention: Intention) -> np.ndarray:
        return self.probs[INTENTIONS.index(intention), index.ordinal]

    def likelihood(self, index: DiscreteIndex, intention: Intention, bin: AccelBin) -> float:
        raw = float(self.probs[INTENTIONS.index(intention), index.ordinal, int(bin)])
        return max(raw, self.floor)


def cell_features(k: int) -> np.ndarray:
    """Representative continuous feature vector of every cell, ordinal order."""
    total = n_cells(k)
    feats = np.empty((total, 4 + 2 * k), dtype=float)
    for idx in all_indices(k):
        x = idx.representative_state()
        feats[idx.ordinal] = feature_vector(x, idx.representative_history())
    return feats


def bin_probabilities(mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Integrate a predictive Gaussian over the three accel bins."""
    lo = ndtr((-ACCEL_KEEP_BAND - mean) / std)
    hi = ndtr((ACCEL_KEEP_BAND - mean) / std)
    return np.stack([lo, hi - lo, 1.0 - hi], axis=-1)


def build_policy_table(models: Mapping[Intention, GPModel], k: int) -> PolicyTable:
    """Evaluate both regressors at every cell's representative point and
    convert the predictive Gaussians to bin distributions."""
    for intent in INTENTIONS:
        if intent not in models:
            raise ValueError(f"missing fitted model for {intent}")
        if models[intent].k != k:
            raise ValueError(f"model for {intent} was fit with k={models[intent].k}, not {k}")
    feats = cell_features(k)
    probs = np.empty((len(INTENTIONS), feats.shape[0], 3), dtype=float)
    for i, intent in enumerate(INTENTIONS):
        mean, std = models[intent].predict_batch(feats)
        probs[i] = bin_probabilities(mean, std)
    return PolicyTable(k, probs)


def action_likelihood(
    table: PolicyTable,
    x: WorldState,
    history: BoundedHistory,
    intention: Intention,
    action: HumanAction | AccelBin,
) -> float:
    """Floored probability of the observed action bin under one intention."""
    if len(history) != table.k:
        raise ValueError(f"history length {len(history)} does not match table k={table.k}")
    bin = action.bin if isinstance(action, HumanAction) else action
    return table.likelihood(DiscreteIndex.from_state(x, history), intention, bin)


# --- synthetic ground-truth driver -------------------------------------------


@dataclass(frozen=True)
class DriverRule:
    """Reaction rule for one driver type.

    When neither the danger threshold nor a remembered robot probe is
    active, the driver regulates up toward its cruise speed (never brakes
    for that reason), so episodes cannot stall with a parked human.
    """

    tmtc_threshold: float
    yield_decel: float
    probe_gain: float
    noise_std: float
    memory: int
    cruise_speed: float = 4.0
    cruise_gain: float = 0.6

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory horizon must be >= 1")
        if self.yield_decel >= 0:
            raise ValueError("yield_decel must be negative")

    def cruise_accel(self, v: float) -> float:
        return self.cruise_gain * max(0.0, self.cruise_speed - v)


@dataclass(frozen=True)
class SyntheticDriverParams:
    """Ground-truth reaction rules for both driver types.

    The conservative threshold must exceed the aggressive one: a cautious
    driver starts yielding earlier.
    """

    # cruise behavior is intentionally identical across types: watching a
    # driver who is not pressed reveals nothing about their intention
    conservative: DriverRule = DriverRule(
        tmtc_threshold=3.0, yield_decel=-2.0, probe_gain=1.0, noise_std=0.15, memory=2,
        cruise_speed=4.5, cruise_gain=0.6,
    )
    aggressive: DriverRule = DriverRule(
        tmtc_threshold=0.8, yield_decel=-2.0, probe_gain=0.5, noise_std=0.15, memory=2,
        cruise_speed=4.5, cruise_gain=0.6,
    )
    accel_limit: float = 3.0

    def __post_init__(self):
        if self.conservative.tmtc_threshold <= self.aggressive.tmtc_threshold:
            raise ValueError("conservative threshold must exceed the aggressive one")

    def rule(self, intention: Intention) -> DriverRule:
        return self.conservative if intention is Intention.CONSERVATIVE else self.aggressive


def _tmtc_from_state(x: WorldState, length: float) -> float:
    """Time to joint occupancy of the conflict zone, conflict assumed live."""
    from .simulator import time_to_mutual_collision

    return time_to_mutual_collision(x.d_h, x.v_h, x.d_r, x.v_r, length)


def _recent_probe(history: BoundedHistory, memory: int) -> bool:
    recent = history[-memory:] if memory > 0 else ()
    return any(a_r > ACCEL_KEEP_BAND for a_r, _ in recent)


def _robot_pressing(history: BoundedHistory) -> bool:
    """True unless the robot's latest move was a visible deceleration."""
    if not history:
        return True
    return history[-1][0] >= -ACCEL_KEEP_BAND


#: Below this conflict time every driver brakes reflexively.
EMERGENCY_TMTC = 0.8


def synth_human_step(
    params: SyntheticDriverParams,
    x: WorldState,
    history: BoundedHistory,
    intention: Intention,
    rng: np.random.Generator,
    tmtc: float | None = None,
    zone_length: float = 4.0,
) -> HumanAction:
    """Sample the ground-truth driver's acceleration.

    Conservative drivers yield (brake) when the conflict time drops under
    their threshold while the robot is pressing on, or when the robot has
    made an assertive move (acceleration or lane change) within their
    memory horizon. A robot that visibly brakes de-escalates the conflict:
    the driver then reads right-of-way and simply maintains, so passively
    watching reveals nothing. Aggressive drivers hold or push back against
    probes and brake only in a reflexive emergency. Gaussian action noise
    is added, then the result is clamped to the feasible range.
    """
    rule = params.rule(intention)
    if tmtc is None:
        tmtc = _tmtc_from_state(x, zone_length)
    probed = _recent_probe(history, rule.memory)
    pressing = _robot_pressing(history)

    if x.d_h <= 0.0:
        # already at the conflict point: yielding in place would block the
        # zone, so the driver powers through instead
        mean = rule.cruise_accel(x.v_h)
    elif intention is Intention.CONSERVATIVE:
        if tmtc < EMERGENCY_TMTC:
            mean = rule.yield_decel
        elif tmtc < rule.tmtc_threshold and pressing:
            mean = rule.yield_decel
        elif probed:
            mean = rule.probe_gain * rule.yield_decel
        else:
            mean = rule.cruise_accel(x.v_h)
    else:
        if tmtc < rule.tmtc_threshold:
            mean = rule.yield_decel
        elif probed:
            mean = rule.probe_gain * abs(rule.yield_decel)
        else:
            mean = rule.cruise_accel(x.v_h)

    accel = mean + (rule.noise_std * rng.standard_normal() if rule.noise_std > 0 else 0.0)
    accel = min(max(accel, -params.accel_limit), params.accel_limit)
    return HumanAction(accel)


# --- demonstration generation -------------------------------------------------


@dataclass(frozen=True)
class ScriptedExpert:
    """Cautious scripted robot used to record demonstrations.

    It accelerates (or switches lanes) only when the hypothetical conflict
    leaves a comfortable margin, keeps speed in the gray zone and brakes
    when close, which is the behavior the safe-probability table distills.
    It also never contests with fast oncoming traffic: while the other car
    moves quickly and has not cleared the conflict, it will not accelerate.
    """

    safe_tmtc: float = 4.0
    keep_tmtc: float = 2.5
    switch_tmtc: float = 6.0  # a lane change commits for ~1 s, so more buffer
    fast_other: float = 5.0  # never provoke a car moving faster than this

    def select_action(self, belief, x: WorldState, history: BoundedHistory, ctx) -> RobotAction:
        from .core import ScenarioKind

        if ctx.human_crossed:
            if ctx.can_switch:
                return RobotAction.SWITCH_LEFT
            return RobotAction.ACCELERATE
        if ctx.scenario is not ScenarioKind.LANE_SWITCH and x.d_r <= 0.0:
            return RobotAction.ACCELERATE  # inside the zone: clear it
        tm = ctx.tmtc_if_go
        contested = x.v_h >= self.fast_other and x.d_h > 0.0
        if contested and tm < self.switch_tmtc:
            return RobotAction.DECELERATE  # actively back off from fast traffic
        if ctx.can_switch and tm >= self.switch_tmtc:
            return RobotAction.SWITCH_LEFT
        if tm >= self.safe_tmtc:
            return RobotAction.ACCELERATE
        if tm >= self.keep_tmtc:
            return RobotAction.KEEP
        return RobotAction.DECELERATE


def generate_demonstrations(
    cfg: ScenarioConfig,
    n_episodes: int,
    rng: np.random.Generator,
    expert: ScriptedExpert | None = None,
    params: SyntheticDriverParams | None = None,
    episodes_per_driver: int = 8,
) -> tuple[list[DemoEpisode], list[DemoEpisode]]:
    """Record paired demonstration sets from expert-vs-synthetic episodes.

    With the default counts (160 episodes in blocks of 8 aggressive plus 8
    conservative per simulated participant) this yields 80 episodes per
    intention in the labeled set and 160 in the unlabeled expert set.
    """
    from .simulator import run_episode

    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    expert = expert or ScriptedExpert()
    params = params or SyntheticDriverParams()

    labeled: list[DemoEpisode] = []
    unlabeled: list[DemoEpisode] = []
    block = 2 * episodes_per_driver
    for i in range(n_episodes):
        intention = INTENTIONS[1] if (i % block) < episodes_per_driver else INTENTIONS[0]
        log = run_episode(
            cfg,
            expert,
            params,
            rng,
            policy_name="expert",
            table=None,
            intention=intention,
        )
        dh, dg = _demo_pair(log, cfg)
        labeled.append(dh)
        unlabeled.append(dg)
    return labeled, unlabeled


def _demo_pair(log, cfg: ScenarioConfig):
    from .dataio import demo_sets_from_episode_log

    return demo_sets_from_episode_log(log, cfg.accel_mag)
