"""Plain-text configuration: sections [scenario], [planner], [gp],
[synthetic-human] and [suite], parsed with the stdlib configparser. Every
tunable constant of the toolkit is a documented key here; unknown keys are
rejected so typos surface as configuration errors."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .core import ConfigError, ScenarioConfig, ScenarioKind
from .human_model import DriverRule, GPHyperparams, SyntheticDriverParams
from .planner import PlannerConfig, PolicyKind


@dataclass(frozen=True)
class GPConfig:
    """GP hyperparameters plus the fitting-pipeline knobs."""

    hyper: GPHyperparams = GPHyperparams()
    history_k: int = 2
    likelihood_floor: float = 1e-3
    max_train_episodes: int = 40  # per intention, caps the kernel size
    study_episodes: int = 30  # per intention, history-length study subset


@dataclass(frozen=True)
class SuiteConfig:
    runs: int = 200
    master_seed: int = 7
    scenarios: tuple[ScenarioKind, ...] = (
        ScenarioKind.LANE_SWITCH,
        ScenarioKind.INTERSECTION,
        ScenarioKind.LANE_MERGE,
    )
    variants: tuple[str, ...] = ("safe", "unsafe")
    policies: tuple[PolicyKind, ...] = (
        PolicyKind.MYOPIC,
        PolicyKind.HEURISTIC,
        PolicyKind.IPL,
        PolicyKind.IPLG,
    )
    demo_episodes: int = 160  # per scenario kind
    belief_horizon: int = 30  # steps kept in belief-trajectory aggregates


@dataclass(frozen=True)
class AppConfig:
    scenario: ScenarioConfig | None
    planner: PlannerConfig
    gp: GPConfig
    synthetic: SyntheticDriverParams
    suite: SuiteConfig


# Initial-state ranges per (kind, variant). Safe variants give the robot
# room (or low speed) to probe; unsafe variants start close and fast.
_PRESET_RANGES: dict[tuple[ScenarioKind, bool], dict[str, tuple[float, float]]] = {
    (ScenarioKind.INTERSECTION, False): {
        "d_h": (10.0, 14.0), "d_r": (12.0, 16.0), "v_h": (2.5, 4.0), "v_r": (0.8, 1.6),
    },
    (ScenarioKind.INTERSECTION, True): {
        "d_h": (8.0, 13.0), "d_r": (10.5, 14.0), "v_h": (5.5, 7.0), "v_r": (5.2, 6.5),
    },
    # the human drives in the target lane behind the robot; d values are
    # positions along the road relative to the shared merge point
    # (smaller = farther ahead)
    (ScenarioKind.LANE_SWITCH, False): {
        "d_h": (11.0, 14.0), "d_r": (4.5, 6.5), "v_h": (3.0, 3.8), "v_r": (0.8, 1.6),
    },
    (ScenarioKind.LANE_SWITCH, True): {
        "d_h": (11.0, 14.0), "d_r": (4.5, 7.0), "v_h": (5.5, 6.5), "v_r": (3.0, 4.2),
    },
    (ScenarioKind.LANE_MERGE, False): {
        "d_h": (11.0, 15.0), "d_r": (13.0, 17.0), "v_h": (2.5, 4.0), "v_r": (1.0, 2.0),
    },
    (ScenarioKind.LANE_MERGE, True): {
        "d_h": (8.0, 13.0), "d_r": (11.0, 14.5), "v_h": (5.5, 7.0), "v_r": (5.2, 6.5),
    },
}


def preset_scenario(kind: ScenarioKind, unsafe: bool, **overrides) -> ScenarioConfig:
    ranges = _PRESET_RANGES[(kind, unsafe)]
    return ScenarioConfig(kind=kind, unsafe=unsafe, **ranges, **overrides)


def preset_names() -> list[str]:
    return [f"{kind.value}-{'unsafe' if unsafe else 'safe'}" for kind, unsafe in _PRESET_RANGES]


def load_preset(name: str) -> ScenarioConfig:
    for (kind, unsafe) in _PRESET_RANGES:
        if f"{kind.value}-{'unsafe' if unsafe else 'safe'}" == name:
            return preset_scenario(kind, unsafe)
    raise ConfigError(f"unknown scenario preset {name!r}; choose from {preset_names()}")


def default_config() -> AppConfig:
    return AppConfig(
        scenario=None,
        planner=PlannerConfig(),
        gp=GPConfig(),
        synthetic=SyntheticDriverParams(),
        suite=SuiteConfig(),
    )


def _pair(text: str) -> tuple[float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"expected 'low,high', got {text!r}")
    return float(parts[0]), float(parts[1])


def _section(parser: configparser.ConfigParser, name: str) -> dict[str, str]:
    return dict(parser[name]) if parser.has_section(name) else {}


def _take(values: dict[str, str], key: str, cast, default):
    if key in values:
        raw = values.pop(key)
        try:
            return cast(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})")
    return default


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _reject_unknown(section: str, values: dict[str, str]) -> None:
    if values:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(values)}")


def parse_config(path: str | Path) -> AppConfig:
    """Read a configuration file; missing sections/keys fall back to the
    documented defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")

    defaults = default_config()

    scenario = None
    sec = _section(parser, "scenario")
    if sec:
        kind = _take(sec, "kind", ScenarioKind, None)
        if kind is None:
            raise ConfigError("[scenario] requires a 'kind'")
        unsafe = _take(sec, "unsafe", _bool, False)
        base = preset_scenario(kind, unsafe)
        scenario = ScenarioConfig(
            kind=kind,
            unsafe=unsafe,
            d_h=_take(sec, "d_h", _pair, base.d_h),
            d_r=_take(sec, "d_r", _pair, base.d_r),
            v_h=_take(sec, "v_h", _pair, base.v_h),
            v_r=_take(sec, "v_r", _pair, base.v_r),
            dt=_take(sec, "dt", float, base.dt),
            vehicle_length=_take(sec, "vehicle_length", float, base.vehicle_length),
            v_max=_take(sec, "v_max", float, base.v_max),
            accel_mag=_take(sec, "accel", float, base.accel_mag),
            decel_mag=_take(sec, "decel", float, base.decel_mag),
            timeout_steps=_take(sec, "timeout_steps", int, base.timeout_steps),
            lane_change_steps=_take(sec, "lane_change_steps", int, base.lane_change_steps),
            min_initial_tmtc=_take(sec, "min_initial_tmtc", float, base.min_initial_tmtc),
        )
        _reject_unknown("scenario", sec)

    sec = _section(parser, "planner")
    d = defaults.planner
    planner = PlannerConfig(
        gamma=_take(sec, "gamma", float, d.gamma),
        beta=_take(sec, "beta", float, d.beta),
        horizon=_take(sec, "horizon", int, d.horizon),
        budget_seconds=_take(sec, "budget_seconds", float, d.budget_seconds),
        goal_reward=_take(sec, "goal_reward", float, d.goal_reward),
        step_cost=_take(sec, "step_cost", float, d.step_cost),
        collision_penalty=_take(sec, "collision_penalty", float, d.collision_penalty),
        near_miss_penalty=_take(sec, "near_miss_penalty", float, d.near_miss_penalty),
        near_miss_tmtc=_take(sec, "near_miss_tmtc", float, d.near_miss_tmtc),
        belief_grid=_take(sec, "belief_grid", float, d.belief_grid),
        transition_mode=_take(sec, "transition_mode", str, d.transition_mode),
        oracle_cap=_take(sec, "oracle_cap", int, d.oracle_cap),
        heuristic_k=_take(sec, "heuristic_k", int, d.heuristic_k),
    )
    _reject_unknown("planner", sec)

    sec = _section(parser, "gp")
    dg = defaults.gp
    gp = GPConfig(
        hyper=GPHyperparams(
            length_d=_take(sec, "length_scale_d", float, dg.hyper.length_d),
            length_v=_take(sec, "length_scale_v", float, dg.hyper.length_v),
            length_a=_take(sec, "length_scale_a", float, dg.hyper.length_a),
            noise_std=_take(sec, "noise_std", float, dg.hyper.noise_std),
            jitter=_take(sec, "jitter", float, dg.hyper.jitter),
        ),
        history_k=_take(sec, "history_k", int, dg.history_k),
        likelihood_floor=_take(sec, "likelihood_floor", float, dg.likelihood_floor),
        max_train_episodes=_take(sec, "max_train_episodes", int, dg.max_train_episodes),
        study_episodes=_take(sec, "study_episodes", int, dg.study_episodes),
    )
    _reject_unknown("gp", sec)

    sec = _section(parser, "synthetic-human")
    ds = defaults.synthetic
    synthetic = SyntheticDriverParams(
        conservative=DriverRule(
            tmtc_threshold=_take(sec, "cons_tmtc_threshold", float, ds.conservative.tmtc_threshold),
            yield_decel=_take(sec, "cons_yield_decel", float, ds.conservative.yield_decel),
            probe_gain=_take(sec, "cons_probe_gain", float, ds.conservative.probe_gain),
            noise_std=_take(sec, "cons_noise_std", float, ds.conservative.noise_std),
            memory=_take(sec, "cons_memory", int, ds.conservative.memory),
            cruise_speed=_take(sec, "cons_cruise_speed", float, ds.conservative.cruise_speed),
            cruise_gain=_take(sec, "cons_cruise_gain", float, ds.conservative.cruise_gain),
        ),
        aggressive=DriverRule(
            tmtc_threshold=_take(sec, "agg_tmtc_threshold", float, ds.aggressive.tmtc_threshold),
            yield_decel=_take(sec, "agg_yield_decel", float, ds.aggressive.yield_decel),
            probe_gain=_take(sec, "agg_probe_gain", float, ds.aggressive.probe_gain),
            noise_std=_take(sec, "agg_noise_std", float, ds.aggressive.noise_std),
            memory=_take(sec, "agg_memory", int, ds.aggressive.memory),
            cruise_speed=_take(sec, "agg_cruise_speed", float, ds.aggressive.cruise_speed),
            cruise_gain=_take(sec, "agg_cruise_gain", float, ds.aggressive.cruise_gain),
        ),
        accel_limit=_take(sec, "accel_limit", float, ds.accel_limit),
    )
    _reject_unknown("synthetic-human", sec)

    sec = _section(parser, "suite")
    du = defaults.suite
    suite = SuiteConfig(
        runs=_take(sec, "runs", int, du.runs),
        master_seed=_take(sec, "master_seed", int, du.master_seed),
        scenarios=_take(
            sec,
            "scenarios",
            lambda t: tuple(ScenarioKind(s.strip()) for s in t.split(",")),
            du.scenarios,
        ),
        variants=_take(
            sec,
            "variants",
            lambda t: tuple(s.strip() for s in t.split(",")),
            du.variants,
        ),
        policies=_take(
            sec,
            "policies",
            lambda t: tuple(PolicyKind(s.strip()) for s in t.split(",")),
            du.policies,
        ),
        demo_episodes=_take(sec, "demo_episodes", int, du.demo_episodes),
        belief_horizon=_take(sec, "belief_horizon", int, du.belief_horizon),
    )
    for variant in suite.variants:
        if variant not in ("safe", "unsafe"):
            raise ConfigError(f"unknown variant {variant!r}")
    _reject_unknown("suite", sec)

    return AppConfig(scenario=scenario, planner=planner, gp=gp, synthetic=synthetic, suite=suite)


def dump_config(cfg: AppConfig) -> str:
    """Render a config back to the file format (used to ship presets)."""
    lines = []
    if cfg.scenario is not None:
        s = cfg.scenario
        lines += [
            "[scenario]",
            f"kind = {s.kind.value}",
            f"unsafe = {str(s.unsafe).lower()}",
            f"d_h = {s.d_h[0]},{s.d_h[1]}",
            f"d_r = {s.d_r[0]},{s.d_r[1]}",
            f"v_h = {s.v_h[0]},{s.v_h[1]}",
            f"v_r = {s.v_r[0]},{s.v_r[1]}",
            f"dt = {s.dt}",
            f"vehicle_length = {s.vehicle_length}",
            f"v_max = {s.v_max}",
            f"accel = {s.accel_mag}",
            f"decel = {s.decel_mag}",
            f"timeout_steps = {s.timeout_steps}",
            f"lane_change_steps = {s.lane_change_steps}",
            f"min_initial_tmtc = {s.min_initial_tmtc}",
            "",
        ]
    p = cfg.planner
    lines += [
        "[planner]",
        f"gamma = {p.gamma}",
        f"beta = {p.beta}",
        f"horizon = {p.horizon}",
        f"budget_seconds = {p.budget_seconds}",
        f"goal_reward = {p.goal_reward}",
        f"step_cost = {p.step_cost}",
        f"collision_penalty = {p.collision_penalty}",
        f"near_miss_penalty = {p.near_miss_penalty}",
        f"near_miss_tmtc = {p.near_miss_tmtc}",
        f"belief_grid = {p.belief_grid}",
        f"transition_mode = {p.transition_mode}",
        f"oracle_cap = {p.oracle_cap}",
        f"heuristic_k = {p.heuristic_k}",
        "",
    ]
    g = cfg.gp
    lines += [
        "[gp]",
        f"length_scale_d = {g.hyper.length_d}",
        f"length_scale_v = {g.hyper.length_v}",
        f"length_scale_a = {g.hyper.length_a}",
        f"noise_std = {g.hyper.noise_std}",
        f"jitter = {g.hyper.jitter}",
        f"history_k = {g.history_k}",
        f"likelihood_floor = {g.likelihood_floor}",
        f"max_train_episodes = {g.max_train_episodes}",
        f"study_episodes = {g.study_episodes}",
        "",
    ]
    h = cfg.synthetic
    lines += [
        "[synthetic-human]",
        f"cons_tmtc_threshold = {h.conservative.tmtc_threshold}",
        f"cons_yield_decel = {h.conservative.yield_decel}",
        f"cons_probe_gain = {h.conservative.probe_gain}",
        f"cons_noise_std = {h.conservative.noise_std}",
        f"cons_memory = {h.conservative.memory}",
        f"cons_cruise_speed = {h.conservative.cruise_speed}",
        f"cons_cruise_gain = {h.conservative.cruise_gain}",
        f"agg_tmtc_threshold = {h.aggressive.tmtc_threshold}",
        f"agg_yield_decel = {h.aggressive.yield_decel}",
        f"agg_probe_gain = {h.aggressive.probe_gain}",
        f"agg_noise_std = {h.aggressive.noise_std}",
        f"agg_memory = {h.aggressive.memory}",
        f"agg_cruise_speed = {h.aggressive.cruise_speed}",
        f"agg_cruise_gain = {h.aggressive.cruise_gain}",
        f"accel_limit = {h.accel_limit}",
        "",
    ]
    u = cfg.suite
    lines += [
        "[suite]",
        f"runs = {u.runs}",
        f"master_seed = {u.master_seed}",
        f"scenarios = {','.join(k.value for k in u.scenarios)}",
        f"variants = {','.join(u.variants)}",
        f"policies = {','.join(k.value for k in u.policies)}",
        f"demo_episodes = {u.demo_episodes}",
        f"belief_horizon = {u.belief_horizon}",
        "",
    ]
    return "\n".join(lines)


def write_presets(directory: str | Path) -> list[Path]:
    """Write the six named scenario presets as standalone config files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    base = default_config()
    written = []
    for kind, unsafe in _PRESET_RANGES:
        cfg = replace(base, scenario=preset_scenario(kind, unsafe))
        name = f"{kind.value}-{'unsafe' if unsafe else 'safe'}.cfg"
        path = directory / name
        path.write_text(dump_config(cfg))
        written.append(path)
    return written
