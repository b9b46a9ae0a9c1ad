"""Planning under intention uncertainty for 1-D interactive driving:
a learned human behavior model, demonstration-guided exploration and a
seeded evaluation harness."""

__version__ = "0.1.0"

from .core import (
    Belief,
    DiscreteIndex,
    EpisodeLog,
    HumanAction,
    Intention,
    RobotAction,
    ScenarioConfig,
    ScenarioKind,
    WorldState,
    discretize_accel,
    discretize_state,
    pad_history,
)
from .guided import SafeProbTable, init_safe_table, safe_prob, update_safe_table
from .human_model import (
    GPHyperparams,
    GPModel,
    PolicyTable,
    SyntheticDriverParams,
    action_likelihood,
    build_policy_table,
    generate_demonstrations,
    gp_fit,
    gp_predict,
    history_length_study,
    rbf_kernel,
    synth_human_step,
)
from .planner import (
    Planner,
    PlannerConfig,
    PolicyKind,
    belief_update,
    bayes_optimal_value,
    compile_driving_model,
    make_toy_instance,
    reward_bonus,
    solve_bonus_mdp,
    verify_optimism,
)
from .simulator import run_episode, step_dynamics, time_to_mutual_collision
