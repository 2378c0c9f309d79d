from .c51 import (
    C51Agent,
    C51Config,
    C51History,
    bellman_target,
    c51_project,
    expected_values,
    greedy_action,
    support,
)
from .ensemble import (
    AVERAGING_MODES,
    VALUE_GROUPS,
    Ensemble,
    PolicyReport,
    action_percentages,
    bootstrap_ensemble,
    ensemble_actions,
    majority_vote,
    minmax_scale,
    policy_report,
    state_groups,
)
from .mdp import Transition, TransitionSet, build_mdp, load_transitions_csv, save_transitions_csv
from .rewards import (
    RewardKind,
    RewardSpec,
    RiskModel,
    bootstrap_patients,
    fit_risk_model,
    reward,
    step_reward,
    terminal_reward,
)

__all__ = [
    "AVERAGING_MODES",
    "C51Agent",
    "C51Config",
    "C51History",
    "Ensemble",
    "PolicyReport",
    "RewardKind",
    "RewardSpec",
    "RiskModel",
    "Transition",
    "TransitionSet",
    "VALUE_GROUPS",
    "action_percentages",
    "bellman_target",
    "bootstrap_ensemble",
    "bootstrap_patients",
    "build_mdp",
    "c51_project",
    "ensemble_actions",
    "expected_values",
    "fit_risk_model",
    "greedy_action",
    "load_transitions_csv",
    "majority_vote",
    "minmax_scale",
    "policy_report",
    "reward",
    "save_transitions_csv",
    "state_groups",
    "step_reward",
    "support",
    "terminal_reward",
]
