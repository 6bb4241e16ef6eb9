"""Success-probability explanations for Q-value agents in a drone search world."""

from .agents import LearnerConfig, MlpQNetwork, QTable, load_qfunction, save_qfunction
from .env import Action, DroneWorld, EnvConfig, Mode, observe
from .explain import Explanation, contrastive_explanation, rank_actions, standalone_explanation
from .harness import ExperimentConfig, ProbeSpec, aggregate_runs, run_experiment
from .introspection import (
    IntrospectionConfig,
    NormalizationStats,
    estimate_distance,
    normalize_q_state,
    state_probabilities,
    success_probability,
)

__version__ = "0.1.0"
