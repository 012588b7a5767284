"""Exp3-driven per-phase hyperparameter selection for class-incremental learning."""

from .bandit import PolicyState, init_policy, policy_distribution, sample_action, update_weight
from .datastream import ExemplarStore, LabeledDataset, PhaseSchedule, make_schedule, synth_generate
from .hyperspace import Action, ActionSpace, build_grid, default_space
from .learner import LossConfig, ModelState
from .orchestrator import OrchestratorConfig, PhaseResult, run_experiment

__version__ = "0.1.0"
