"""Offline meta-RL with adversarially augmented task-representation learning
on analytic control tasks."""

from .envs import TaskSpec, StepResult, make_env, task_grid
from .data import (CheckpointRecord, OfflineDataset, Transition,
                   collect_dataset, load_dataset, save_dataset,
                   select_checkpoints, train_behavior_policy)
from .dynamics import (DynamicsEnsemble, GaussianDynamicsModel, ModelTransition,
                       branch_rollout, fit_dynamics, fit_reward, uncertainty)
from .encoder import (ContextEncoder, ContextWindow, TaskEmbedding,
                      adversarial_reward, info_nce_loss, relative_metric,
                      representation_value)
from .advpolicy import RewardComposition, compose_reward, collect_adversarial_data
from .metapolicy import MetaPolicy, train_meta_policy
from .evalproto import EvalReport, encoder_diagnostics, eval_off_policy, eval_on_policy
from .pipeline import ExperimentConfig, run_pipeline

__version__ = "0.1.0"
