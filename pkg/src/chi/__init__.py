"""Model-based control that refines an amortised policy with a few planning iterations per step."""

from .agent import AgentConfig, AgentKind, episode, select_action
from .dynamics import EnsembleDynamics, rollout
from .envs import Pendulum, PointMass, make_env
from .harness import METRICS_COLUMNS, METRICS_VERSION, OUTPUT_ROOT_ENV, RunConfig, compare, load_config, run
from .planner import ActionSequenceDist, PlanConfig, plan
from .policy import Critics, Policy, SacConfig
from .replay import ReplayBuffer, Transition
from .tensor import CHECKPOINT_VERSION, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ActionSequenceDist",
    "AgentConfig",
    "AgentKind",
    "CHECKPOINT_VERSION",
    "Critics",
    "EnsembleDynamics",
    "METRICS_COLUMNS",
    "METRICS_VERSION",
    "OUTPUT_ROOT_ENV",
    "Pendulum",
    "PlanConfig",
    "PointMass",
    "Policy",
    "ReplayBuffer",
    "RunConfig",
    "SacConfig",
    "Transition",
    "compare",
    "episode",
    "load_checkpoint",
    "load_config",
    "make_env",
    "plan",
    "rollout",
    "run",
    "save_checkpoint",
    "select_action",
]
