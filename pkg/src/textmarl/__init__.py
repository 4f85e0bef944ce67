"""Cooperative multi-agent RL in language space.

Agents hold natural-language policies; a centralized language critic assigns
per-agent credit over full episodic trajectories; policies improve through
language-form gradients aggregated across rollout batches.
"""

from .backend import (
    Backend,
    ChatRequest,
    ChatResponse,
    HttpBackend,
    RecordingBackend,
    TokenUsage,
    make_backend,
)
from .envs import make_env
from .learning import (
    aggregate_and_update,
    assign_credits,
    estimate_gradient,
    global_reflection,
    train,
    train_iteration,
)
from .returns import episodic_return, mean_return
from .rollout import collect_trajectories, run_episode, sample_action
from .scripted import ScriptedBackend, scripted_rules
from .store import load_trajectories, save_trajectories
from .types import (
    Action,
    AgentId,
    BackendDescriptor,
    LanguageCredit,
    LanguageGradient,
    LanguagePolicy,
    Polarity,
    RunConfig,
    Step,
    TextObservation,
    Trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AgentId",
    "Backend",
    "BackendDescriptor",
    "ChatRequest",
    "ChatResponse",
    "HttpBackend",
    "LanguageCredit",
    "LanguageGradient",
    "LanguagePolicy",
    "Polarity",
    "RecordingBackend",
    "RunConfig",
    "ScriptedBackend",
    "Step",
    "TextObservation",
    "TokenUsage",
    "Trajectory",
    "aggregate_and_update",
    "assign_credits",
    "collect_trajectories",
    "episodic_return",
    "estimate_gradient",
    "global_reflection",
    "load_trajectories",
    "make_backend",
    "make_env",
    "mean_return",
    "run_episode",
    "sample_action",
    "save_trajectories",
    "scripted_rules",
    "train",
    "train_iteration",
]
