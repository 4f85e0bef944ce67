"""Domain types shared by every module.

All types are immutable values after construction and safe to share across
threads. Invariants are enforced in ``__post_init__`` so a constructed value
is always valid.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping

from .errors import ConfigError

# Agents are identified by their index in [0, N).
AgentId = int

# Injectable clock returning integer epoch milliseconds. Tests substitute a
# counter so policy-history snapshots are byte-stable.
Clock = Callable[[], int]


def now_ms() -> int:
    return int(time.time() * 1000)


@dataclass(frozen=True)
class PolicyRevision:
    """One entry of a policy's version history."""

    version: int
    text: str
    timestamp_ms: int


@dataclass(frozen=True)
class LanguagePolicy:
    """An agent's behavior encoded as natural-language instructions.

    The history is append-only: ``history[v].version == v`` for every v, and
    ``version`` always points at the latest revision.
    """

    agent: AgentId
    text: str
    version: int
    history: tuple[PolicyRevision, ...]

    def __post_init__(self):
        if not self.text:
            raise ValueError("policy text must be non-empty")
        if not self.history:
            raise ValueError("policy history must contain the initial revision")
        if self.version != len(self.history) - 1:
            raise ValueError("policy version must equal len(history) - 1")
        for v, rev in enumerate(self.history):
            if rev.version != v:
                raise ValueError(f"history[{v}] has version {rev.version}")
        if self.history[-1].text != self.text:
            raise ValueError("policy text must match the latest revision")

    @classmethod
    def initial(cls, agent: AgentId, text: str, clock: Clock = now_ms) -> "LanguagePolicy":
        return cls(agent=agent, text=text, version=0,
                   history=(PolicyRevision(0, text, clock()),))

    def updated(self, new_text: str, clock: Clock = now_ms) -> "LanguagePolicy":
        """Return a new policy at version+1; the receiver is not mutated."""
        rev = PolicyRevision(self.version + 1, new_text, clock())
        return LanguagePolicy(agent=self.agent, text=new_text,
                              version=self.version + 1,
                              history=self.history + (rev,))


@dataclass(frozen=True)
class TextObservation:
    """Natural-language encoding of one agent's local view at one step."""

    agent: AgentId
    step: int
    text: str


@dataclass(frozen=True)
class Action:
    """A parsed action together with the completion it was parsed from."""

    agent: AgentId
    name: str
    raw_output: str = ""
    parse_failure: bool = False  # set when the fallback action was substituted


@dataclass(frozen=True)
class Step:
    """One timestep: per-agent observations, the joint action, shared reward."""

    index: int
    observations: tuple[TextObservation, ...]
    joint_action: tuple[Action, ...]
    reward: float

    def __post_init__(self):
        if len(self.observations) != len(self.joint_action):
            raise ValueError("observations and joint_action must have equal length")
        for i, (obs, act) in enumerate(zip(self.observations, self.joint_action)):
            if obs.agent != i or act.agent != i:
                raise ValueError(f"entry {i} is not aligned with agent {i}")


@dataclass(frozen=True)
class Trajectory:
    """A complete episodic rollout."""

    id: str
    env_name: str
    seed: int
    steps: tuple[Step, ...]
    final_observations: tuple[TextObservation, ...]

    def __post_init__(self):
        if not self.steps:
            raise ValueError("trajectory must contain at least one step")
        n = len(self.steps[0].observations)
        for t, step in enumerate(self.steps):
            if step.index != t:
                raise ValueError(f"step {t} has index {step.index}")
            if len(step.observations) != n:
                raise ValueError("agent count varies across steps")
        if len(self.final_observations) != n:
            raise ValueError("final_observations must have one entry per agent")

    @property
    def n_agents(self) -> int:
        return len(self.steps[0].observations)

    @property
    def horizon(self) -> int:
        return len(self.steps)


class Polarity(str, Enum):
    """Coarse summary flag parsed from critic output."""

    POSITIVE = "positive"
    NEGATIVE = "negative"
    MIXED = "mixed"
    NEUTRAL = "neutral"


@dataclass(frozen=True)
class LanguageCredit:
    """Per-agent causal attribution over one trajectory."""

    trajectory_id: str
    agent: AgentId
    text: str
    polarity: Polarity

    def __post_init__(self):
        if not self.text:
            raise ValueError("credit text must be non-empty")


@dataclass(frozen=True)
class LanguageGradient:
    """Per-agent, per-trajectory update direction in language form."""

    trajectory_id: str
    agent: AgentId
    text: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("gradient text must be non-empty")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_ms: int = 1000

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass(frozen=True)
class BackendDescriptor:
    """Which chat backend to talk to and how."""

    kind: str = "scripted"  # "http" | "scripted"
    base_url: str = ""
    model: str = ""
    api_key_env: str = "TEXTMARL_API_KEY"
    script_name: str = "piston_expert"
    seed: int = 0
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    timeout_ms: int = 60_000
    max_concurrency: int = 8

    def __post_init__(self):
        if self.kind not in ("http", "scripted"):
            raise ValueError(f"unknown backend kind {self.kind!r}")


@dataclass(frozen=True)
class RunConfig:
    """Run-level parameters for training and evaluation."""

    n_agents: int
    horizon: int
    rollouts_per_iteration: int
    iterations: int
    env_name: str
    seed: int = 0
    discount: float = 1.0
    backend: BackendDescriptor = field(default_factory=BackendDescriptor)
    credit_assignment_enabled: bool = True
    # Extensions beyond the core tuple: environment knobs reachable from the
    # run file, starting policy texts, the per-agent critic-call mode, and
    # the optional state-action excerpt in gradient prompts.
    env_params: Mapping[str, float] = field(default_factory=dict)
    initial_policies: tuple[str, ...] = ()
    critic_per_agent: bool = False
    gradient_excerpt: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.n_agents < 1:
            raise ConfigError("n_agents", "must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon", "must be >= 1")
        if self.rollouts_per_iteration < 1:
            raise ConfigError("rollouts_per_iteration", "must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations", "must be >= 0")
        if not 0.0 <= self.discount <= 1.0:
            raise ConfigError("discount", "must be within [0, 1]")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
