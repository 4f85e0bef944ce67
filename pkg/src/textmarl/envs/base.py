"""Environment contract.

Environments are value-semantic state machines: ``step`` is a pure function
of (state, joint_action), so independent episodes can run in parallel with no
shared mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from ..types import Action, TextObservation


@dataclass(frozen=True)
class StepOutcome:
    state: object
    reward: float
    observations: tuple[TextObservation, ...]
    done: bool


class Env:
    """Contract implemented by every built-in environment."""

    name: str = ""
    n_agents: int = 0
    horizon: int = 0
    fallback_action: str = ""

    def reset(self, seed: int):
        """Return (initial state, per-agent observations); deterministic in seed."""
        raise NotImplementedError

    def step(self, state, joint_action: Sequence[Action]) -> StepOutcome:
        raise NotImplementedError

    def action_vocabulary(self, agent: int) -> list[str]:
        raise NotImplementedError

    def textualize(self, state, agent: int) -> TextObservation:
        """Canonical sentence form of agent's local view only."""
        raise NotImplementedError

    def global_textualize(self, state) -> str:
        """Full-state description; critic prompts only, never actor prompts."""
        raise NotImplementedError

    def _check_joint_action(self, joint_action: Sequence[Action]) -> None:
        from ..errors import ActionError, EnvError

        if len(joint_action) != self.n_agents:
            raise EnvError(
                f"expected {self.n_agents} actions, got {len(joint_action)}")
        for i, action in enumerate(joint_action):
            if action.name not in self.action_vocabulary(i):
                raise ActionError(i, action.name)
