"""Built-in environments and the name registry."""

from __future__ import annotations

from typing import Mapping

from ..errors import UnknownEnvError
from .base import Env, StepOutcome
from .kitchen_grid import KitchenGridEnv, KitchenGridState
from .piston_line import PistonLineEnv, PistonLineState

ENV_NAMES = ("piston_line", "kitchen_grid")


def make_env(env_name: str, n_agents: int, horizon: int,
             params: Mapping[str, float] | None = None) -> Env:
    """Construct a built-in environment; ``params`` feeds the env knobs."""
    params = dict(params or {})
    if env_name == "piston_line":
        return PistonLineEnv(n_agents=n_agents, horizon=horizon, **params)
    if env_name == "kitchen_grid":
        return KitchenGridEnv(n_agents=n_agents, horizon=horizon, **params)
    raise UnknownEnvError(f"unknown environment {env_name!r}")


def action_vocabulary(env_name: str, agent: int = 0) -> list[str]:
    if env_name == "piston_line":
        from .piston_line import ACTIONS
        return list(ACTIONS)
    if env_name == "kitchen_grid":
        from .kitchen_grid import ACTIONS
        return list(ACTIONS)
    raise UnknownEnvError(f"unknown environment {env_name!r}")


__all__ = [
    "ENV_NAMES",
    "Env",
    "KitchenGridEnv",
    "KitchenGridState",
    "PistonLineEnv",
    "PistonLineState",
    "StepOutcome",
    "action_vocabulary",
    "make_env",
]
