"""A one-dimensional line of pistons pushing a ball toward the left wall.

Each of the N pistons occupies one cell and moves vertically on a 0.1 grid.
The ball rolls left over the piston of the cell it is in at speed
``max_speed * (1 - height)`` and cannot cross into a cell whose piston is
raised above ``block_height`` - a raised piston in the ball's path blocks it,
which is the credit-assignment structure the whole training loop turns on.

The shared team reward per step is ``alpha * leftward_progress`` minus a
constant time penalty of 0.1.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Sequence

from ..errors import EnvError
from ..types import Action, TextObservation
from .base import Env, StepOutcome

ACTIONS = ("up", "down", "hold")

# Pistons start raised somewhere on the upper half of their travel.
_START_HEIGHTS = (0.6, 0.7, 0.8, 0.9, 1.0)


@dataclass(frozen=True)
class PistonLineState:
    piston_heights: tuple[float, ...]
    ball_x: float
    ball_vx: float
    step_count: int
    done: bool

    def __post_init__(self):
        n = len(self.piston_heights)
        if any(not 0.0 <= h <= 1.0 for h in self.piston_heights):
            raise ValueError("piston heights must lie in [0, 1]")
        if not 0.0 <= self.ball_x <= n:
            raise ValueError(f"ball_x must lie in [0, {n}]")


def ball_cell(state: PistonLineState) -> int:
    n = len(state.piston_heights)
    return min(int(math.floor(state.ball_x)), n - 1)


def _advance_ball(heights: Sequence[float], x: float,
                  max_speed: float, block_height: float) -> float:
    """One timestep of leftward ball travel over the piston surface."""
    n = len(heights)
    time_left = 1.0
    while time_left > 1e-12 and x > 0.0:
        if x == math.floor(x):
            gate = int(x) - 1
            if heights[gate] > block_height:
                break  # the raised piston left of the ball blocks it
            cell = gate
        else:
            cell = min(int(math.floor(x)), n - 1)
        speed = max_speed * (1.0 - heights[cell])
        if speed <= 1e-12:
            break
        dist_to_boundary = x - cell
        travel = speed * time_left
        if travel >= dist_to_boundary:
            x = float(cell)
            time_left -= dist_to_boundary / speed
        else:
            x -= travel
            time_left = 0.0
    return max(x, 0.0)


class PistonLineEnv(Env):
    name = "piston_line"
    fallback_action = "hold"

    def __init__(self, n_agents: int, horizon: int = 30, alpha: float = 1.0,
                 time_penalty: float = 0.1, visibility: int = 2,
                 max_speed: float = 0.5, block_height: float = 0.5,
                 move_step: float = 0.1):
        if n_agents < 1:
            raise EnvError("piston_line requires at least 1 agent")
        if horizon < 1:
            raise EnvError("horizon must be >= 1")
        self.n_agents = n_agents
        self.horizon = horizon
        self.alpha = alpha
        self.time_penalty = time_penalty
        self.visibility = int(visibility)
        self.max_speed = max_speed
        self.block_height = block_height
        self.move_step = move_step

    def reset(self, seed: int):
        rng = random.Random(seed)
        heights = tuple(rng.choice(_START_HEIGHTS) for _ in range(self.n_agents))
        # Ball drops into the rightmost cell, strictly inside it.
        ball_x = self.n_agents - 0.05 - 0.9 * rng.random()
        state = PistonLineState(piston_heights=heights, ball_x=ball_x,
                                ball_vx=0.0, step_count=0, done=False)
        return state, self._observe_all(state)

    def action_vocabulary(self, agent: int) -> list[str]:
        if not 0 <= agent < self.n_agents:
            raise EnvError(f"agent {agent} out of range for N={self.n_agents}")
        return list(ACTIONS)

    def step(self, state: PistonLineState, joint_action: Sequence[Action]) -> StepOutcome:
        if state.done:
            raise EnvError("cannot step a finished episode")
        self._check_joint_action(joint_action)

        heights = list(state.piston_heights)
        for i, action in enumerate(joint_action):
            if action.name == "up":
                heights[i] = min(1.0, round(heights[i] + self.move_step, 10))
            elif action.name == "down":
                heights[i] = max(0.0, round(heights[i] - self.move_step, 10))

        new_x = _advance_ball(heights, state.ball_x, self.max_speed, self.block_height)
        progress = state.ball_x - new_x
        reward = self.alpha * progress - self.time_penalty

        step_count = state.step_count + 1
        done = new_x <= 0.0 or step_count >= self.horizon
        new_state = PistonLineState(piston_heights=tuple(heights), ball_x=new_x,
                                    ball_vx=-progress, step_count=step_count,
                                    done=done)
        return StepOutcome(state=new_state, reward=reward,
                           observations=self._observe_all(new_state), done=done)

    def _observe_all(self, state: PistonLineState) -> tuple[TextObservation, ...]:
        return tuple(self.textualize(state, i) for i in range(self.n_agents))

    def textualize(self, state: PistonLineState, agent: int) -> TextObservation:
        if not 0 <= agent < self.n_agents:
            raise EnvError(f"agent {agent} out of range for N={self.n_agents}")
        h = state.piston_heights
        left = "wall" if agent == 0 else f"{h[agent - 1]:.2f}"
        right = "wall" if agent == self.n_agents - 1 else f"{h[agent + 1]:.2f}"
        rel = ball_cell(state) - agent
        if abs(rel) > self.visibility:
            ball = "ball: not visible."
        else:
            if rel == 0:
                where = "the ball is at your cell"
            elif rel > 0:
                where = f"the ball is {rel} cell{'s' if rel > 1 else ''} to your right"
            else:
                where = f"the ball is {-rel} cell{'s' if rel < -1 else ''} to your left"
            speed = abs(state.ball_vx)
            motion = "stationary" if speed < 0.005 else f"moving left at {speed:.2f} cells/step"
            ball = f"{where}, {motion}."
        text = (f"you are piston {agent} of {self.n_agents}. "
                f"your height: {h[agent]:.2f}. "
                f"left neighbor height: {left}. "
                f"right neighbor height: {right}. "
                f"{ball}")
        return TextObservation(agent=agent, step=state.step_count, text=text)

    def global_textualize(self, state: PistonLineState) -> str:
        heights = ", ".join(f"{h:.2f}" for h in state.piston_heights)
        speed = abs(state.ball_vx)
        motion = "stationary" if speed < 0.005 else f"moving left at {speed:.2f} cells/step"
        return (f"pistons: {self.n_agents}. heights: [{heights}]. "
                f"ball at x={state.ball_x:.3f} (cell {ball_cell(state)}), {motion}. "
                f"steps taken: {state.step_count}.")
