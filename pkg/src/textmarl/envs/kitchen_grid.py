"""A two-chef mini kitchen: fetch onions, cook soup, deliver.

Fixed 5x5 layout. Two chefs move on the interior floor, pick onions and
plates from wall-mounted sources, fill the pot (3 onions cook into a soup),
and deliver plated soup at the window. The team reward is sparse: +20 only on
the step a delivery happens; the episode ends at the delivery quota or the
horizon.

Layout (row, col), X = counter:

    X X P X X
    O . . . L
    X . . . X
    X . . . X
    X X D X X
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from ..errors import EnvError
from ..types import Action, TextObservation
from .base import Env, StepOutcome

ACTIONS = ("north", "south", "east", "west", "interact", "wait")

_DIRS = {"north": (-1, 0), "south": (1, 0), "east": (0, 1), "west": (0, -1)}

_LAYOUT = (
    "XXPXX",
    "O...L",
    "X...X",
    "X...X",
    "XXDXX",
)
POT = (0, 2)
ONION_SOURCE = (1, 0)
PLATE_SOURCE = (1, 4)
DELIVERY = (4, 2)

_START_CELLS = ((2, 1), (2, 3), (3, 1), (3, 3))


@dataclass(frozen=True)
class KitchenGridState:
    agent_positions: tuple[tuple[int, int], ...]
    agent_facings: tuple[str, ...]
    held_items: tuple[str, ...]  # "none" | "onion" | "plate" | "soup"
    pot_contents: int
    pot_cooked: bool
    deliveries: int
    step_count: int
    done: bool

    def __post_init__(self):
        if len(set(self.agent_positions)) != len(self.agent_positions):
            raise ValueError("chefs must occupy distinct cells")
        if not 0 <= self.pot_contents <= 3:
            raise ValueError("pot_contents must be within 0..3")


def _cell_kind(pos: tuple[int, int]) -> str:
    r, c = pos
    if not (0 <= r < 5 and 0 <= c < 5):
        return "counter"
    ch = _LAYOUT[r][c]
    return {"X": "counter", ".": "floor", "P": "pot",
            "O": "onion source", "L": "plate source", "D": "delivery window"}[ch]


def _is_floor(pos: tuple[int, int]) -> bool:
    return _cell_kind(pos) == "floor"


_HELD_PHRASE = {"none": "nothing", "onion": "an onion",
                "plate": "a plate", "soup": "a soup"}


class KitchenGridEnv(Env):
    name = "kitchen_grid"
    fallback_action = "wait"

    def __init__(self, n_agents: int, horizon: int = 80,
                 delivery_reward: float = 20.0, delivery_quota: int = 3):
        if n_agents != 2:
            raise EnvError("kitchen_grid requires 2 agents")
        if horizon < 1:
            raise EnvError("horizon must be >= 1")
        self.n_agents = 2
        self.horizon = horizon
        self.delivery_reward = delivery_reward
        self.delivery_quota = delivery_quota

    def reset(self, seed: int):
        rng = random.Random(seed)
        positions = tuple(rng.sample(_START_CELLS, 2))
        state = KitchenGridState(agent_positions=positions,
                                 agent_facings=("north", "north"),
                                 held_items=("none", "none"),
                                 pot_contents=0, pot_cooked=False,
                                 deliveries=0, step_count=0, done=False)
        return state, self._observe_all(state)

    def action_vocabulary(self, agent: int) -> list[str]:
        if not 0 <= agent < self.n_agents:
            raise EnvError(f"agent {agent} out of range for N={self.n_agents}")
        return list(ACTIONS)

    def step(self, state: KitchenGridState, joint_action: Sequence[Action]) -> StepOutcome:
        if state.done:
            raise EnvError("cannot step a finished episode")
        self._check_joint_action(joint_action)

        positions = list(state.agent_positions)
        facings = list(state.agent_facings)
        held = list(state.held_items)
        pot_contents = state.pot_contents
        pot_cooked = state.pot_cooked
        deliveries = state.deliveries
        reward = 0.0

        # Movement phase: moving toward a blocked cell still turns the chef.
        desired = list(positions)
        for i, action in enumerate(joint_action):
            if action.name in _DIRS:
                facings[i] = action.name
                dr, dc = _DIRS[action.name]
                target = (positions[i][0] + dr, positions[i][1] + dc)
                if _is_floor(target):
                    desired[i] = target
        # Swapping places is forbidden; a contested cell goes to the lower id.
        if desired[0] == positions[1] and desired[1] == positions[0]:
            desired = list(positions)
        if desired[0] == desired[1]:
            desired[1] = positions[1]
        if desired[1] == desired[0]:
            desired[1] = positions[1]
        if desired[0] == desired[1]:
            desired[0] = positions[0]
        positions = desired

        # Interaction phase, in agent order.
        for i, action in enumerate(joint_action):
            if action.name != "interact":
                continue
            dr, dc = _DIRS[facings[i]]
            target = (positions[i][0] + dr, positions[i][1] + dc)
            kind = _cell_kind(target)
            if kind == "onion source" and held[i] == "none":
                held[i] = "onion"
            elif kind == "plate source" and held[i] == "none":
                held[i] = "plate"
            elif kind == "pot":
                if held[i] == "onion" and pot_contents < 3:
                    pot_contents += 1
                    held[i] = "none"
                    if pot_contents == 3:
                        pot_cooked = True
                elif held[i] == "plate" and pot_cooked:
                    held[i] = "soup"
                    pot_contents = 0
                    pot_cooked = False
            elif kind == "delivery window" and held[i] == "soup":
                held[i] = "none"
                deliveries += 1
                reward += self.delivery_reward

        step_count = state.step_count + 1
        done = deliveries >= self.delivery_quota or step_count >= self.horizon
        new_state = KitchenGridState(agent_positions=tuple(positions),
                                     agent_facings=tuple(facings),
                                     held_items=tuple(held),
                                     pot_contents=pot_contents,
                                     pot_cooked=pot_cooked,
                                     deliveries=deliveries,
                                     step_count=step_count, done=done)
        return StepOutcome(state=new_state, reward=reward,
                           observations=self._observe_all(new_state), done=done)

    def _observe_all(self, state: KitchenGridState) -> tuple[TextObservation, ...]:
        return tuple(self.textualize(state, i) for i in range(self.n_agents))

    def _describe_cell(self, state: KitchenGridState, pos: tuple[int, int]) -> str:
        kind = _cell_kind(pos)
        if kind == "pot":
            n = state.pot_contents
            cooked = ", cooked" if state.pot_cooked else ""
            return f"pot ({n} onion{'s' if n != 1 else ''}{cooked})"
        return kind

    def textualize(self, state: KitchenGridState, agent: int) -> TextObservation:
        if not 0 <= agent < self.n_agents:
            raise EnvError(f"agent {agent} out of range for N={self.n_agents}")
        other = 1 - agent
        r, c = state.agent_positions[agent]
        orow, ocol = state.agent_positions[other]
        window = []
        for label, (dr, dc) in (("north", (-1, 0)), ("north-east", (-1, 1)),
                                ("east", (0, 1)), ("south-east", (1, 1)),
                                ("south", (1, 0)), ("south-west", (1, -1)),
                                ("west", (0, -1)), ("north-west", (-1, -1))):
            window.append(f"{label}: {self._describe_cell(state, (r + dr, c + dc))}")
        text = (f"you are chef {agent} at row {r} col {c}, "
                f"facing {state.agent_facings[agent]}, "
                f"holding {_HELD_PHRASE[state.held_items[agent]]}. "
                f"other chef at row {orow} col {ocol}, "
                f"facing {state.agent_facings[other]}. "
                f"nearby: {'; '.join(window)}.")
        return TextObservation(agent=agent, step=state.step_count, text=text)

    def global_textualize(self, state: KitchenGridState) -> str:
        chefs = " ".join(
            f"chef {i} at row {state.agent_positions[i][0]} "
            f"col {state.agent_positions[i][1]} facing {state.agent_facings[i]} "
            f"holding {_HELD_PHRASE[state.held_items[i]]}."
            for i in range(self.n_agents))
        pot = (f"pot: {state.pot_contents} onion"
               f"{'s' if state.pot_contents != 1 else ''}, "
               f"{'cooked' if state.pot_cooked else 'uncooked'}.")
        return (f"kitchen 5x5, layout rows {list(_LAYOUT)}. {chefs} {pot} "
                f"deliveries: {state.deliveries} of {self.delivery_quota}. "
                f"steps taken: {state.step_count}.")
