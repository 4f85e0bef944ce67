"""Deterministic scripted backends for offline tests and oracle experiments.

Each script is a rule table mapping (operator tag, features extracted from
the prompt) to a completion. The scripts parse prompts with the same regular
grammar the real templates emit, so they double as a template-contract test.
Completions are a pure function of (script_name, seed, request): repeated
calls are byte-identical.

Scripts and the tags they cover:

- ``piston_expert``  (actor): piston-line control. With the plain expert
  policy: move down while raised whenever the ball is at your cell, to your
  right, or one cell behind; otherwise hold. With a policy that embeds
  ``down-threshold t``: regulate the piston to the guard height t/10 and
  never descend below it - the degraded behavior the training loop learns to
  repair.
- ``kitchen_expert`` (actor): two fixed kitchen roles keyed on the agent id.
  Chef 0 shuttles onions into the pot; chef 1 plates, collects the cooked
  soup, and delivers.
- ``echo_critic``    (critic): names the agent whose piston blocked the ball
  (highest piston left of the ball at episode end, ties to the nearest) as
  negative; everyone else neutral. Also answers team-reflection prompts with
  one shared critique.
- ``threshold_optimizer`` (grad, agg, opt): turns "blocked the ball" credits
  into the gradient "lower your down-threshold", aggregates by propagating
  that phrase if any trajectory produced it, and applies it by rewriting the
  numeric threshold embedded in the policy text down by 1.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

from .backend import Backend, ChatRequest, ChatResponse, TokenUsage, estimate_tokens
from .errors import UnhandledTagError, UnknownScriptError
from .types import BackendDescriptor

PISTON_SUITE = "piston_expert+echo_critic+threshold_optimizer"
KITCHEN_SUITE = "kitchen_expert+echo_critic+threshold_optimizer"

PISTON_EXPERT_POLICY = (
    "Move down while your piston is raised whenever the ball is at your cell, "
    "to your right, or one cell behind you; otherwise hold.")

KITCHEN_RUNNER_POLICY = (
    "Fetch onions from the onion source and load them into the pot until it is "
    "full; stand clear at the onion source while the pot is full.")

KITCHEN_SERVER_POLICY = (
    "Fetch a plate, wait by the plate source watching the pot, collect the soup "
    "once it is cooked, and deliver it at the delivery window.")


def piston_guard_policy(threshold: int) -> str:
    """Degraded piston policy with an embedded numeric guard."""
    return (f"Keep your piston raised at its guard level: down-threshold "
            f"{threshold} (scale: zero to ten). Descend toward the guard level "
            f"when the ball approaches from the right, and never drift below "
            f"it; climb back up if you do.")


# --- prompt grammar (matches the built-in templates) ---

def _field(user_text: str, label: str) -> str:
    match = re.search(rf"(?m)^- {re.escape(label)}: (.*)$", user_text)
    return match.group(1) if match else ""


_HEIGHT = re.compile(r"your height: ([0-9]+(?:\.[0-9]+)?)")
_BALL_SIDE = re.compile(r"ball is (\d+) cells? to your (left|right)")
_THRESHOLD = re.compile(r"down-threshold (\d+)")


def _ball_relative(obs: str) -> int | None:
    """Relative ball cell from the observation; None when not visible."""
    if "ball: not visible" in obs:
        return None
    if "ball is at your cell" in obs:
        return 0
    match = _BALL_SIDE.search(obs)
    if match is None:
        return None
    distance = int(match.group(1))
    return distance if match.group(2) == "right" else -distance


def _completion(thinking: str, action: str) -> str:
    return f"Thinking: {thinking}.\nAction: {action}"


def _piston_actor(request: ChatRequest) -> str:
    policy = _field(request.user_text, "Language Policy")
    obs = _field(request.user_text, "Local Observation")
    height_match = _HEIGHT.search(obs)
    if height_match is None:
        return _completion("observation not recognized, staying put", "hold")
    height = float(height_match.group(1))
    rel = _ball_relative(obs)
    ball_near = rel is not None and rel >= -1

    threshold_match = _THRESHOLD.search(policy)
    if threshold_match:
        guard = int(threshold_match.group(1)) / 10.0
        if ball_near:
            if height > guard + 1e-9:
                return _completion("ball incoming, descending to my guard level", "down")
            return _completion("holding at my guard level while the ball is near", "hold")
        if height > guard + 1e-9:
            return _completion("settling down to my guard level", "down")
        if height < guard - 1e-9:
            return _completion("climbing back to my guard level", "up")
        return _completion("resting at my guard level", "hold")

    if ball_near and height > 1e-9:
        return _completion(
            "the ball is at or right of me and my piston is raised, "
            "so I clear the path", "down")
    return _completion("no reason to move", "hold")


_CHEF = re.compile(
    r"you are chef (\d+) at row (\d+) col (\d+), facing (\w+), "
    r"holding (nothing|an onion|a plate|a soup)")
_OTHER_CHEF = re.compile(r"other chef at row (\d+) col (\d+)")
_POT = re.compile(r"pot \((\d+) onions?(, cooked)?\)")

_POT_SPOT = (1, 2)
_ONION_SPOT = (1, 1)
_PLATE_SPOT = (1, 3)
_DELIVERY_SPOT = (3, 2)

_FLOOR_CELLS = {(r, c) for r in (1, 2, 3) for c in (1, 2, 3)}
_DELTAS = {"north": (-1, 0), "south": (1, 0), "east": (0, 1), "west": (0, -1)}


def _step_toward(pos: tuple[int, int], target: tuple[int, int],
                 other_pos: tuple[int, int] | None = None) -> str:
    """Row first, then column, over the open 3x3 interior.

    Column first, then row: the runner's stations sit in columns 1-2 and the
    server's in column 3, so column-first travel keeps each chef off the
    other's parking cells. Only the server passes ``other_pos``: it yields
    around the runner's cell and sidesteps when blocked, while the runner
    routes straight and lets the environment block it. Exactly one yielding
    chef keeps head-on meetings from freezing (or mirror-oscillating) both
    forever.
    """
    moves = []
    if pos[1] > target[1]:
        moves.append("west")
    elif pos[1] < target[1]:
        moves.append("east")
    if pos[0] > target[0]:
        moves.append("north")
    elif pos[0] < target[0]:
        moves.append("south")
    if not moves:
        return "wait"
    for move in moves:
        dr, dc = _DELTAS[move]
        if other_pos is None or (pos[0] + dr, pos[1] + dc) != other_pos:
            return move
    for move in ("south", "north", "east", "west"):
        dr, dc = _DELTAS[move]
        nxt = (pos[0] + dr, pos[1] + dc)
        if nxt in _FLOOR_CELLS and nxt != other_pos:
            return move
    return "wait"


def _go_interact(pos, facing, target, face, why_move, why_interact,
                 other_pos=None) -> str:
    if pos != target:
        return _completion(why_move, _step_toward(pos, target, other_pos))
    if facing != face:
        return _completion(f"turning to face {face}", face)
    return _completion(why_interact, "interact")


def _kitchen_actor(request: ChatRequest) -> str:
    obs = _field(request.user_text, "Local Observation")
    chef = _CHEF.search(obs)
    if chef is None:
        return _completion("observation not recognized, waiting", "wait")
    agent = int(chef.group(1))
    pos = (int(chef.group(2)), int(chef.group(3)))
    facing = chef.group(4)
    held = chef.group(5)
    other = _OTHER_CHEF.search(obs)
    other_pos = (int(other.group(1)), int(other.group(2))) if other else None
    pot = _POT.search(obs)
    pot_contents = int(pot.group(1)) if pot else None
    pot_cooked = bool(pot and pot.group(2))

    if agent == 0:  # onion runner; routes straight and never yields
        if held == "an onion":
            if pot_contents == 3:
                if pos != _ONION_SPOT:
                    return _completion("pot is full, standing clear",
                                       _step_toward(pos, _ONION_SPOT))
                return _completion("pot is full, waiting with my onion", "wait")
            return _go_interact(pos, facing, _POT_SPOT, "north",
                                "carrying an onion to the pot",
                                "loading my onion into the pot")
        if held == "nothing":
            return _go_interact(pos, facing, _ONION_SPOT, "west",
                                "heading to the onion source",
                                "grabbing an onion")
        return _completion("nothing useful to do with this item", "wait")

    # server
    if held == "a plate":
        pot_ready = pot_cooked and other_pos != _POT_SPOT
        if pot_ready:
            return _go_interact(pos, facing, _POT_SPOT, "north",
                                "soup is ready, moving in to plate it",
                                "plating the cooked soup", other_pos)
        if pos != _PLATE_SPOT:
            return _completion("waiting by the plate source until the soup cooks",
                               _step_toward(pos, _PLATE_SPOT, other_pos))
        return _completion("watching the pot, soup not ready", "wait")
    if held == "a soup":
        return _go_interact(pos, facing, _DELIVERY_SPOT, "south",
                            "carrying the soup to the delivery window",
                            "delivering the soup", other_pos)
    if held == "nothing":
        return _go_interact(pos, facing, _PLATE_SPOT, "east",
                            "heading to the plate source",
                            "picking up a plate", other_pos)
    return _completion("nothing useful to do with this item", "wait")


_HEIGHTS_LIST = re.compile(r"heights: \[([0-9., ]*)\]")
_BALL_X = re.compile(r"ball at x=([0-9]+(?:\.[0-9]+)?)")
_MAX_AGENT = re.compile(r"from 0 to (\d+)")

TEAM_REFLECTION_TEXT = (
    "the team made limited progress; the pistons should coordinate their "
    "heights so the ball keeps moving left.")


def find_blocking_piston(heights: list[float], ball_x: float,
                         block_height: float = 0.5) -> int | None:
    """Highest piston left of the ball; ties go to the nearest one."""
    left = range(min(int(math.floor(ball_x)), len(heights)))
    candidates = [i for i in left]
    if ball_x <= 0 or not candidates:
        return None
    best = max(candidates, key=lambda i: (heights[i], i))
    return best if heights[best] > block_height else None


def _echo_critic(request: ChatRequest) -> str:
    user = request.user_text
    if "Team Reflection" in user:
        return f"Team Reflection: {TEAM_REFLECTION_TEXT}"
    max_agent = _MAX_AGENT.search(user)
    n = int(max_agent.group(1)) + 1 if max_agent else 1
    blamed: int | None = None
    final = re.search(r"(?m)^Final State: (.*)$", user)
    if final:
        heights_match = _HEIGHTS_LIST.search(final.group(1))
        x_match = _BALL_X.search(final.group(1))
        if heights_match and x_match:
            heights = [float(h) for h in heights_match.group(1).split(",") if h.strip()]
            blamed = find_blocking_piston(heights, float(x_match.group(1)))
    sections = []
    for i in range(n):
        if i == blamed:
            sections.append(
                f"Credit Assignment [Agent {i}]: agent {i} kept its piston "
                f"raised and blocked the ball; this hurt the team's progress.")
        else:
            sections.append(
                f"Credit Assignment [Agent {i}]: agent {i} had a neutral "
                f"influence on the outcome this episode.")
    return "\n".join(sections)


LOWER_THRESHOLD_PHRASE = "lower your down-threshold"
NO_CHANGE_PHRASE = "no change"


def _gradient(request: ChatRequest) -> str:
    credit = _field(request.user_text, "Language Credits")
    if "blocked the ball" in credit:
        return (f"Language Gradient: {LOWER_THRESHOLD_PHRASE} so your piston "
                f"stops blocking the ball.")
    return f"Language Gradient: {NO_CHANGE_PHRASE}."


def _aggregate(request: ChatRequest) -> str:
    blocks = re.findall(r"(?m)^Gradient \d+: (.*)$", request.user_text)
    if any(LOWER_THRESHOLD_PHRASE in b for b in blocks):
        return f"Aggregated Gradient: {LOWER_THRESHOLD_PHRASE}."
    return f"Aggregated Gradient: {NO_CHANGE_PHRASE}."


def lower_threshold(policy_text: str) -> str:
    """Rewrite the numeric threshold embedded in the policy text down by 1."""
    match = _THRESHOLD.search(policy_text)
    if match is None:
        match = re.search(r"\d+", policy_text)
        if match is None:
            return policy_text
        value = int(match.group(0))
    else:
        value = int(match.group(1))
    return re.sub(rf"\b{value}\b", str(max(0, value - 1)), policy_text)


def _optimize(request: ChatRequest) -> str:
    policy = _field(request.user_text, "Prior Policy")
    synthesis = _field(request.user_text, "Aggregated Gradients")
    if LOWER_THRESHOLD_PHRASE in synthesis:
        return f"Updated Policy: {lower_threshold(policy)}"
    return f"Updated Policy: {policy}"


# --- rule tables ---

@dataclass(frozen=True)
class RuleRow:
    """One documented rule: the prompt features and the intended action."""

    policy: str
    observation: str
    expected_action: str
    vocabulary: tuple[str, ...]
    agent: int = 0
    note: str = ""


@dataclass(frozen=True)
class RuleTable:
    name: str
    tags: tuple[str, ...]
    handlers: dict[str, Callable[[ChatRequest], str]] = field(hash=False)
    actor_rows: tuple[RuleRow, ...] = ()


def _piston_obs(height: float, ball_phrase: str, agent: int = 2, n: int = 5) -> str:
    return (f"you are piston {agent} of {n}. your height: {height:.2f}. "
            f"left neighbor height: 0.80. right neighbor height: 0.80. {ball_phrase}")


_PISTON_VOCAB = ("up", "down", "hold")
_KITCHEN_VOCAB = ("north", "south", "east", "west", "interact", "wait")

_PISTON_ROWS = (
    RuleRow(PISTON_EXPERT_POLICY,
            _piston_obs(0.80, "the ball is 1 cell to your right, moving left at 0.20 cells/step."),
            "down", _PISTON_VOCAB, note="raised with the ball approaching"),
    RuleRow(PISTON_EXPERT_POLICY,
            _piston_obs(0.80, "the ball is 2 cells to your left, stationary."),
            "hold", _PISTON_VOCAB, note="ball already two cells past"),
    RuleRow(PISTON_EXPERT_POLICY,
            _piston_obs(0.80, "the ball is 1 cell to your left, moving left at 0.10 cells/step."),
            "down", _PISTON_VOCAB, note="one-cell grace while the ball rolls away"),
    RuleRow(PISTON_EXPERT_POLICY,
            _piston_obs(0.30, "the ball is at your cell, stationary."),
            "down", _PISTON_VOCAB, note="still raised under the ball"),
    RuleRow(PISTON_EXPERT_POLICY,
            _piston_obs(0.00, "the ball is at your cell, stationary."),
            "hold", _PISTON_VOCAB, note="already fully lowered"),
    RuleRow(PISTON_EXPERT_POLICY,
            _piston_obs(0.90, "ball: not visible."),
            "hold", _PISTON_VOCAB, note="nothing visible, stay put"),
    RuleRow(piston_guard_policy(6),
            _piston_obs(0.80, "the ball is 1 cell to your right, moving left at 0.20 cells/step."),
            "down", _PISTON_VOCAB, note="guarded piston descends toward its level"),
    RuleRow(piston_guard_policy(6),
            _piston_obs(0.60, "the ball is 1 cell to your right, stationary."),
            "hold", _PISTON_VOCAB, note="guarded piston refuses to go below its level"),
    RuleRow(piston_guard_policy(6),
            _piston_obs(0.40, "ball: not visible."),
            "up", _PISTON_VOCAB, note="guarded piston climbs back to its level"),
    RuleRow(piston_guard_policy(6),
            _piston_obs(0.60, "ball: not visible."),
            "hold", _PISTON_VOCAB, note="guarded piston resting at its level"),
)


def _kitchen_obs(agent: int, pos, facing: str, held: str, other_pos,
                 extra: str = "") -> str:
    return (f"you are chef {agent} at row {pos[0]} col {pos[1]}, facing {facing}, "
            f"holding {held}. other chef at row {other_pos[0]} col {other_pos[1]}, "
            f"facing north. nearby: {extra}north: floor; south: floor.")


_KITCHEN_ROWS = (
    RuleRow(KITCHEN_RUNNER_POLICY,
            _kitchen_obs(0, (2, 1), "north", "nothing", (2, 3)),
            "north", _KITCHEN_VOCAB, agent=0, note="runner heads to the onion source"),
    RuleRow(KITCHEN_RUNNER_POLICY,
            _kitchen_obs(0, (1, 1), "north", "nothing", (2, 3)),
            "west", _KITCHEN_VOCAB, agent=0, note="runner turns to face the source"),
    RuleRow(KITCHEN_RUNNER_POLICY,
            _kitchen_obs(0, (1, 1), "west", "nothing", (2, 3)),
            "interact", _KITCHEN_VOCAB, agent=0, note="runner grabs an onion"),
    RuleRow(KITCHEN_RUNNER_POLICY,
            _kitchen_obs(0, (1, 1), "west", "an onion", (2, 3),
                         extra="north-east: pot (0 onions); "),
            "east", _KITCHEN_VOCAB, agent=0, note="runner carries the onion over"),
    RuleRow(KITCHEN_RUNNER_POLICY,
            _kitchen_obs(0, (1, 2), "east", "an onion", (2, 3),
                         extra="north: pot (1 onion); "),
            "north", _KITCHEN_VOCAB, agent=0, note="runner squares up to the pot"),
    RuleRow(KITCHEN_RUNNER_POLICY,
            _kitchen_obs(0, (1, 2), "north", "an onion", (2, 3),
                         extra="north: pot (1 onion); "),
            "interact", _KITCHEN_VOCAB, agent=0, note="runner loads the pot"),
    RuleRow(KITCHEN_RUNNER_POLICY,
            _kitchen_obs(0, (1, 2), "north", "an onion", (2, 3),
                         extra="north: pot (3 onions, cooked); "),
            "west", _KITCHEN_VOCAB, agent=0, note="pot full, runner stands clear"),
    RuleRow(KITCHEN_SERVER_POLICY,
            _kitchen_obs(1, (2, 3), "north", "nothing", (2, 1)),
            "north", _KITCHEN_VOCAB, agent=1, note="server heads to the plates"),
    RuleRow(KITCHEN_SERVER_POLICY,
            _kitchen_obs(1, (1, 3), "east", "nothing", (2, 1)),
            "interact", _KITCHEN_VOCAB, agent=1, note="server picks up a plate"),
    RuleRow(KITCHEN_SERVER_POLICY,
            _kitchen_obs(1, (1, 3), "east", "a plate", (1, 1),
                         extra="north-west: pot (2 onions); "),
            "wait", _KITCHEN_VOCAB, agent=1, note="server watches an uncooked pot"),
    RuleRow(KITCHEN_SERVER_POLICY,
            _kitchen_obs(1, (1, 3), "east", "a plate", (1, 1),
                         extra="north-west: pot (3 onions, cooked); "),
            "west", _KITCHEN_VOCAB, agent=1, note="server moves in on the cooked soup"),
    RuleRow(KITCHEN_SERVER_POLICY,
            _kitchen_obs(1, (1, 2), "west", "a plate", (1, 1),
                         extra="north: pot (3 onions, cooked); "),
            "north", _KITCHEN_VOCAB, agent=1, note="server squares up to the pot"),
    RuleRow(KITCHEN_SERVER_POLICY,
            _kitchen_obs(1, (1, 2), "north", "a plate", (1, 1),
                         extra="north: pot (3 onions, cooked); "),
            "interact", _KITCHEN_VOCAB, agent=1, note="server plates the soup"),
    RuleRow(KITCHEN_SERVER_POLICY,
            _kitchen_obs(1, (2, 2), "south", "a soup", (1, 1)),
            "south", _KITCHEN_VOCAB, agent=1, note="server heads for the window"),
    RuleRow(KITCHEN_SERVER_POLICY,
            _kitchen_obs(1, (3, 2), "south", "a soup", (1, 1)),
            "interact", _KITCHEN_VOCAB, agent=1, note="server delivers"),
)

_TABLES: dict[str, RuleTable] = {
    "piston_expert": RuleTable(
        name="piston_expert", tags=("actor",),
        handlers={"actor": _piston_actor}, actor_rows=_PISTON_ROWS),
    "kitchen_expert": RuleTable(
        name="kitchen_expert", tags=("actor",),
        handlers={"actor": _kitchen_actor}, actor_rows=_KITCHEN_ROWS),
    "echo_critic": RuleTable(
        name="echo_critic", tags=("critic",),
        handlers={"critic": _echo_critic}),
    "threshold_optimizer": RuleTable(
        name="threshold_optimizer", tags=("grad", "agg", "opt"),
        handlers={"grad": _gradient, "agg": _aggregate, "opt": _optimize}),
}


def scripted_rules(script_name: str) -> RuleTable:
    try:
        return _TABLES[script_name]
    except KeyError:
        raise UnknownScriptError(f"unknown script {script_name!r}") from None


class ScriptedBackend(Backend):
    """Pure-function backend composing one or more rule tables.

    ``script_name`` may join several scripts with '+' so one backend covers
    every operator tag a training run needs, e.g.
    ``piston_expert+echo_critic+threshold_optimizer``.
    """

    def __init__(self, descriptor: BackendDescriptor):
        super().__init__()
        self.descriptor = descriptor
        self._by_tag: dict[str, Callable[[ChatRequest], str]] = {}
        names = [n for n in re.split(r"[+,]", descriptor.script_name) if n]
        if not names:
            raise UnknownScriptError("script_name is empty")
        self.tables = tuple(scripted_rules(name) for name in names)
        for table in self.tables:
            for tag, handler in table.handlers.items():
                self._by_tag.setdefault(tag, handler)

    def complete(self, request: ChatRequest) -> ChatResponse:
        handler = self._by_tag.get(request.tag)
        if handler is None:
            raise UnhandledTagError(
                f"no script for tag {request.tag!r} in {self.descriptor.script_name!r}")
        text = handler(request)
        usage = TokenUsage(prompt_tokens=estimate_tokens(request.full_text),
                           completion_tokens=estimate_tokens(text))
        self.usage.record(request.tag, usage)
        return ChatResponse(text=text, usage=usage, latency_ms=0)
