"""Prompt templates and structured-output parsing.

Templates live as text assets under ``textmarl/assets`` with ``{{name}}``
placeholders; a line containing only ``---`` separates the system message
from the user message. Rendering is deterministic: identical inputs yield
byte-identical prompts, pinned by golden files in the test suite.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Mapping, Sequence

from .backend import ChatRequest
from .errors import MissingSection, NoActionLine, UnknownAction, ZeroSections
from .types import (
    AgentId,
    LanguageCredit,
    LanguageGradient,
    LanguagePolicy,
    Polarity,
    TextObservation,
    Trajectory,
)

ACTOR_TEMPERATURE = 0.7
EVAL_TEMPERATURE = 0.2  # critic, gradient, aggregator, optimizer
DEFAULT_MAX_TOKENS = 1024

# Critic prompts are budgeted at roughly this many prompt tokens, estimated
# at 4 characters per token; longer trajectories get their middle elided.
DEFAULT_PROMPT_TOKEN_BUDGET = 8000
CHARS_PER_TOKEN = 4

_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}")

TEMPLATE_KINDS = ("actor", "critic", "reflection", "gradient", "aggregator",
                  "optimizer")

_OUTPUT_SCHEMA = {
    "actor": ("Thinking", "Action"),
    "critic": ("Credit Assignment",),
    "reflection": ("Team Reflection",),
    "gradient": ("Language Gradient",),
    "aggregator": ("Aggregated Gradient",),
    "optimizer": ("Updated Policy",),
}


@dataclass(frozen=True)
class Template:
    kind: str
    system_text: str
    user_text: str
    output_schema: tuple[str, ...]

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER.findall(self.system_text + self.user_text))


@lru_cache(maxsize=None)
def load_template(kind: str) -> Template:
    if kind not in TEMPLATE_KINDS:
        raise ValueError(f"unknown template kind {kind!r}")
    raw = resources.files("textmarl").joinpath(f"assets/{kind}.txt").read_text("utf-8")
    parts = raw.split("\n---\n", 1)
    if len(parts) != 2:
        raise ValueError(f"template {kind!r} is missing the system/user separator")
    return Template(kind=kind, system_text=parts[0].strip("\n"),
                    user_text=parts[1].rstrip("\n"),
                    output_schema=_OUTPUT_SCHEMA[kind])


def render_template(template: Template, bindings: Mapping[str, str]) -> tuple[str, str]:
    missing = template.placeholders - set(bindings)
    if missing:
        raise ValueError(f"unbound placeholders in {template.kind!r}: {sorted(missing)}")

    def fill(text: str) -> str:
        return _PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), text)

    return fill(template.system_text), fill(template.user_text)


def _request(kind: str, tag: str, bindings: Mapping[str, str],
             temperature: float, max_tokens: int = DEFAULT_MAX_TOKENS) -> ChatRequest:
    system, user = render_template(load_template(kind), bindings)
    return ChatRequest(messages=(("system", system), ("user", user)),
                       temperature=temperature, max_tokens=max_tokens, tag=tag)


# --- renderers ---

def render_actor(policy: LanguagePolicy, obs: TextObservation,
                 vocabulary: Sequence[str]) -> ChatRequest:
    """Actor prompt: the agent's own policy and observation only."""
    if not vocabulary:
        raise ValueError("vocabulary must be non-empty")
    if policy.agent != obs.agent:
        raise ValueError(f"policy is for agent {policy.agent}, "
                         f"observation for agent {obs.agent}")
    return _request("actor", "actor", {
        "agent_id": str(policy.agent),
        "policy": policy.text,
        "observation": obs.text,
        "vocabulary": ", ".join(vocabulary),
    }, ACTOR_TEMPERATURE)


def serialize_trajectory(trajectory: Trajectory, global_texts: Sequence[str],
                         step_budget: int | None = None) -> str:
    """Step-by-step joint trajectory for critic prompts.

    When the serialized episode exceeds the step budget, the middle is elided
    keeping the first ceil(B/2) and last floor(B/2) steps, with an explicit
    marker: the episode start and the reward-bearing ending are what causal
    attribution needs most.
    """
    T = trajectory.horizon
    if len(global_texts) != T + 1:
        raise ValueError(f"expected {T + 1} global texts, got {len(global_texts)}")

    def block(t: int) -> str:
        step = trajectory.steps[t]
        joint = "; ".join(f"agent {a.agent}: {a.name}" for a in step.joint_action)
        return (f"Step {t}:\nState: {global_texts[t]}\n"
                f"Joint actions: {joint}\nReward: {step.reward:.4f}")

    if step_budget is None:
        step_budget = _derive_step_budget(trajectory, global_texts)
    if T <= step_budget:
        kept = [block(t) for t in range(T)]
    else:
        head = math.ceil(step_budget / 2)
        tail = step_budget // 2
        elided = T - head - tail
        kept = [block(t) for t in range(head)]
        kept.append(f"[... {elided} steps elided ...]")
        kept.extend(block(t) for t in range(T - tail, T))
    kept.append(f"Final State: {global_texts[T]}")
    return "\n".join(kept)


def _derive_step_budget(trajectory: Trajectory, global_texts: Sequence[str]) -> int:
    budget_chars = DEFAULT_PROMPT_TOKEN_BUDGET * CHARS_PER_TOKEN
    step = trajectory.steps[0]
    joint = "; ".join(f"agent {a.agent}: {a.name}" for a in step.joint_action)
    per_step = len(global_texts[0]) + len(joint) + 48
    return max(2, budget_chars // max(1, per_step))


def render_critic(trajectory: Trajectory, global_texts: Sequence[str],
                  team_reward: float, n_agents: int,
                  step_budget: int | None = None) -> ChatRequest:
    """Centralized critic prompt over the full joint trajectory."""
    return _request("critic", "critic", {
        "trajectory": serialize_trajectory(trajectory, global_texts, step_budget),
        "team_reward": f"{team_reward:.4f}",
        "max_agent": str(n_agents - 1),
    }, EVAL_TEMPERATURE)


def render_reflection(trajectory: Trajectory, global_texts: Sequence[str],
                      team_reward: float,
                      step_budget: int | None = None) -> ChatRequest:
    """Ablation variant: one team-level critique instead of per-agent credit."""
    return _request("reflection", "critic", {
        "trajectory": serialize_trajectory(trajectory, global_texts, step_budget),
        "team_reward": f"{team_reward:.4f}",
    }, EVAL_TEMPERATURE)


def render_gradient(policy: LanguagePolicy, credit: LanguageCredit,
                    trajectory_excerpt: str = "") -> ChatRequest:
    if credit.agent != policy.agent:
        raise ValueError(f"credit is for agent {credit.agent}, "
                         f"policy for agent {policy.agent}")
    excerpt_section = ""
    if trajectory_excerpt:
        excerpt_section = f"\n- Agent Trajectory Excerpt: {trajectory_excerpt}"
    return _request("gradient", "grad", {
        "credit": credit.text,
        "policy": policy.text,
        "excerpt_section": excerpt_section,
    }, EVAL_TEMPERATURE)


def render_aggregator(gradients: Sequence[LanguageGradient]) -> ChatRequest:
    if not gradients:
        raise ValueError("gradient list must be non-empty")
    agents = {g.agent for g in gradients}
    if len(agents) != 1:
        raise ValueError(f"gradients mix agents {sorted(agents)}")
    blocks = "\n".join(f"Gradient {k + 1}: {g.text}"
                       for k, g in enumerate(gradients))
    return _request("aggregator", "agg", {
        "count": str(len(gradients)),
        "gradients": blocks,
    }, EVAL_TEMPERATURE)


def render_optimizer(policy: LanguagePolicy, aggregated_gradient: str) -> ChatRequest:
    if not aggregated_gradient:
        raise ValueError("aggregated gradient must be non-empty")
    return _request("optimizer", "opt", {
        "synthesis": aggregated_gradient,
        "policy": policy.text,
    }, EVAL_TEMPERATURE)


# --- parsers ---

@dataclass(frozen=True)
class ParsedActorOutput:
    thinking: str
    action_name: str


@dataclass(frozen=True)
class ParsedCriticOutput:
    per_agent: dict[AgentId, tuple[str, Polarity]]


_ACTION_LINE = re.compile(r"(?im)^[^\S\n]*[-*]?[^\S\n]*action[^\S\n]*:(.*)$")


def parse_actor(response_text: str, vocabulary: Sequence[str]) -> ParsedActorOutput:
    """Extract the last 'Action:' line and containment-match the vocabulary.

    LLMs decorate action names, so matching accepts the longest vocabulary
    item contained (case-insensitively) in the line; ties break by
    vocabulary order.
    """
    matches = list(_ACTION_LINE.finditer(response_text))
    if not matches:
        raise NoActionLine("no 'Action:' line in completion")
    last = matches[-1]
    line = last.group(1).lower()
    best: str | None = None
    for item in vocabulary:
        if item.lower() in line:
            if best is None or len(item) > len(best):
                best = item
    if best is None:
        raise UnknownAction(f"no vocabulary item found in {last.group(1)!r}")
    thinking = response_text[: last.start()].strip()
    return ParsedActorOutput(thinking=thinking, action_name=best)


@lru_cache(maxsize=None)
def _default_lexicon() -> dict[str, tuple[str, ...]]:
    raw = resources.files("textmarl").joinpath(
        "assets/polarity_lexicon.json").read_text("utf-8")
    return {k: tuple(v) for k, v in json.loads(raw).items()}


def infer_polarity(text: str,
                   lexicon: Mapping[str, Sequence[str]] | None = None) -> Polarity:
    """Coarse polarity from a fixed keyword lexicon; default is 'mixed'.

    The lexicon only exists to make ablation tests assertable; it does not
    constrain critic prose.
    """
    if not text.strip():
        return Polarity.NEUTRAL
    lex = lexicon or _default_lexicon()
    lowered = text.lower()
    has_pos = any(m in lowered for m in lex.get("positive", ()))
    has_neg = any(m in lowered for m in lex.get("negative", ()))
    if has_pos and has_neg:
        return Polarity.MIXED
    if has_pos:
        return Polarity.POSITIVE
    if has_neg:
        return Polarity.NEGATIVE
    if any(m in lowered for m in lex.get("neutral", ())):
        return Polarity.NEUTRAL
    return Polarity.MIXED


_CREDIT_HEADER = re.compile(r"(?i)credit assignment\s*\[\s*agent\s+(\d+)\s*\]\s*:?")


def parse_critic(response_text: str, n_agents: int,
                 lexicon: Mapping[str, Sequence[str]] | None = None) -> ParsedCriticOutput:
    """Split on 'Credit Assignment [Agent i]' headers.

    Agents with no section are recorded with empty text and neutral polarity;
    claimed ids outside [0, N) are dropped.
    """
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    headers = list(_CREDIT_HEADER.finditer(response_text))
    if not headers:
        raise ZeroSections("no 'Credit Assignment [Agent i]' header found")
    per_agent: dict[AgentId, tuple[str, Polarity]] = {}
    for pos, match in enumerate(headers):
        agent = int(match.group(1))
        if not 0 <= agent < n_agents:
            continue
        end = headers[pos + 1].start() if pos + 1 < len(headers) else len(response_text)
        text = response_text[match.end(): end].strip()
        per_agent[agent] = (text, infer_polarity(text, lexicon))
    for agent in range(n_agents):
        per_agent.setdefault(agent, ("", Polarity.NEUTRAL))
    return ParsedCriticOutput(per_agent=per_agent)


def _parse_section(response_text: str, label: str) -> str:
    pattern = re.compile(
        rf"(?im)^[^\S\n]*[-*]?[^\S\n]*{re.escape(label)}[^\S\n]*:(.*)\Z",
        re.DOTALL)
    match = pattern.search(response_text)
    if match is None:
        raise MissingSection(f"no {label!r} section in completion")
    text = match.group(1).strip()
    if not text:
        raise MissingSection(f"{label!r} section is empty")
    return text


def parse_gradient(response_text: str) -> str:
    return _parse_section(response_text, "Language Gradient")


def parse_aggregate(response_text: str) -> str:
    return _parse_section(response_text, "Aggregated Gradient")


def parse_optimizer(response_text: str) -> str:
    return _parse_section(response_text, "Updated Policy")


def parse_reflection(response_text: str) -> str:
    return _parse_section(response_text, "Team Reflection")
