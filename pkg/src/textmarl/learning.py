"""Centralized training.

One iteration runs three barrier-separated phases over the rollout batch:
per-trajectory credit assignment (one critic call parsed into N sections),
per-(agent, trajectory) language gradients, and one aggregate-then-optimize
update per agent. The no-credit ablation replaces phase one with a single
team-level reflection copied to every agent.

``train`` drives the full loop: collect -> train_iteration -> evaluation
rollouts on a fixed seed block, persisting trajectories, credits, gradients,
syntheses, policies, and a metrics ledger under the run directory; partial
runs resume from the last completed iteration.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import store
from .backend import Backend, make_backend
from .envs import make_env
from .envs.base import Env
from .errors import (
    CreditFailure,
    GradientFailure,
    MissingSection,
    TrainError,
    UpdateFailure,
    ZeroSections,
)
from .prompts import (
    infer_polarity,
    parse_aggregate,
    parse_critic,
    parse_gradient,
    parse_optimizer,
    parse_reflection,
    render_aggregator,
    render_critic,
    render_gradient,
    render_optimizer,
    render_reflection,
)
from .returns import episodic_return, mean_return, std_return
from .rollout import collect_trajectories
from .scripted import (
    KITCHEN_RUNNER_POLICY,
    KITCHEN_SERVER_POLICY,
    piston_guard_policy,
)
from .types import (
    Clock,
    LanguageCredit,
    LanguageGradient,
    LanguagePolicy,
    RunConfig,
    Trajectory,
    now_ms,
)

# Evaluation episodes reuse one fixed seed block per run so learning curves
# compare like against like across iterations.
EVAL_SEED_OFFSET = 1_000_000

_MISSING_CREDIT_TEXT = "(no credit section provided for this agent)"


def replay_global_texts(env: Env, trajectory: Trajectory) -> list[str]:
    """Reconstruct the critic-side global view by replaying stored actions."""
    state, _ = env.reset(trajectory.seed)
    texts = [env.global_textualize(state)]
    for step in trajectory.steps:
        outcome = env.step(state, step.joint_action)
        state = outcome.state
        texts.append(env.global_textualize(state))
    return texts


def _complete_parsed(backend, request, parser, failure_type, what):
    """One completion with a single re-prompt on a parse miss."""
    try:
        return parser(backend.complete(request).text)
    except (ZeroSections, MissingSection):
        try:
            return parser(backend.complete(request).text)
        except (ZeroSections, MissingSection) as exc:
            raise failure_type(what) from exc


def assign_credits(backend: Backend, trajectory: Trajectory, n_agents: int,
                   global_texts: Sequence[str],
                   per_agent_calls: bool = False) -> list[LanguageCredit]:
    """Agent-wise credit assignment over one full trajectory.

    Default mode issues one critic call and parses N sections out of it;
    ``per_agent_calls`` issues one call per agent instead.
    """
    team_reward = episodic_return(trajectory)
    request = render_critic(trajectory, global_texts, team_reward, n_agents)

    def credit_for(agent: int, parsed) -> LanguageCredit:
        text, polarity = parsed.per_agent[agent]
        return LanguageCredit(trajectory_id=trajectory.id, agent=agent,
                              text=text or _MISSING_CREDIT_TEXT,
                              polarity=polarity)

    def parse(text: str):
        return parse_critic(text, n_agents)

    what = f"trajectory {trajectory.id}: no credit sections"
    if per_agent_calls:
        return [credit_for(agent, _complete_parsed(backend, request, parse,
                                                   CreditFailure, what))
                for agent in range(n_agents)]
    parsed = _complete_parsed(backend, request, parse, CreditFailure, what)
    return [credit_for(agent, parsed) for agent in range(n_agents)]


def global_reflection(backend: Backend, trajectory: Trajectory, n_agents: int,
                      global_texts: Sequence[str]) -> list[LanguageCredit]:
    """Ablation path: one team-level critique assigned verbatim to all agents."""
    team_reward = episodic_return(trajectory)
    request = render_reflection(trajectory, global_texts, team_reward)
    text = _complete_parsed(backend, request, parse_reflection, CreditFailure,
                            f"trajectory {trajectory.id}: no team reflection")
    polarity = infer_polarity(text)
    return [LanguageCredit(trajectory_id=trajectory.id, agent=i, text=text,
                           polarity=polarity)
            for i in range(n_agents)]


def agent_excerpt(trajectory: Trajectory, agent: int) -> str:
    """The agent's own state-action sequence, local observations only."""
    parts = []
    for step in trajectory.steps:
        parts.append(f"step {step.index}: saw: {step.observations[agent].text} "
                     f"did: {step.joint_action[agent].name}")
    return " | ".join(parts)


def estimate_gradient(backend: Backend, policy: LanguagePolicy,
                      credit: LanguageCredit, trajectory: Trajectory,
                      include_excerpt: bool = True) -> LanguageGradient:
    """Turn one agent's credit on one trajectory into an update direction."""
    if policy.agent != credit.agent:
        raise ValueError(f"credit is for agent {credit.agent}, "
                         f"policy for agent {policy.agent}")
    excerpt = agent_excerpt(trajectory, policy.agent) if include_excerpt else ""
    request = render_gradient(policy, credit, excerpt)
    text = _complete_parsed(backend, request, parse_gradient, GradientFailure,
                            f"agent {policy.agent}, trajectory "
                            f"{trajectory.id}: no gradient section")
    return LanguageGradient(trajectory_id=trajectory.id, agent=policy.agent,
                            text=text)


@dataclass(frozen=True)
class UpdateResult:
    policy: LanguagePolicy
    synthesis: str


def aggregate_and_update(backend: Backend, policy: LanguagePolicy,
                         gradients: Sequence[LanguageGradient],
                         clock: Clock = now_ms) -> UpdateResult:
    """One aggregator call over the batch, then one optimizer call.

    Returns the new policy at version+1 (the prior text is never mutated)
    together with the aggregator's synthesis, which is persisted as part of
    the run's interpretability record.
    """
    if not gradients:
        raise ValueError("gradient list must be non-empty")
    if any(g.agent != policy.agent for g in gradients):
        raise ValueError("all gradients must belong to the policy's agent")

    synthesis = _complete_parsed(
        backend, render_aggregator(gradients), parse_aggregate, UpdateFailure,
        f"agent {policy.agent}: no aggregated-gradient section")
    new_text = _complete_parsed(
        backend, render_optimizer(policy, synthesis), parse_optimizer,
        UpdateFailure, f"agent {policy.agent}: no updated-policy section")
    return UpdateResult(policy=policy.updated(new_text, clock), synthesis=synthesis)


@dataclass(frozen=True)
class IterationResult:
    policies: tuple[LanguagePolicy, ...]
    credits: tuple[LanguageCredit, ...]
    gradients: tuple[LanguageGradient, ...]
    syntheses: tuple[str, ...]  # one per agent


def train_iteration(config: RunConfig, policies: Sequence[LanguagePolicy],
                    trajectories: Sequence[Trajectory], backend: Backend,
                    env: Env, clock: Clock = now_ms) -> IterationResult:
    """One pass of the three training phases over a rollout batch.

    Per iteration this issues exactly K critic calls, K*N gradient calls,
    N aggregator calls, and N optimizer calls (re-prompts aside). Any phase
    failure propagates and the caller's policies stay unchanged.
    """
    if not trajectories:
        raise ValueError("trajectories must be non-empty")
    if len(policies) != config.n_agents:
        raise ValueError(f"expected {config.n_agents} policies, "
                         f"got {len(policies)}")
    n = config.n_agents

    def map_maybe_parallel(fn, items):
        if config.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]

    # Phase 1: credits, one unit per trajectory.
    def credit_one(trajectory: Trajectory) -> list[LanguageCredit]:
        texts = replay_global_texts(env, trajectory)
        if config.credit_assignment_enabled:
            return assign_credits(backend, trajectory, n, texts,
                                  per_agent_calls=config.critic_per_agent)
        return global_reflection(backend, trajectory, n, texts)

    credits_per_traj = map_maybe_parallel(credit_one, list(trajectories))

    # Phase 2: gradients for every (agent, trajectory) pair.
    pairs = [(agent, k) for agent in range(n) for k in range(len(trajectories))]

    def gradient_one(pair: tuple[int, int]) -> LanguageGradient:
        agent, k = pair
        return estimate_gradient(backend, policies[agent],
                                 credits_per_traj[k][agent], trajectories[k],
                                 include_excerpt=config.gradient_excerpt)

    gradient_list = map_maybe_parallel(gradient_one, pairs)
    gradients_by_agent: dict[int, list[LanguageGradient]] = {a: [] for a in range(n)}
    for (agent, _), gradient in zip(pairs, gradient_list):
        gradients_by_agent[agent].append(gradient)

    # Phase 3: one aggregate + optimize per agent.
    def update_one(agent: int) -> UpdateResult:
        return aggregate_and_update(backend, policies[agent],
                                    gradients_by_agent[agent], clock)

    updates = map_maybe_parallel(update_one, list(range(n)))

    return IterationResult(
        policies=tuple(u.policy for u in updates),
        credits=tuple(c for per_traj in credits_per_traj for c in per_traj),
        gradients=tuple(gradient_list),
        syntheses=tuple(u.synthesis for u in updates),
    )


# --- run directory layout and the full training loop ---

METRICS_FIELDS = ("iteration", "mean_return", "std_return", "tokens_actor",
                  "tokens_critic", "tokens_grad", "tokens_agg", "tokens_opt")


@dataclass(frozen=True)
class MetricsRow:
    iteration: int
    mean_return: float
    std_return: float
    tokens_by_tag: dict[str, int]

    def to_dict(self) -> dict:
        row = {"iteration": self.iteration, "mean_return": self.mean_return,
               "std_return": self.std_return}
        for tag in ("actor", "critic", "grad", "agg", "opt"):
            row[f"tokens_{tag}"] = self.tokens_by_tag.get(tag, 0)
        return row

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsRow":
        return cls(iteration=int(d["iteration"]),
                   mean_return=float(d["mean_return"]),
                   std_return=float(d["std_return"]),
                   tokens_by_tag={tag: int(d.get(f"tokens_{tag}", 0))
                                  for tag in ("actor", "critic", "grad", "agg", "opt")})


def iteration_dir(run_dir: Path, iteration: int) -> Path:
    return Path(run_dir) / f"iteration_{iteration:03d}"


def default_policy_texts(env_name: str, n_agents: int) -> list[str]:
    if env_name == "kitchen_grid":
        return [KITCHEN_RUNNER_POLICY, KITCHEN_SERVER_POLICY][:n_agents]
    return [piston_guard_policy(6) for _ in range(n_agents)]


def initial_policies(config: RunConfig, clock: Clock = now_ms) -> list[LanguagePolicy]:
    texts = list(config.initial_policies)
    if not texts:
        texts = default_policy_texts(config.env_name, config.n_agents)
    if len(texts) == 1 and config.n_agents > 1:
        texts = texts * config.n_agents
    if len(texts) != config.n_agents:
        raise ValueError(f"expected {config.n_agents} initial policies, "
                         f"got {len(texts)}")
    return [LanguagePolicy.initial(agent, text, clock)
            for agent, text in enumerate(texts)]


def eval_seeds(config: RunConfig) -> list[int]:
    base = config.seed + EVAL_SEED_OFFSET
    return list(range(base, base + config.rollouts_per_iteration))


def train_seed_base(config: RunConfig, iteration: int) -> int:
    return config.seed + (iteration - 1) * config.rollouts_per_iteration


def _config_to_dict(config: RunConfig) -> dict:
    return {
        "n_agents": config.n_agents,
        "horizon": config.horizon,
        "rollouts_per_iteration": config.rollouts_per_iteration,
        "iterations": config.iterations,
        "env_name": config.env_name,
        "seed": config.seed,
        "discount": config.discount,
        "credit_assignment_enabled": config.credit_assignment_enabled,
        "env_params": dict(config.env_params),
        "critic_per_agent": config.critic_per_agent,
        "gradient_excerpt": config.gradient_excerpt,
        "workers": config.workers,
        "initial_policies": list(config.initial_policies),
        "backend": {
            "kind": config.backend.kind,
            "base_url": config.backend.base_url,
            "model": config.backend.model,
            "api_key_env": config.backend.api_key_env,
            "script_name": config.backend.script_name,
            "seed": config.backend.seed,
            "timeout_ms": config.backend.timeout_ms,
            "max_concurrency": config.backend.max_concurrency,
            "max_attempts": config.backend.retry.max_attempts,
            "backoff_ms": config.backend.retry.backoff_ms,
        },
    }


def config_from_dict(d: Mapping) -> RunConfig:
    from .types import BackendDescriptor, RetryPolicy

    b = d.get("backend", {})
    backend = BackendDescriptor(
        kind=b.get("kind", "scripted"),
        base_url=b.get("base_url", ""),
        model=b.get("model", ""),
        api_key_env=b.get("api_key_env", "TEXTMARL_API_KEY"),
        script_name=b.get("script_name", "piston_expert"),
        seed=b.get("seed", 0),
        retry=RetryPolicy(max_attempts=b.get("max_attempts", 3),
                          backoff_ms=b.get("backoff_ms", 1000)),
        timeout_ms=b.get("timeout_ms", 60_000),
        max_concurrency=b.get("max_concurrency", 8),
    )
    return RunConfig(
        n_agents=d["n_agents"], horizon=d["horizon"],
        rollouts_per_iteration=d["rollouts_per_iteration"],
        iterations=d["iterations"], env_name=d["env_name"],
        seed=d.get("seed", 0), discount=d.get("discount", 1.0),
        backend=backend,
        credit_assignment_enabled=d.get("credit_assignment_enabled", True),
        env_params=dict(d.get("env_params", {})),
        critic_per_agent=d.get("critic_per_agent", False),
        gradient_excerpt=d.get("gradient_excerpt", True),
        workers=d.get("workers", 1),
        initial_policies=tuple(d.get("initial_policies", ())),
    )


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def completed_iterations(run_dir: Path) -> list[int]:
    done = []
    for child in sorted(Path(run_dir).glob("iteration_*")):
        if (child / "metrics.json").exists() and (child / "policies.jsonl").exists():
            done.append(int(child.name.split("_")[1]))
    return sorted(done)


def write_metrics_csv(run_dir: Path) -> Path:
    """Regenerate metrics.csv from the per-iteration metrics records."""
    run_dir = Path(run_dir)
    rows = []
    for iteration in completed_iterations(run_dir):
        payload = json.loads((iteration_dir(run_dir, iteration) / "metrics.json")
                             .read_text(encoding="utf-8"))
        rows.append(MetricsRow.from_dict(payload))
    csv_path = run_dir / "metrics.csv"
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.to_dict())
    return csv_path


def read_metrics_csv(run_dir: Path) -> list[MetricsRow]:
    csv_path = Path(run_dir) / "metrics.csv"
    with csv_path.open("r", encoding="utf-8", newline="") as fh:
        return [MetricsRow.from_dict(row) for row in csv.DictReader(fh)]


@dataclass(frozen=True)
class TrainResult:
    run_dir: Path
    rows: tuple[MetricsRow, ...]
    policies: tuple[LanguagePolicy, ...]


def train(config: RunConfig, run_dir: str | Path, backend: Backend | None = None,
          clock: Clock = now_ms, stop_after: int | None = None,
          log: Callable[[str], None] | None = None) -> TrainResult:
    """Full training loop with persistence and resume.

    Iteration numbering: row 0 is the pre-training baseline evaluation;
    row i is the evaluation after the i-th policy update. A run killed
    between iterations resumes from the last completed one.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    env = make_env(config.env_name, config.n_agents, config.horizon,
                   config.env_params)
    backend = backend if backend is not None else make_backend(config.backend)
    log = log or (lambda message: None)

    config_path = run_dir / "config.json"
    snapshot = _config_to_dict(config)
    if config_path.exists():
        existing = json.loads(config_path.read_text(encoding="utf-8"))
        if existing != snapshot:
            raise ValueError(f"run directory {run_dir} holds a different config; "
                             f"refusing to mix runs")
    else:
        _write_json(config_path, snapshot)

    completed = completed_iterations(run_dir)
    if completed:
        policies = tuple(store.load_policies(
            iteration_dir(run_dir, completed[-1]) / "policies.jsonl"))
        start = completed[-1] + 1
    else:
        policies = tuple(initial_policies(config, clock))
        start = 0

    def evaluate(current: Sequence[LanguagePolicy]) -> tuple[float, float, list[Trajectory]]:
        trajs = []
        for seed in eval_seeds(config):
            trajs.extend(collect_trajectories(env, current, backend, 1, seed,
                                              parallel_actors=config.workers > 1))
        return (mean_return(trajs, config.discount),
                std_return(trajs, config.discount), trajs)

    def tokens_snapshot() -> dict[str, int]:
        return {tag: usage.total for tag, usage in backend.usage.by_tag().items()}

    def persist_iteration(iteration: int, current: Sequence[LanguagePolicy],
                          eval_trajs: list[Trajectory], mean: float, std: float,
                          tokens: dict[str, int],
                          result: IterationResult | None) -> MetricsRow:
        out = iteration_dir(run_dir, iteration)
        out.mkdir(parents=True, exist_ok=True)
        if result is not None:
            store.save_credits(result.credits, out / "credits.jsonl")
            store.save_gradients(result.gradients, out / "gradients.jsonl")
            _write_json(out / "syntheses.json",
                        {str(agent): text
                         for agent, text in enumerate(result.syntheses)})
        store.save_trajectories(eval_trajs, out / "eval_trajectories.jsonl")
        store.save_policies(current, out / "policies.jsonl")
        row = MetricsRow(iteration=iteration, mean_return=mean, std_return=std,
                         tokens_by_tag=tokens)
        # metrics.json is written last: it marks the iteration as complete.
        _write_json(out / "metrics.json", row.to_dict())
        write_metrics_csv(run_dir)
        return row

    rows = [MetricsRow.from_dict(json.loads(
        (iteration_dir(run_dir, i) / "metrics.json").read_text(encoding="utf-8")))
        for i in completed]

    before = tokens_snapshot()
    if start == 0:
        mean, std, eval_trajs = evaluate(policies)
        after = tokens_snapshot()
        tokens = {tag: after[tag] - before[tag] for tag in after}
        rows.append(persist_iteration(0, policies, eval_trajs, mean, std,
                                      tokens, None))
        log(f"iteration 0 (baseline): mean_return={mean:.4f}")
        start = 1
        if stop_after is not None and stop_after == 0:
            return TrainResult(run_dir, tuple(rows), policies)

    for iteration in range(start, config.iterations + 1):
        before = tokens_snapshot()
        try:
            batch = collect_trajectories(
                env, policies, backend, config.rollouts_per_iteration,
                train_seed_base(config, iteration),
                workers=config.workers, parallel_actors=config.workers > 1)
            result = train_iteration(config, policies, batch, backend, env, clock)
        except Exception as exc:
            raise TrainError(iteration, exc) from exc
        policies = result.policies
        mean, std, eval_trajs = evaluate(policies)
        after = tokens_snapshot()
        tokens = {tag: after[tag] - before[tag] for tag in after}

        out = iteration_dir(run_dir, iteration)
        out.mkdir(parents=True, exist_ok=True)
        store.save_trajectories(batch, out / "trajectories.jsonl")
        rows.append(persist_iteration(iteration, policies, eval_trajs, mean,
                                      std, tokens, result))
        log(f"iteration {iteration}: mean_return={mean:.4f}")
        if stop_after is not None and iteration >= stop_after:
            break

    return TrainResult(run_dir, tuple(rows), policies)
