"""Decentralized experience collection.

Runs episodes under the current language policies: at every timestep all N
actor completions are sampled concurrently from the same pre-step state
snapshot, then the joint action is applied atomically. No actor prompt ever
contains another agent's observation or the global state text.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

from .backend import Backend
from .envs.base import Env
from .errors import BatchError, EnvError, EpisodeError, NoActionLine, UnknownAction
from .prompts import parse_actor, render_actor
from .types import Action, LanguagePolicy, TextObservation, Trajectory, Step


def sample_action(backend: Backend, policy: LanguagePolicy, obs: TextObservation,
                  vocabulary: Sequence[str], fallback_action: str = "hold") -> Action:
    """One actor query with the parse-failure fallback contract.

    An unparseable completion is retried once; a second failure yields the
    environment's declared fallback action with the failure recorded on the
    Action, so runs stay deterministic and bad completions are penalized only
    through the environment, never through crashes. Backend errors propagate.
    """
    if policy.agent != obs.agent:
        raise ValueError(f"policy is for agent {policy.agent}, "
                         f"observation for agent {obs.agent}")
    request = render_actor(policy, obs, vocabulary)
    response = backend.complete(request)
    try:
        parsed = parse_actor(response.text, vocabulary)
        return Action(agent=policy.agent, name=parsed.action_name,
                      raw_output=response.text)
    except (NoActionLine, UnknownAction):
        pass
    response = backend.complete(request)
    try:
        parsed = parse_actor(response.text, vocabulary)
        return Action(agent=policy.agent, name=parsed.action_name,
                      raw_output=response.text)
    except (NoActionLine, UnknownAction):
        return Action(agent=policy.agent, name=fallback_action,
                      raw_output=response.text, parse_failure=True)


def trajectory_id(env_name: str, seed: int) -> str:
    return f"{env_name}-s{seed}"


def run_episode(env: Env, policies: Sequence[LanguagePolicy], backend: Backend,
                seed: int, parallel_actors: bool = True) -> Trajectory:
    """One full episode; deterministic given (seed, deterministic backend)."""
    if len(policies) != env.n_agents:
        raise ValueError(f"expected {env.n_agents} policies, got {len(policies)}")
    vocabularies = [env.action_vocabulary(i) for i in range(env.n_agents)]
    state, observations = env.reset(seed)
    steps: list[Step] = []

    def sample(i: int) -> Action:
        return sample_action(backend, policies[i], observations[i],
                             vocabularies[i], env.fallback_action)

    executor = None
    if parallel_actors and env.n_agents > 1:
        executor = ThreadPoolExecutor(max_workers=env.n_agents)
    try:
        while True:
            if executor is not None:
                joint = tuple(executor.map(sample, range(env.n_agents)))
            else:
                joint = tuple(sample(i) for i in range(env.n_agents))
            try:
                outcome = env.step(state, joint)
            except EnvError as exc:
                raise EpisodeError(f"episode seed={seed} aborted at step "
                                   f"{len(steps)}: {exc}",
                                   partial_steps=steps) from exc
            steps.append(Step(index=len(steps), observations=tuple(observations),
                              joint_action=joint, reward=outcome.reward))
            state, observations = outcome.state, outcome.observations
            if outcome.done:
                break
    finally:
        if executor is not None:
            executor.shutdown(wait=False)

    return Trajectory(id=trajectory_id(env.name, seed), env_name=env.name,
                      seed=seed, steps=tuple(steps),
                      final_observations=tuple(observations))


def collect_trajectories(env: Env, policies: Sequence[LanguagePolicy],
                         backend: Backend, k: int, base_seed: int,
                         workers: int = 1,
                         parallel_actors: bool = True) -> list[Trajectory]:
    """K episodes with seeds base_seed..base_seed+K-1, returned in seed order.

    Fail-fast: any episode failure fails the whole batch (silently dropping
    episodes would bias the Monte Carlo batch), with the trajectories that
    did complete attached to the error.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    seeds = list(range(base_seed, base_seed + k))
    if workers <= 1:
        completed: list[Trajectory] = []
        for seed in seeds:
            try:
                completed.append(run_episode(env, policies, backend, seed,
                                             parallel_actors))
            except Exception as exc:
                raise BatchError(f"episode seed={seed} failed: {exc}",
                                 completed=completed) from exc
        return completed

    results: dict[int, Trajectory] = {}
    failure: Exception | None = None
    with ThreadPoolExecutor(max_workers=min(workers, k)) as pool:
        futures = {seed: pool.submit(run_episode, env, policies, backend, seed,
                                     parallel_actors)
                   for seed in seeds}
        for seed in seeds:
            try:
                results[seed] = futures[seed].result()
            except Exception as exc:  # noqa: BLE001 - fail fast with context
                failure = failure or exc
    if failure is not None:
        raise BatchError(f"batch failed: {failure}",
                         completed=[results[s] for s in seeds if s in results]
                         ) from failure
    return [results[seed] for seed in seeds]
