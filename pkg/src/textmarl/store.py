"""Line-delimited persistence for trajectories and policy snapshots.

One JSON record per line so runs can stream and append safely. Loading is
all-or-nothing: a malformed line raises with its line number and no partial
result is returned.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

from .errors import TrajectoryStoreError
from .types import (
    Action,
    LanguageCredit,
    LanguageGradient,
    LanguagePolicy,
    Polarity,
    PolicyRevision,
    Step,
    TextObservation,
    Trajectory,
)

SCHEMA_VERSION = 1


def _obs_to_dict(obs: TextObservation) -> dict:
    return {"agent": obs.agent, "step": obs.step, "text": obs.text}


def _obs_from_dict(d: dict) -> TextObservation:
    return TextObservation(agent=d["agent"], step=d["step"], text=d["text"])


def _action_to_dict(a: Action) -> dict:
    return {"agent": a.agent, "name": a.name, "raw_output": a.raw_output,
            "parse_failure": a.parse_failure}


def _action_from_dict(d: dict) -> Action:
    return Action(agent=d["agent"], name=d["name"], raw_output=d["raw_output"],
                  parse_failure=d.get("parse_failure", False))


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "id": traj.id,
        "env_name": traj.env_name,
        "seed": traj.seed,
        "steps": [
            {
                "index": s.index,
                "observations": [_obs_to_dict(o) for o in s.observations],
                "joint_action": [_action_to_dict(a) for a in s.joint_action],
                "reward": s.reward,
            }
            for s in traj.steps
        ],
        "final_observations": [_obs_to_dict(o) for o in traj.final_observations],
    }


def trajectory_from_dict(d: dict) -> Trajectory:
    return Trajectory(
        id=d["id"],
        env_name=d["env_name"],
        seed=d["seed"],
        steps=tuple(
            Step(
                index=s["index"],
                observations=tuple(_obs_from_dict(o) for o in s["observations"]),
                joint_action=tuple(_action_from_dict(a) for a in s["joint_action"]),
                reward=s["reward"],
            )
            for s in d["steps"]
        ),
        final_observations=tuple(_obs_from_dict(o) for o in d["final_observations"]),
    )


def _dump_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


def save_trajectories(trajectories: Iterable[Trajectory], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for traj in trajectories:
            fh.write(_dump_line(trajectory_to_dict(traj)) + "\n")


def load_trajectories(path: str | Path) -> list[Trajectory]:
    path = Path(path)
    out: list[Trajectory] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip() == "":
                continue
            if not line.endswith("\n"):
                raise TrajectoryStoreError("truncated record (missing newline)", lineno)
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TrajectoryStoreError(f"invalid JSON ({exc.msg})", lineno) from exc
            try:
                if record.get("schema_version") != SCHEMA_VERSION:
                    raise TrajectoryStoreError(
                        f"unsupported schema_version {record.get('schema_version')!r}",
                        lineno)
                out.append(trajectory_from_dict(record))
            except TrajectoryStoreError:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                raise TrajectoryStoreError(f"invalid record ({exc})", lineno) from exc
    return out


def append_trajectory(trajectory: Trajectory, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(_dump_line(trajectory_to_dict(trajectory)) + "\n")


# --- policy snapshots: one record per (agent, version) ---

def save_policies(policies: Sequence[LanguagePolicy], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for policy in policies:
            for rev in policy.history:
                fh.write(_dump_line({
                    "agent": policy.agent,
                    "version": rev.version,
                    "text": rev.text,
                    "timestamp_ms": rev.timestamp_ms,
                }) + "\n")


def load_policies(path: str | Path) -> list[LanguagePolicy]:
    """Rebuild each agent's policy (latest version) from its snapshot rows."""
    path = Path(path)
    revisions: dict[int, list[PolicyRevision]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip() == "":
                continue
            try:
                d = json.loads(line)
                revisions.setdefault(d["agent"], []).append(
                    PolicyRevision(d["version"], d["text"], d["timestamp_ms"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise TrajectoryStoreError(f"invalid policy record ({exc})", lineno) from exc
    policies = []
    for agent in sorted(revisions):
        history = tuple(sorted(revisions[agent], key=lambda r: r.version))
        policies.append(LanguagePolicy(agent=agent, text=history[-1].text,
                                       version=history[-1].version, history=history))
    return policies


# --- credits and gradients, persisted as the run's interpretability record ---

def save_credits(credits: Sequence[LanguageCredit], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for c in credits:
            fh.write(_dump_line({
                "trajectory_id": c.trajectory_id, "agent": c.agent,
                "text": c.text, "polarity": c.polarity.value,
            }) + "\n")


def load_credits(path: str | Path) -> list[LanguageCredit]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip() == "":
                continue
            d = json.loads(line)
            out.append(LanguageCredit(trajectory_id=d["trajectory_id"], agent=d["agent"],
                                      text=d["text"], polarity=Polarity(d["polarity"])))
    return out


def save_gradients(gradients: Sequence[LanguageGradient], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for g in gradients:
            fh.write(_dump_line({
                "trajectory_id": g.trajectory_id, "agent": g.agent, "text": g.text,
            }) + "\n")


def load_gradients(path: str | Path) -> list[LanguageGradient]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip() == "":
                continue
            d = json.loads(line)
            out.append(LanguageGradient(trajectory_id=d["trajectory_id"],
                                        agent=d["agent"], text=d["text"]))
    return out
