"""Run configuration: TOML file, defaults, and --set overrides.

Precedence is CLI overrides > file values > defaults. Override paths are
dotted (``backend.kind=scripted``); values parse as TOML scalars with a
plain-string fallback.
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .types import BackendDescriptor, RetryPolicy, RunConfig

_RUN_DEFAULTS: dict[str, Any] = {
    "env_name": "piston_line",
    "n_agents": 5,
    "horizon": 30,
    "rollouts_per_iteration": 3,
    "iterations": 3,
    "seed": 0,
    "discount": 1.0,
    "credit_assignment_enabled": True,
    "critic_per_agent": False,
    "gradient_excerpt": True,
    "workers": 1,
    "initial_policies": [],
}

_BACKEND_DEFAULTS: dict[str, Any] = {
    "kind": "scripted",
    "base_url": "",
    "model": "",
    "api_key_env": "TEXTMARL_API_KEY",
    "script_name": "piston_expert+echo_critic+threshold_optimizer",
    "seed": 0,
    "timeout_ms": 60_000,
    "max_attempts": 3,
    "backoff_ms": 1000,
    "max_concurrency": 8,
}


def parse_override(item: str) -> tuple[str, Any]:
    """Parse one ``path=value`` override; value is a TOML scalar if possible."""
    if "=" not in item:
        raise ConfigError(item, "override must look like path=value")
    path, raw = item.split("=", 1)
    path = path.strip()
    if not path:
        raise ConfigError(item, "override path is empty")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return path, value


def _apply_override(tree: dict, path: str, value: Any) -> None:
    keys = path.split(".")
    node = tree
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(path, "override path crosses a scalar")
    node[keys[-1]] = value


def load_config(path: str | Path | None = None,
                overrides: Sequence[str] = ()) -> RunConfig:
    tree: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(str(path), "config file not found")
        try:
            tree = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(str(path), f"invalid TOML: {exc}") from exc
    for item in overrides:
        key, value = parse_override(item)
        _apply_override(tree, key, value)
    return build_config(tree)


def _typed(section: str, table: Mapping, key: str, default: Any) -> Any:
    value = table.get(key, default)
    field = f"{section}.{key}" if section else key
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(field, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(field, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(field, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(field, f"expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if isinstance(value, str):
            return [value]
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(field, f"expected a list of strings, got {value!r}")
        return list(value)
    return value


def build_config(tree: Mapping[str, Any]) -> RunConfig:
    run = dict(tree.get("run", {}))
    backend_table = dict(tree.get("backend", {}))
    env_table = dict(tree.get("env", {}))

    unknown = set(run) - set(_RUN_DEFAULTS)
    if unknown:
        raise ConfigError(f"run.{sorted(unknown)[0]}", "unknown field")
    unknown = set(backend_table) - set(_BACKEND_DEFAULTS)
    if unknown:
        raise ConfigError(f"backend.{sorted(unknown)[0]}", "unknown field")

    values = {key: _typed("run", run, key, default)
              for key, default in _RUN_DEFAULTS.items()}
    backend_values = {key: _typed("backend", backend_table, key, default)
                      for key, default in _BACKEND_DEFAULTS.items()}

    try:
        retry = RetryPolicy(max_attempts=backend_values["max_attempts"],
                            backoff_ms=backend_values["backoff_ms"])
        backend = BackendDescriptor(
            kind=backend_values["kind"],
            base_url=backend_values["base_url"],
            model=backend_values["model"],
            api_key_env=backend_values["api_key_env"],
            script_name=backend_values["script_name"],
            seed=backend_values["seed"],
            retry=retry,
            timeout_ms=backend_values["timeout_ms"],
            max_concurrency=backend_values["max_concurrency"],
        )
    except ValueError as exc:
        raise ConfigError("backend", str(exc)) from exc

    for key, value in env_table.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"env.{key}", f"expected a number, got {value!r}")

    return RunConfig(
        n_agents=values["n_agents"],
        horizon=values["horizon"],
        rollouts_per_iteration=values["rollouts_per_iteration"],
        iterations=values["iterations"],
        env_name=values["env_name"],
        seed=values["seed"],
        discount=values["discount"],
        backend=backend,
        credit_assignment_enabled=values["credit_assignment_enabled"],
        env_params=dict(env_table),
        initial_policies=tuple(values["initial_policies"]),
        critic_per_agent=values["critic_per_agent"],
        gradient_excerpt=values["gradient_excerpt"],
        workers=values["workers"],
    )
