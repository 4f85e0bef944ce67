"""Command-line entry point.

Subcommands: train, rollout, eval, inspect, plot. Exit codes: 0 success,
1 usage or validation failure, 2 runtime failure. Every command is
re-runnable: repeating it with the same inputs does not corrupt a run
directory.
"""

from __future__ import annotations

import argparse
import difflib
import json
import sys
from pathlib import Path

from . import learning, store
from .backend import make_backend
from .config import load_config
from .envs import make_env
from .errors import ConfigError, TextmarlError
from .returns import mean_return, std_return
from .rollout import collect_trajectories

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textmarl",
        description="Cooperative multi-agent training in language space.")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run the full training loop")
    train.add_argument("--config", required=True, help="TOML run file")
    train.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="PATH=VALUE", help="override a config field")
    train.add_argument("--run-dir", default=None, help="output directory")

    rollout = sub.add_parser("rollout", help="collect trajectories only")
    rollout.add_argument("--config", required=True)
    rollout.add_argument("--set", dest="overrides", action="append", default=[])
    rollout.add_argument("--episodes", type=int, default=None,
                         help="number of episodes (default: config K)")
    rollout.add_argument("--run-dir", default=None)

    evaluate = sub.add_parser("eval", help="evaluate the latest policies of a run")
    evaluate.add_argument("--run-dir", required=True)
    evaluate.add_argument("--episodes", type=int, default=None)

    inspect = sub.add_parser("inspect",
                             help="show credits, gradients, and the policy diff")
    inspect.add_argument("--run-dir", required=True)
    inspect.add_argument("--iteration", type=int, required=True)
    inspect.add_argument("--agent", type=int, required=True)

    plot = sub.add_parser("plot", help="plot learning curves")
    plot.add_argument("run_dirs", nargs="+", metavar="RUN_DIR")
    plot.add_argument("--out", required=True, help="output image path")
    return parser


def _default_run_dir(config) -> Path:
    return Path("runs") / f"{config.env_name}-seed{config.seed}"


def cmd_train(args) -> int:
    config = load_config(args.config, args.overrides)
    run_dir = Path(args.run_dir) if args.run_dir else _default_run_dir(config)
    result = learning.train(config, run_dir, log=print)
    print(f"run complete: {len(result.rows)} metrics rows in {run_dir}")
    return EXIT_OK


def cmd_rollout(args) -> int:
    config = load_config(args.config, args.overrides)
    k = args.episodes if args.episodes is not None else config.rollouts_per_iteration
    if k < 1:
        raise ConfigError("episodes", "must be >= 1")
    run_dir = Path(args.run_dir) if args.run_dir else _default_run_dir(config)
    run_dir.mkdir(parents=True, exist_ok=True)
    env = make_env(config.env_name, config.n_agents, config.horizon,
                   config.env_params)
    backend = make_backend(config.backend)
    policies = learning.initial_policies(config)
    batch = collect_trajectories(env, policies, backend, k, config.seed,
                                 workers=config.workers)
    out = run_dir / "trajectories.jsonl"
    store.save_trajectories(batch, out)
    print(f"wrote {len(batch)} trajectories to {out} "
          f"(mean return {mean_return(batch, config.discount):.4f})")
    return EXIT_OK


def _load_run(run_dir: Path):
    config_path = run_dir / "config.json"
    if not config_path.exists():
        raise ConfigError(str(run_dir), "not a run directory (missing config.json)")
    config = learning.config_from_dict(
        json.loads(config_path.read_text(encoding="utf-8")))
    completed = learning.completed_iterations(run_dir)
    if not completed:
        raise ConfigError(str(run_dir), "run has no completed iterations")
    return config, completed


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    config, completed = _load_run(run_dir)
    policies = store.load_policies(
        learning.iteration_dir(run_dir, completed[-1]) / "policies.jsonl")
    env = make_env(config.env_name, config.n_agents, config.horizon,
                   config.env_params)
    backend = make_backend(config.backend)
    episodes = args.episodes or config.rollouts_per_iteration
    if args.episodes is None:
        seeds = learning.eval_seeds(config)
    else:
        base = config.seed + learning.EVAL_SEED_OFFSET
        seeds = list(range(base, base + episodes))
    trajectories = []
    for seed in seeds:
        trajectories.extend(collect_trajectories(env, policies, backend, 1, seed))
    mean = mean_return(trajectories, config.discount)
    std = std_return(trajectories, config.discount)
    print(f"iteration {completed[-1]} policies over {len(trajectories)} episodes: "
          f"mean_return={mean!r} std_return={std!r}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    run_dir = Path(args.run_dir)
    config, completed = _load_run(run_dir)
    iteration, agent = args.iteration, args.agent
    if iteration not in completed or iteration < 1:
        raise ConfigError("iteration", f"iteration {iteration} is not a completed "
                                       f"training iteration of this run")
    if not 0 <= agent < config.n_agents:
        raise ConfigError("agent", f"agent {agent} out of range "
                                   f"[0, {config.n_agents})")
    folder = learning.iteration_dir(run_dir, iteration)
    credits = [c for c in store.load_credits(folder / "credits.jsonl")
               if c.agent == agent]
    gradients = [g for g in store.load_gradients(folder / "gradients.jsonl")
                 if g.agent == agent]
    syntheses = json.loads((folder / "syntheses.json").read_text(encoding="utf-8"))
    policies_now = store.load_policies(folder / "policies.jsonl")
    policy = next(p for p in policies_now if p.agent == agent)

    print(f"=== iteration {iteration}, agent {agent} ===")
    for credit in credits:
        print(f"[credit | {credit.trajectory_id} | {credit.polarity.value}]")
        print(credit.text)
    for gradient in gradients:
        print(f"[gradient | {gradient.trajectory_id}]")
        print(gradient.text)
    print("[synthesis]")
    print(syntheses.get(str(agent), ""))
    print("[policy diff]")
    prior = policy.history[iteration - 1].text if iteration - 1 < len(policy.history) else ""
    diff = difflib.unified_diff(prior.splitlines(), policy.history[iteration].text.splitlines(),
                                fromfile=f"policy-v{iteration - 1}",
                                tofile=f"policy-v{iteration}", lineterm="")
    print("\n".join(diff) or "(no textual change)")
    return EXIT_OK


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    curves = []
    for run_dir in args.run_dirs:
        run_dir = Path(run_dir)
        csv_path = run_dir / "metrics.csv"
        if not csv_path.exists():
            raise ConfigError(str(run_dir), "missing metrics.csv")
        rows = learning.read_metrics_csv(run_dir)
        if not rows:
            raise ConfigError(str(run_dir), "metrics.csv has no rows")
        curves.append((run_dir.name, rows))

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, rows in curves:
        xs = [r.iteration for r in rows]
        ys = [r.mean_return for r in rows]
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean return")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)

    # Always emit a CSV sidecar so headless CI can assert the numbers.
    sidecar = out.with_suffix(".csv")
    with sidecar.open("w", encoding="utf-8", newline="") as fh:
        fh.write("run,iteration,mean_return,std_return\n")
        for name, rows in curves:
            for row in rows:
                fh.write(f"{name},{row.iteration},{row.mean_return!r},"
                         f"{row.std_return!r}\n")
    print(f"wrote {out} and {sidecar}")
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "rollout": cmd_rollout,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TextmarlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
