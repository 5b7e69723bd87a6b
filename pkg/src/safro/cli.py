"""Experiment runner: data generation, training, evaluation, sweeps, reports.

Every subcommand reads one JSON config (defaults apply when omitted),
accepts dotted-path overrides via --set, and writes a manifest recording
the resolved config and its hash. Metric files (JSONL traces, JSON reports,
CSV tables) contain no timestamps, so identical config and seed reproduce
them byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, report as report_mod
from .config import ConfigError, ExperimentConfig, config_hash, load_config
from .core import SeededRng
from .drpo import train as drpo_train
from .evaluation import (
    alpha_sensitivity,
    evaluate_fixed_weights,
    evaluate_policy,
    report_text,
)
from .experiment import (
    VARIANTS,
    SafroRolloutEnv,
    apply_variant,
    reward_model_dataset,
    split_pool,
)
from .policy import FusionPolicy
from .runio import Manifest, atomic_path, write_json, write_jsonl
from .satisfaction import load_reward_model, save_reward_model, train_reward_model
from .simenv import SearchEnvironment, read_logged_jsonl, write_logged_jsonl

SWEEP_PARAMS = {
    "G": "drpo.group_size",
    "group_size": "drpo.group_size",
    "beta_h": "drpo.entropy_coef",
    "entropy_coef": "drpo.entropy_coef",
    "alpha": "sat.alpha",
}


class CliError(RuntimeError):
    pass


def _master_rng(cfg: ExperimentConfig) -> SeededRng:
    return SeededRng(cfg.env.seed)


def _uniform_weights(cfg: ExperimentConfig) -> list[float]:
    k = cfg.env.task_count
    return [1.0 / k] * k


def _load_run(args) -> tuple[ExperimentConfig, dict, Path]:
    cfg, resolved = load_config(args.config, args.set or (), seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return cfg, resolved, out_dir


def _manifest(args, subcommand: str, resolved: dict, cfg: ExperimentConfig) -> Manifest:
    return Manifest(
        subcommand=subcommand,
        config_dict=resolved,
        config_hash=config_hash(resolved),
        seed=cfg.env.seed,
        code_version=__version__,
        argv=sys.argv[1:],
    )


# -- subcommands -------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg, resolved, out_dir = _load_run(args)
    manifest = _manifest(args, "gen-data", resolved, cfg)
    env = SearchEnvironment(cfg.env)
    logged = env.log_pool(_uniform_weights(cfg), _master_rng(cfg).split("log"))
    path = out_dir / "episodes.jsonl"
    with atomic_path(path) as tmp:
        write_logged_jsonl(tmp, logged)
    manifest.add_output(path)
    manifest.finish(out_dir)
    print(f"wrote {len(logged)} episodes to {path}")
    return 0


def _episodes_path(args, out_dir: Path) -> Path:
    path = Path(args.episodes) if args.episodes else out_dir / "episodes.jsonl"
    if not path.exists():
        raise CliError(f"episode log {path} not found; run gen-data first")
    return path


def cmd_train_reward_model(args) -> int:
    cfg, resolved, out_dir = _load_run(args)
    manifest = _manifest(args, "train-reward-model", resolved, cfg)
    logged = read_logged_jsonl(_episodes_path(args, out_dir))
    train_count = len(logged) - cfg.evaluation.heldout_count
    if train_count < 1:
        raise CliError("episode log smaller than the held-out count")
    dataset = reward_model_dataset(logged[:train_count], cfg.sat)
    params, losses = train_reward_model(
        dataset, cfg.reward_model, _master_rng(cfg).split("rm-train")
    )
    model_path = out_dir / "reward_model.bin"
    with atomic_path(model_path) as tmp:
        save_reward_model(tmp, params, cfg.sat, cfg.reward_model)
        tmp.with_suffix(".json").replace(model_path.with_suffix(".json"))
    loss_path = out_dir / "reward_model_loss.jsonl"
    write_jsonl(loss_path, ({"epoch": i, "loss": l} for i, l in enumerate(losses)))
    for p in (model_path, model_path.with_suffix(".json"), loss_path):
        manifest.add_output(p)
    manifest.finish(out_dir)
    print(f"reward model trained on {train_count} episodes; final loss {losses[-1]:.6f}")
    return 0


def _maybe_reward_model(args, out_dir: Path, required: bool):
    path = Path(args.reward_model) if args.reward_model else out_dir / "reward_model.bin"
    if not path.exists():
        if required:
            raise CliError(
                f"reward model {path} not found; run train-reward-model first"
            )
        return None
    params, _, _ = load_reward_model(path)
    return params


def cmd_train_policy(args) -> int:
    cfg, resolved, out_dir = _load_run(args)
    manifest = _manifest(args, "train-policy", resolved, cfg)
    variant = args.variant
    policy_cfg, drpo_cfg, include_sat = apply_variant(
        variant, cfg.policy_config(), cfg.drpo
    )
    reward_model = _maybe_reward_model(args, out_dir, required=include_sat)
    env = SearchEnvironment(cfg.env)
    train_entries, _ = split_pool(env.episode_pool(), cfg.evaluation.heldout_count)
    rollout = SafroRolloutEnv(
        env,
        train_entries,
        cfg.reward,
        reward_model=reward_model if include_sat else None,
        include_satisfaction=include_sat,
    )
    rng = _master_rng(cfg)
    policy = FusionPolicy(
        policy_cfg, cfg.action_space(), rng=rng.split("policy-init")
    )
    tag = variant.replace("-", "_")
    trace_path = out_dir / f"train_trace_{tag}.jsonl"
    with atomic_path(trace_path) as tmp_trace:
        policy, metrics = drpo_train(
            rollout,
            policy,
            drpo_cfg,
            rng.split("policy-train"),
            trace_path=tmp_trace,
            checkpoint_dir=out_dir if drpo_cfg.checkpoint_every > 0 else None,
        )
    policy_path = out_dir / f"policy_{tag}.bin"
    with atomic_path(policy_path) as tmp:
        policy.save(tmp)
        tmp.with_suffix(".json").replace(policy_path.with_suffix(".json"))
    for p in (policy_path, policy_path.with_suffix(".json"), trace_path):
        manifest.add_output(p)
    manifest.finish(out_dir)
    print(
        f"trained variant {variant} for {drpo_cfg.iterations} iterations; "
        f"final mean reward {metrics[-1].mean_reward:.4f}"
    )
    return 0


def cmd_evaluate(args) -> int:
    cfg, resolved, out_dir = _load_run(args)
    manifest = _manifest(args, "evaluate", resolved, cfg)
    env = SearchEnvironment(cfg.env)
    _, heldout = split_pool(env.episode_pool(), cfg.evaluation.heldout_count)
    reward_model = _maybe_reward_model(args, out_dir, required=False)
    rng = _master_rng(cfg).split("eval")
    if args.policy:
        policy_path = Path(args.policy)
        if not policy_path.exists():
            raise CliError(f"policy checkpoint {policy_path} not found")
        policy = FusionPolicy.load(policy_path)
        name = args.name or policy_path.stem.removeprefix("policy_")
        report = evaluate_policy(policy, reward_model, env, heldout, cfg.reward, rng)
    else:
        name = args.name or "baseline"
        report = evaluate_fixed_weights(
            _uniform_weights(cfg), reward_model, env, heldout, cfg.reward, rng
        )
    json_path = out_dir / f"report_{name}.json"
    write_json(json_path, report)
    text_path = out_dir / f"report_{name}.txt"
    with atomic_path(text_path) as tmp:
        tmp.write_text(report_text(report))
    manifest.add_output(json_path)
    manifest.add_output(text_path)
    manifest.finish(out_dir)
    print(report_text(report), end="")
    return 0


def _run_sweep_value(resolved: dict, dotted: str, value, subdir: str,
                     variant: str, reward_model_path: str | None) -> str:
    """Train and evaluate one sweep point (runs in a worker process)."""
    from .config import build_config

    merged = json.loads(json.dumps(resolved))
    section, leaf = dotted.split(".")
    merged[section][leaf] = value
    cfg = build_config(merged)
    out_dir = Path(subdir)
    out_dir.mkdir(parents=True, exist_ok=True)

    policy_cfg, drpo_cfg, include_sat = apply_variant(
        variant, cfg.policy_config(), cfg.drpo
    )
    reward_model = None
    if reward_model_path is not None:
        reward_model, _, _ = load_reward_model(reward_model_path)
    env = SearchEnvironment(cfg.env)
    train_entries, heldout = split_pool(env.episode_pool(), cfg.evaluation.heldout_count)
    rollout = SafroRolloutEnv(
        env,
        train_entries,
        cfg.reward,
        reward_model=reward_model if include_sat else None,
        include_satisfaction=include_sat,
    )
    rng = SeededRng(cfg.env.seed)
    policy = FusionPolicy(policy_cfg, cfg.action_space(), rng=rng.split("policy-init"))
    tag = out_dir.name
    with atomic_path(out_dir / f"train_trace_{tag}.jsonl") as tmp_trace:
        policy, _ = drpo_train(
            rollout, policy, drpo_cfg, rng.split("policy-train"), trace_path=tmp_trace
        )
    report = evaluate_policy(
        policy, reward_model, env, heldout, cfg.reward, rng.split("eval")
    )
    write_json(out_dir / f"report_{tag}.json", report)
    return str(out_dir)


def cmd_sweep(args) -> int:
    cfg, resolved, out_dir = _load_run(args)
    manifest = _manifest(args, "sweep", resolved, cfg)
    if args.param not in SWEEP_PARAMS:
        raise CliError(
            f"unknown sweep parameter {args.param!r}; choose from {sorted(SWEEP_PARAMS)}"
        )
    dotted = SWEEP_PARAMS[args.param]
    values = []
    for raw in args.values.split(","):
        raw = raw.strip()
        values.append(json.loads(raw))
    sweep_dir = out_dir / f"sweep_{dotted.split('.')[1]}"
    leaf = dotted.split(".")[1]

    if dotted == "sat.alpha":
        # correlation analysis over the logged pool; no retraining involved
        logged = read_logged_jsonl(_episodes_path(args, out_dir))
        episodes = [l.episode for l in logged]
        result = alpha_sensitivity(episodes, values, cfg.sat)
        for point in result.points:
            tag = f"alpha={point.alpha:g}"
            point_dir = sweep_dir / tag
            point_dir.mkdir(parents=True, exist_ok=True)
            path = point_dir / f"report_{tag}.json"
            write_json(path, point.to_dict())
            manifest.add_output(path)
        summary = sweep_dir / "alpha_summary.json"
        write_json(
            summary,
            {
                "best_alpha": result.best_alpha,
                "points": [p.to_dict() for p in result.points],
            },
        )
        manifest.add_output(summary)
        manifest.finish(out_dir)
        print(f"alpha sweep done; best alpha {result.best_alpha}")
        return 0

    reward_model_path = (
        Path(args.reward_model) if args.reward_model else out_dir / "reward_model.bin"
    )
    if not reward_model_path.exists():
        raise CliError(
            f"reward model {reward_model_path} not found; run train-reward-model first"
        )
    jobs = []
    for value in values:
        tag = f"{leaf}={value:g}" if isinstance(value, float) else f"{leaf}={value}"
        jobs.append(
            (resolved, dotted, value, str(sweep_dir / tag), args.variant,
             str(reward_model_path))
        )
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            done = list(pool.map(_run_sweep_value, *zip(*jobs)))
    else:
        done = [_run_sweep_value(*job) for job in jobs]
    for d in done:
        manifest.add_output(d)
    manifest.finish(out_dir)
    print(f"swept {leaf} over {values}; results under {sweep_dir}")
    return 0


def cmd_report(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    directories = args.runs or [out_dir]
    reports = report_mod.collect_reports(directories)
    if not reports:
        raise CliError(f"no report_*.json files found under {directories}")
    csv_path = out_dir / "comparison.csv"
    report_mod.write_comparison_csv(reports, csv_path)
    traces = report_mod.collect_traces(directories)
    figures = report_mod.render_figures(reports, traces, out_dir / "figures")
    print(f"wrote {csv_path} and {len(figures)} figures to {out_dir / 'figures'}")
    return 0


# -- argument parsing ---------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; defaults apply when omitted")
    p.add_argument("--seed", type=int, default=None, help="override env.seed")
    p.add_argument("--out-dir", default="runs/default", help="run directory")
    p.add_argument(
        "--set",
        action="append",
        metavar="PATH=VALUE",
        help="dotted config override, e.g. drpo.group_size=8",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safro",
        description="Satisfaction-aware rank fusion workbench",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-data", help="log the synthetic episode pool to JSONL")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-reward-model", help="fit the satisfaction reward model")
    _add_common(p)
    p.add_argument("--episodes", help="episode JSONL (default out-dir/episodes.jsonl)")
    p.set_defaults(func=cmd_train_reward_model)

    p = sub.add_parser("train-policy", help="train the fusion policy")
    _add_common(p)
    p.add_argument("--variant", choices=VARIANTS, default="full")
    p.add_argument(
        "--reward-model", help="reward model checkpoint (default out-dir/reward_model.bin)"
    )
    p.set_defaults(func=cmd_train_policy)

    p = sub.add_parser("evaluate", help="evaluate a policy or the uniform baseline")
    _add_common(p)
    p.add_argument("--policy", help="policy checkpoint; omit for the uniform baseline")
    p.add_argument(
        "--reward-model", help="reward model checkpoint (default out-dir/reward_model.bin)"
    )
    p.add_argument("--name", help="report name (default from the policy file)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid over group size, entropy coefficient, or alpha")
    _add_common(p)
    p.add_argument("--param", required=True, help=f"one of {sorted(SWEEP_PARAMS)}")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--variant", choices=VARIANTS, default="full")
    p.add_argument("--reward-model", help="reward model checkpoint for trained sweeps")
    p.add_argument("--episodes", help="episode JSONL for the alpha sweep")
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="merge reports into a CSV table and figures")
    p.add_argument("--out-dir", default="runs/default")
    p.add_argument("--runs", nargs="*", help="directories to scan (default out-dir)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
