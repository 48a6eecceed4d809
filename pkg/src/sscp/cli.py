"""Command-line front door: data generation, training, evaluation, sweeps.

Every run writes its resolved configuration, the package version, a JSONL
metric log, and checkpoints into its own output directory, which is enough
to reproduce it bit for bit. Exit codes: 0 success, 1 runtime abort,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

import sscp
from sscp.config import (
    COMMANDS,
    ConfigError,
    ExperimentConfig,
    apply_text,
    clone_config,
    from_text,
    set_key,
    to_text,
    validate,
)
from sscp.data import generate_dataset, load_dataset, normalized_score, reference_scores
from sscp.envs import make_env
from sscp.flow import CompletionArch, CompletionModel
from sscp.gcrl import (
    GCConfig,
    HierarchyPolicy,
    PolicyArch,
    evaluate_goal_policy,
    run_gcrl,
)
from sscp.logio import read_jsonl
from sscp.nn.params import load_checkpoint
from sscp.sscql import (
    TrainingError,
    bench_inference,
    evaluate_policy,
    run_offline,
    run_offline_to_online,
    run_online,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sscp",
        description="One-shot completion policies: datasets, training, evaluation.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", metavar="PATH", help="flat key = value file")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--out", metavar="DIR", help="override the output directory")
    parser.add_argument(
        "--set",
        metavar="KEY=VALUE",
        action="append",
        default=[],
        dest="overrides",
        help="override one config key (repeatable)",
    )
    parser.add_argument(
        "--inference", choices=("flat", "hier"), help="goal-policy eval mode"
    )
    return parser


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        apply_text(cfg, path.read_text(encoding="utf-8"))
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, raw = item.partition("=")
        set_key(cfg, key.strip(), raw.strip())
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.inference is not None:
        cfg.inference = args.inference
    cfg.command = args.command
    validate(cfg)
    return cfg


def _prepare_out(cfg: ExperimentConfig) -> Path:
    """Create the run directory and echo the resolved config before running."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(to_text(cfg), encoding="utf-8")
    (out / "version.txt").write_text(f"sscp {sscp.__version__}\n", encoding="utf-8")
    return out


def _need_dataset(cfg: ExperimentConfig):
    if not cfg.dataset:
        raise ConfigError(f"command {cfg.command!r} requires the 'dataset' key")
    return load_dataset(cfg.dataset)


def _run_training(cfg: ExperimentConfig) -> dict:
    """Dispatch one training command; returns the summary printed as JSON."""
    ds = None
    if cfg.command != "train-online":
        ds = _need_dataset(cfg)
        cfg.env = ds.meta.env  # echoed config names the env actually trained on
    out = _prepare_out(cfg)
    if cfg.command == "train-gcrl":
        result = run_gcrl(ds, cfg.gcrl, cfg.seed, out)
        return {
            "command": cfg.command,
            "out": str(out),
            "steps": result.steps,
            "success_flat": result.success_flat,
            "success_hier": result.success_hier,
            "per_goal_flat": result.per_goal_flat,
            "per_goal_hier": result.per_goal_hier,
        }
    if cfg.command == "train-bc":
        result = run_offline(ds, replace(cfg.train, q_term=False), cfg.seed, out)
    elif cfg.command == "train-offline":
        result = run_offline(ds, cfg.train, cfg.seed, out)
    elif cfg.command == "finetune":
        result = run_offline_to_online(ds, cfg.train, cfg.seed, out)
    elif cfg.command == "train-online":
        result = run_online(cfg.env, cfg.train, cfg.seed, out)
    else:
        raise ConfigError(f"{cfg.command!r} is not a training command")
    return {
        "command": cfg.command,
        "out": str(out),
        "steps": result.steps,
        "final_return": result.final_return,
        "final_score": result.final_score,
    }


def _cmd_gen_data(cfg: ExperimentConfig) -> dict:
    out = _prepare_out(cfg)
    meta = generate_dataset(
        cfg.env, cfg.tag, cfg.n_transitions, cfg.seed, out,
        traj_len=cfg.traj_len or None,
    )
    return {
        "command": "gen-data",
        "out": str(out),
        "env": meta.env,
        "tag": meta.tag,
        "n_transitions": meta.n_transitions,
        "n_trajectories": meta.n_trajectories,
        "behavior_return_mean": meta.behavior_return_mean,
    }


def _run_dir_of(cfg: ExperimentConfig) -> Path:
    if not cfg.checkpoint:
        raise ConfigError(f"command {cfg.command!r} requires the 'checkpoint' key")
    path = Path(cfg.checkpoint)
    run_dir = path.parent if path.suffix == ".ckpt" else path
    if not (run_dir / "config.txt").exists():
        raise ConfigError(f"{run_dir} has no config.txt; point 'checkpoint' at a run directory")
    return run_dir


def _load_run(cfg: ExperimentConfig) -> tuple[ExperimentConfig, dict, Path]:
    run_dir = _run_dir_of(cfg)
    saved = from_text((run_dir / "config.txt").read_text(encoding="utf-8"))
    ckpt = Path(cfg.checkpoint)
    if ckpt.suffix != ".ckpt":
        ckpt = run_dir / "checkpoint_final.ckpt"
    return saved, load_checkpoint(ckpt), run_dir


def _last_eval_record(run_dir: Path) -> dict:
    evals = [r for r in read_jsonl(run_dir / "log.jsonl") if r.get("kind") == "eval"]
    if not evals:
        raise TrainingError(f"{run_dir}/log.jsonl has no eval records")
    return evals[-1]


def _actor_from(saved: ExperimentConfig, blocks: dict) -> CompletionModel:
    spec = make_env(saved.env).spec
    arch = CompletionArch(
        state_dim=spec.state_dim, action_dim=spec.action_dim,
        widths=tuple(saved.train.widths), time_dim=saved.train.time_dim,
    )
    return CompletionModel(arch, blocks["actor"])


def _cmd_eval(cfg: ExperimentConfig) -> dict:
    saved, blocks, run_dir = _load_run(cfg)
    logged = _last_eval_record(run_dir)
    eval_seed = int(logged["eval_seed"])
    spec = make_env(saved.env).spec

    if saved.command == "train-gcrl":
        gc: GCConfig = saved.gcrl
        policy = HierarchyPolicy(
            PolicyArch(
                spec.state_dim, spec.action_dim, gc.goal_rep_dim,
                tuple(gc.widths), gc.level_dim,
            ),
            blocks["policy"],
        )
        success, per_goal = evaluate_goal_policy(
            policy, blocks["enc"], saved.env, cfg.inference,
            gc.eval_episodes, eval_seed, action_bound=spec.action_bound,
        )
        logged_success = logged.get(f"success_{cfg.inference}")
        return {
            "command": "eval",
            "run": str(run_dir),
            "inference": cfg.inference,
            "step": logged["step"],
            "eval_seed": eval_seed,
            "success": success,
            "per_goal": per_goal,
            "logged_success": logged_success,
            "matches_log": success == logged_success,
        }

    model = _actor_from(saved, blocks)
    ret, _ = evaluate_policy(
        model, saved.env, int(logged["episodes"]), eval_seed, spec.action_bound
    )
    if saved.dataset:
        score = normalized_score(load_dataset(saved.dataset).meta, ret)
    else:
        rand, expert = reference_scores(saved.env, saved.seed)
        score = 100.0 * (ret - rand) / (expert - rand)
    return {
        "command": "eval",
        "run": str(run_dir),
        "step": logged["step"],
        "eval_seed": eval_seed,
        "return_mean": ret,
        "score": score,
        "logged_score": logged["score"],
        "matches_log": score == logged["score"],
    }


def _cmd_bench(cfg: ExperimentConfig) -> dict:
    if cfg.checkpoint:
        saved, blocks, _ = _load_run(cfg)
        model = _actor_from(saved, blocks)
        env_name = saved.env
    else:
        spec = make_env(cfg.env).spec
        arch = CompletionArch(
            state_dim=spec.state_dim, action_dim=spec.action_dim,
            widths=tuple(cfg.train.widths), time_dim=cfg.train.time_dim,
        )
        model = CompletionModel.init(arch, seed=cfg.seed)
        env_name = cfg.env
    states = np.random.default_rng(cfg.seed).standard_normal((16, model.arch.state_dim))
    report = bench_inference(
        model, states, cfg.bench_actions, euler_steps=cfg.euler_steps, seed=cfg.seed
    )
    return {"command": "bench", "env": env_name, **report}


_SUMMARY_FIELDS = (
    "final_return", "final_score", "success_flat", "success_hier",
)


def _cmd_ablate(cfg: ExperimentConfig) -> dict:
    """Cartesian sweep; per-cell failures are recorded and the sweep continues."""
    if not cfg.grid:
        raise ConfigError("ablate needs at least one grid.* axis")
    out = _prepare_out(cfg)
    keys = sorted(cfg.grid)
    cells = []
    for combo in itertools.product(*(cfg.grid[k] for k in keys)):
        overrides = dict(zip(keys, combo))
        slug = "_".join(f"{k.rsplit('.', 1)[-1]}={v}" for k, v in overrides.items())
        slug = slug.replace("/", "-").replace(" ", "")
        cell_dir = out / f"cell_{slug}"
        cell_cfg = clone_config(cfg)
        cell_cfg.grid = {}
        cell_cfg.command = cfg.ablate_command
        cell_cfg.out = str(cell_dir)
        row = {"cell": cell_dir.name, **overrides}
        try:
            for key, value in overrides.items():
                set_key(cell_cfg, key, value)
            validate(cell_cfg)
            summary = _run_training(cell_cfg)
            row.update({k: summary.get(k, "") for k in _SUMMARY_FIELDS})
            row["error"] = ""
        except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
            row.update({k: "" for k in _SUMMARY_FIELDS})
            row["error"] = f"{type(exc).__name__}: {exc}"
        cells.append(row)

    manifest = {"command": cfg.ablate_command, "grid": cfg.grid, "cells": cells}
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    summary_path = out / "summary.csv"
    with summary_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["cell", *keys, *_SUMMARY_FIELDS, "error"])
        writer.writeheader()
        writer.writerows(cells)
    n_failed = sum(1 for row in cells if row["error"])
    return {
        "command": "ablate",
        "out": str(out),
        "cells": len(cells),
        "failed": n_failed,
        "summary": str(summary_path),
    }


def parse_and_run(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the usage message
        return int(exc.code or 0)
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if cfg.command == "gen-data":
            report = _cmd_gen_data(cfg)
        elif cfg.command == "eval":
            report = _cmd_eval(cfg)
        elif cfg.command == "bench":
            report = _cmd_bench(cfg)
        elif cfg.command == "ablate":
            report = _cmd_ablate(cfg)
        else:
            report = _run_training(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary maps failures to exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(report, sort_keys=True))
    return 0


def main() -> None:
    sys.exit(parse_and_run())


if __name__ == "__main__":
    main()
