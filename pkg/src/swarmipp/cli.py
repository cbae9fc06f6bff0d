"""Command-line entry point tying the subsystems together.

Subcommands: gen-env, pretrain-sendfuse, train, eval, plot, config.  Every
run directory receives a config snapshot and a version stamp so results can
be reproduced bit-exactly from the directory alone.  Exit codes: 0 success,
1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .grid import ConfigurationError

OUT_ROOT_ENV = "SWARMIPP_OUT_ROOT"


def _out_dir(args, default_name: str) -> Path:
    if getattr(args, "out", None):
        path = Path(args.out)
    else:
        root = os.environ.get(OUT_ROOT_ENV, "runs")
        path = Path(root) / default_name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_run_config(args):
    from .config import default_run_config, load_config, set_noise_level

    rc = load_config(args.config) if getattr(args, "config", None) else default_run_config()
    if getattr(args, "noise", None):
        set_noise_level(rc, args.noise)
    if getattr(args, "seed", None) is not None:
        rc.run.seed = args.seed
    if getattr(args, "episodes", None) is not None:
        rc.train.episodes = args.episodes
    if getattr(args, "ablate", None):
        rc.train.ablate = args.ablate
    if getattr(args, "trials", None) is not None:
        rc.eval.trials = args.trials
    if getattr(args, "epochs", None) is not None:
        rc.sendfuse.epochs = args.epochs
    return rc


def _snapshot(rc, out_dir: Path) -> None:
    from .config import save_config

    save_config(rc, out_dir / "config.ini")
    (out_dir / "version.txt").write_text(f"swarmipp {__version__}\n", encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_env(args) -> int:
    from .envgen import SyntheticEnvSpec, gen_env

    rc = _load_run_config(args)
    if args.width is not None:
        rc.env.width = args.width
    if args.height is not None:
        rc.env.height = args.height
    if args.shapes is not None:
        rc.env.n_shapes = args.shapes
    if args.seed is not None:
        rc.env.env_seed = args.seed
    spec = SyntheticEnvSpec(
        width=rc.env.width,
        height=rc.env.height,
        n_shapes=rc.env.n_shapes,
        seed=rc.env.env_seed,
    )
    out = Path(args.out) if args.out else Path("env.png")
    out.parent.mkdir(parents=True, exist_ok=True)
    grid = gen_env(spec, out)
    print(
        f"wrote {out} ({grid.width}x{grid.height}, "
        f"{int(grid.cells.sum())} valuable cells)"
    )
    return 0


def cmd_pretrain_sendfuse(args) -> int:
    from .config import build_channel_params, build_loss_weights
    from .sendfuse import pretrain, save_checkpoint, synthetic_patches

    rc = _load_run_config(args)
    out = Path(args.out) if args.out else Path("sendfuse.pt")
    out.parent.mkdir(parents=True, exist_ok=True)
    run_dir = out.parent
    _snapshot(rc, run_dir)

    seeds = np.random.SeedSequence(rc.run.seed).spawn(2)
    data_rng = np.random.default_rng(seeds[0])
    train_rng = np.random.default_rng(seeds[1])
    dataset = synthetic_patches(rc.sendfuse.n_patches, rc.sendfuse.patch_size, data_rng)
    params = build_channel_params(rc)
    model, trace = pretrain(
        dataset,
        params,
        rc.sendfuse.epochs,
        build_loss_weights(rc),
        train_rng,
        batch_size=rc.sendfuse.batch_size,
        lr=rc.sendfuse.lr,
        base_width=rc.sendfuse.base_width,
    )
    save_checkpoint(model, out)
    trace_path = out.with_name(out.stem + "_loss.csv")
    _write_csv(
        trace_path,
        ["epoch", "mse", "mae", "ssim", "total"],
        [
            [row["epoch"], repr(row["mse"]), repr(row["mae"]), repr(row["ssim"]), repr(row["total"])]
            for row in trace
        ],
    )
    print(f"wrote {out} and {trace_path}")
    return 0


def cmd_train(args) -> int:
    from .coma import ComaTrainer
    from .config import (
        build_channel_params,
        build_episode_config,
        build_fusion_weights,
        build_train_config,
        build_truth,
    )
    from .env import Environment
    from .nets import make_policy_nets, save_policy_checkpoint
    from .sendfuse import load_checkpoint

    rc = _load_run_config(args)
    out_dir = _out_dir(args, "train")
    _snapshot(rc, out_dir)

    truth = build_truth(rc)
    train_cfg = build_train_config(rc)
    episode_cfg = build_episode_config(rc, truth.shape)

    fusion_model = None
    if not train_cfg.ablate_fusion:
        if not args.sendfuse:
            raise ConfigurationError(
                "training with the fusion channel needs --sendfuse <checkpoint>; "
                "create one with the pretrain-sendfuse subcommand"
            )
        fusion_model = load_checkpoint(args.sendfuse)

    torch_seed = int(
        np.random.SeedSequence(rc.run.seed).spawn(4)[3].generate_state(1)[0] % 2**31
    )
    actor, critic = make_policy_nets(torch_seed, cbam_enabled=not train_cfg.ablate_cbam)

    def env_factory(seed: int) -> Environment:
        return Environment(truth, replace(episode_cfg, seed=seed))

    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    def checkpoint(episode: int, trainer, result) -> None:
        if (episode + 1) % train_cfg.checkpoint_every == 0:
            save_policy_checkpoint(
                ckpt_dir / f"policy_ep{episode + 1:05d}.pt",
                trainer.actor,
                trainer.critic,
                ablate_fusion=train_cfg.ablate_fusion,
                meta={"episode": episode + 1},
            )

    trainer = ComaTrainer(
        env_factory,
        actor,
        critic,
        train_cfg,
        build_channel_params(rc),
        build_fusion_weights(rc),
        fusion_model,
    )
    result = trainer.train(callback=checkpoint)

    save_policy_checkpoint(
        out_dir / "policy_final.pt",
        trainer.actor,
        trainer.critic,
        ablate_fusion=train_cfg.ablate_fusion,
        meta={"episode": train_cfg.episodes},
    )
    _write_csv(
        out_dir / "reward_trace.csv",
        ["episode", "reward", "entropy_final", "f1_final"],
        [
            [i, repr(result.reward_trace[i]), repr(result.entropy_trace[i]), repr(result.f1_trace[i])]
            for i in range(len(result.reward_trace))
        ],
    )
    print(f"trained {train_cfg.episodes} episodes -> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    from .config import (
        build_channel_params,
        build_episode_config,
        build_fusion_weights,
        build_truth,
    )
    from .evalkit import (
        LearnedDriver,
        make_baseline_driver,
        run_trials,
        write_method_results,
        write_traces_jsonl,
    )
    from .nets import dump_observation, load_policy_checkpoint
    from .sendfuse import load_checkpoint

    rc = _load_run_config(args)
    out_dir = _out_dir(args, f"eval-{args.policy}")
    _snapshot(rc, out_dir)

    truth = build_truth(rc)
    episode_cfg = build_episode_config(rc, truth.shape)
    channel = build_channel_params(rc)

    if args.policy == "ours":
        if not args.checkpoint:
            raise ConfigurationError("--policy ours requires --checkpoint <policy>")
        actor, _critic, desc = load_policy_checkpoint(args.checkpoint)
        fusion_model = None
        if not desc["ablate_fusion"]:
            if not args.sendfuse:
                raise ConfigurationError(
                    "this policy uses the fusion channel; pass --sendfuse "
                    "<checkpoint> (see the pretrain-sendfuse subcommand)"
                )
            fusion_model = load_checkpoint(args.sendfuse)
        obs_sink = None
        if args.dump_obs:
            obs_dir = out_dir / "observations"
            obs_dir.mkdir(exist_ok=True)

            def obs_sink(step, agent, obs):
                dump_observation(obs_dir / f"step{step:03d}_uav{agent}.npy", obs)

        driver = LearnedDriver(
            actor,
            channel,
            fusion_model,
            build_fusion_weights(rc),
            naive_fusion=desc["ablate_fusion"],
            mode="greedy",
            obs_sink=obs_sink,
        )
        config = episode_cfg
    else:
        driver, config = make_baseline_driver(args.policy, episode_cfg)

    stats, traces = run_trials(driver, truth, config, rc.eval.trials, rc.run.seed)
    env_label = "synthetic" if rc.env.kind == "synthetic" else Path(rc.env.image_path).stem
    write_method_results(out_dir, env_label, args.policy, stats)
    write_traces_jsonl(traces, out_dir / "traces.jsonl")
    print(
        f"{args.policy}: final F1 {stats.f1_mean[-1]:.4f} +/- {stats.f1_std[-1]:.4f}, "
        f"final entropy {stats.h_mean[-1]:.4f} +/- {stats.h_std[-1]:.4f} -> {out_dir}"
    )
    return 0


def cmd_plot(args) -> int:
    from .evalkit import make_report

    out_dir = _out_dir(args, "report")
    report = make_report(args.results, out_dir)
    print(f"wrote {report}")
    return 0


def cmd_config(args) -> int:
    from .config import default_run_config, dump_config, load_config

    rc = load_config(args.config) if args.config else default_run_config()
    text = dump_config(rc)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmipp",
        description="Multi-UAV informative path planning with noisy "
        "communication, denoising fusion, and counterfactual training.",
    )
    parser.add_argument("--version", action="version", version=f"swarmipp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-env", help="generate a synthetic ground-truth image")
    p.add_argument("--config")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--shapes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output image path (PNG or PGM)")
    p.set_defaults(func=cmd_gen_env)

    p = sub.add_parser(
        "pretrain-sendfuse", help="pretrain the denoising/fusion network"
    )
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--noise", choices=["none", "moderate", "loud"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="checkpoint output path")
    p.set_defaults(func=cmd_pretrain_sendfuse)

    p = sub.add_parser("train", help="run centralized multi-agent training")
    p.add_argument("--config")
    p.add_argument("--episodes", type=int)
    p.add_argument("--noise", choices=["none", "moderate", "loud"])
    p.add_argument(
        "--ablate",
        choices=["none", "cbam", "fusion", "both"],
        help="disable modules: cbam removes the attention blocks, fusion "
        "replaces the denoise-fusion map with a naive average, both removes both",
    )
    p.add_argument("--seed", type=int)
    p.add_argument("--sendfuse", help="pretrained denoise-fusion checkpoint")
    p.add_argument("--out", help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="deploy a policy over seeded trials")
    p.add_argument("--config")
    p.add_argument("--policy", choices=["ours", "ag", "nl", "random"], required=True)
    p.add_argument("--checkpoint", help="policy checkpoint (for --policy ours)")
    p.add_argument("--sendfuse", help="denoise-fusion checkpoint (for --policy ours)")
    p.add_argument("--noise", choices=["none", "moderate", "loud"])
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dump-obs", action="store_true", help="save observation stacks as .npy")
    p.add_argument("--out", help="run directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="merge eval results into a table and curves")
    p.add_argument("results", nargs="+", help="eval output directories")
    p.add_argument("--out", help="report directory")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("config", help="print or write the resolved configuration")
    p.add_argument("--config")
    p.add_argument("--dump", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
