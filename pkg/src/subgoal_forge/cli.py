"""Command-line entry points. Exit code 0 only on full success."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import harness, nets, outofset, rl, shaping, subgoals, trajectories
from .envs import ENCODINGS, ENV_NAMES, make_env


def _add_common_env(p):
    p.add_argument("--env", required=True, choices=ENV_NAMES)
    p.add_argument("--encoding", default="normalized_xy", choices=ENCODINGS)
    p.add_argument("--step-cap", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subgoal-forge",
        description="sub-goal discovery, shaped-reward training, and the "
                    "experiment harness around them")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="script search experts into a demo file")
    _add_common_env(p)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--noise", type=float, default=0.0, help="per-step random-action probability")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("discover", help="iterative sub-goal labeling on a demo file")
    p.add_argument("--demos", required=True)
    p.add_argument("--ng", type=int, required=True)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--max-iters", type=int, default=20)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="predictor checkpoint path")
    p.add_argument("--labels", default=None, help="optional labels csv path")

    p = sub.add_parser("fit-utility", help="one-class utility model on a demo file")
    p.add_argument("--demos", required=True)
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--quantile", type=float, default=0.99)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain", help="behavior-clone a policy from demos")
    p.add_argument("--demos", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="full pipeline: discover, gate, clone, train")
    _add_common_env(p)
    p.add_argument("--demos", required=True)
    p.add_argument("--shaping", default="gated_subgoal", choices=shaping.VARIANTS)
    p.add_argument("--ng", type=int, default=4)
    p.add_argument("--steps", type=int, default=500_000)
    p.add_argument("--seeds", type=int, default=3, help="number of seeds, 0..n-1")
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--eval-interval", type=int, default=10_000)
    p.add_argument("--eval-episodes", type=int, default=20)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("evaluate", help="greedy evaluation of a policy checkpoint")
    _add_common_env(p)
    p.add_argument("--policy", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)

    for name, help_ in (("compare", "baseline comparison from a config file"),
                        ("ablate-ng", "sub-goal count ablation from a config file"),
                        ("ablate-oos", "out-of-set ablation from a config file")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True)

    p = sub.add_parser("render-map", help="partition map of a predictor over an env")
    _add_common_env(p)
    p.add_argument("--predictor", required=True)
    p.add_argument("--out", required=True, help="output prefix (.txt and .pgm)")

    return parser


def _cmd_gen_demos(args) -> int:
    env = make_env(args.env, encoding=args.encoding, step_cap=args.step_cap)
    kind = "noisy_search" if args.noise > 0 else "optimal_search"
    tset = trajectories.generate_expert(env, kind, count=args.count,
                                        seed=args.seed, p_random=args.noise)
    trajectories.save_trajectories(tset, args.out)
    print(f"wrote {len(tset.trajectories)} episodes ({tset.N} states) to {args.out}")
    return 0


def _cmd_discover(args) -> int:
    tset = trajectories.load_trajectories(args.demos)
    predictor, labeling = subgoals.discover(
        tset, args.ng, eps=args.eps, max_iters=args.max_iters,
        epochs=args.epochs, seed=args.seed)
    subgoals.save_predictor(predictor, args.out)
    if args.labels:
        subgoals.save_labels(labeling, tset, args.labels)
    status = "converged" if labeling.converged else "NOT converged"
    print(f"{status} after {labeling.generation} iterations; predictor -> {args.out}")
    return 0 if labeling.converged else 1


def _cmd_fit_utility(args) -> int:
    tset = trajectories.load_trajectories(args.demos)
    model = outofset.fit_utility(tset, m=args.m, l2=args.l2, epochs=args.epochs,
                                 seed=args.seed, delta_quantile=args.quantile)
    outofset.save_utility(model, args.out)
    print(f"utility model -> {args.out} (delta {model.delta:.6g})")
    return 0


def _cmd_pretrain(args) -> int:
    tset = trajectories.load_trajectories(args.demos)
    policy = rl.new_policy(tset.state_dim, seed=args.seed)
    policy, acc = rl.pretrain(policy, tset, epochs=args.epochs, seed=args.seed)
    rl.save_policy(policy, args.out)
    print(f"pretrained policy -> {args.out} (train accuracy {acc:.3f})")
    return 0


def _cmd_train(args) -> int:
    cfg = harness.ExperimentConfig(
        env=args.env, encoding=args.encoding, out_dir=args.out, demos=args.demos,
        n_g=args.ng, variants=(args.shaping,),
        seeds=tuple(range(args.seed_base, args.seed_base + args.seeds)),
        total_env_steps=args.steps, step_cap=args.step_cap, lr=args.lr,
        eval_interval=args.eval_interval, eval_episodes=args.eval_episodes)
    harness.validate_config(cfg)
    out_dir = harness.resolve_out_dir(cfg.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    env = make_env(cfg.env, encoding=cfg.encoding, step_cap=cfg.step_cap)
    tset = harness.prepare_demos(cfg, env)
    records = []
    for seed in cfg.seeds:
        art = harness.build_artifacts(cfg, env, tset, seed, cfg.variants)
        run_dir = os.path.join(out_dir, args.shaping, f"seed{seed}")
        rec = harness.run_pipeline(cfg, env, tset, args.shaping, seed, art, run_dir)
        records.append(rec)
        print(f"seed {seed}: final return {rec.final_return:.4f}, "
              f"success {rec.final_success:.3f}")
    harness._write_combined(out_dir, records)
    harness._write_summary(out_dir, records, f"{args.shaping} on {cfg.env}")
    print(f"median final success over {len(records)} seeds: "
          f"{np.median([r.final_success for r in records]):.3f}")
    return 0


def _cmd_evaluate(args) -> int:
    env = make_env(args.env, encoding=args.encoding, step_cap=args.step_cap)
    policy = rl.load_policy(args.policy)
    res = rl.evaluate(policy, env, episodes=args.episodes, seed=args.seed)
    print(f"mean return {res.mean_return:.4f}, success rate {res.success_rate:.3f} "
          f"over {args.episodes} episodes")
    return 0


def _cmd_config_runner(args, runner) -> int:
    cfg = harness.parse_config(args.config)
    records = runner(cfg)
    out_dir = harness.resolve_out_dir(cfg.out_dir)
    print(f"{len(records)} runs complete; outputs in {out_dir}")
    return 0


def _cmd_render_map(args) -> int:
    env = make_env(args.env, encoding=args.encoding, step_cap=args.step_cap)
    predictor = subgoals.load_predictor(args.predictor)
    if predictor.net.in_dim != env.state_dim:
        raise ValueError(f"predictor input dim {predictor.net.in_dim} does not match "
                         f"{args.env} with {args.encoding} ({env.state_dim})")
    harness.save_partition_map(predictor, env, args.out)
    print(f"wrote {args.out}.txt and {args.out}.pgm")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen-demos":
            return _cmd_gen_demos(args)
        if args.command == "discover":
            return _cmd_discover(args)
        if args.command == "fit-utility":
            return _cmd_fit_utility(args)
        if args.command == "pretrain":
            return _cmd_pretrain(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        if args.command == "compare":
            return _cmd_config_runner(args, harness.run_comparison)
        if args.command == "ablate-ng":
            return _cmd_config_runner(args, harness.run_ng_ablation)
        if args.command == "ablate-oos":
            return _cmd_config_runner(args, harness.run_outofset_ablation)
        if args.command == "render-map":
            return _cmd_render_map(args)
        raise ValueError(f"unhandled command {args.command}")
    except (ValueError, RuntimeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
