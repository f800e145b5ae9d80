"""Experiment orchestration: configs, full pipelines, run records, maps.

A pipeline for one (variant, seed) is: discover sub-goals on the demos,
fit the one-class utility, clone the expert, then run actor-critic with
the variant's potential. Artifacts that do not depend on the variant are
built once per seed and shared, so variants within a seed are directly
comparable. Every run directory carries an IN_PROGRESS marker until its
outputs are complete.
"""

from __future__ import annotations

import json
import os
import subprocess
import time
from dataclasses import dataclass, fields, asdict

import numpy as np

from . import __version__
from .envs import ENCODINGS, ENV_NAMES, GridEnv, make_env
from .outofset import UtilityModel, fit_utility
from .rl import Policy, TrainConfig, evaluate, new_policy, pretrain, train_a2c
from .shaping import VARIANTS, ShapingPotential, fit_value_baseline
from .subgoals import SubgoalLabeling, SubgoalPredictor, discover
from .trajectories import (TrajectorySet, corpus_mean_length, corpus_mean_return,
                           generate_expert, load_trajectories, save_trajectories)

OUTPUT_ROOT_VAR = "SUBGOAL_FORGE_OUTPUT_ROOT"
IN_PROGRESS = "IN_PROGRESS"
CURVE_HEADER = "env_steps,seed,mean_return,success_rate"


@dataclass
class ExperimentConfig:
    env: str = "u_maze"
    encoding: str = "normalized_xy"
    out_dir: str = "runs/experiment"
    demos: str | None = None          # path; generated when absent
    demo_count: int = 50
    demo_noise: float = 0.3
    demo_seed: int = 7
    n_g: int = 4
    ng_list: tuple[int, ...] = ()
    variants: tuple[str, ...] = ("none", "value", "subgoal", "gated_subgoal")
    seeds: tuple[int, ...] = (0, 1, 2)
    total_env_steps: int = 500_000
    step_cap: int | None = None
    discover_eps: float = 0.01
    discover_max_iters: int = 20
    discover_epochs: int = 10
    pretrain_epochs: int = 20
    utility_m: int = 16
    utility_l2: float = 1e-4
    utility_epochs: int = 100
    utility_quantile: float = 0.99
    lr: float = 3e-4
    n_step: int = 8
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    eval_interval: int = 10_000
    eval_episodes: int = 20


def resolve_out_dir(out_dir: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_VAR)
    if root and not os.path.isabs(out_dir):
        return os.path.join(root, out_dir)
    return out_dir


def validate_config(cfg: ExperimentConfig) -> None:
    """Reject a bad config before anything touches the filesystem."""
    if cfg.env not in ENV_NAMES:
        raise ValueError(f"unknown env {cfg.env!r}")
    if cfg.encoding not in ENCODINGS:
        raise ValueError(f"unknown encoding {cfg.encoding!r}")
    bad = [v for v in cfg.variants if v not in VARIANTS]
    if bad:
        raise ValueError(f"unknown shaping variants {bad}")
    if not cfg.seeds:
        raise ValueError("need at least one seed")
    if cfg.demos is not None and not os.path.exists(cfg.demos):
        raise ValueError(f"demo file {cfg.demos} does not exist")
    if cfg.n_g < 2:
        raise ValueError("n_g must be >= 2")
    if any(n < 2 for n in cfg.ng_list):
        raise ValueError("every ablation n_g must be >= 2")
    if cfg.total_env_steps < 1 or cfg.demo_count < 1:
        raise ValueError("counts must be positive")
    if not 0.0 <= cfg.demo_noise <= 1.0:
        raise ValueError("demo_noise must be in [0, 1]")


_TUPLE_FIELDS = {"ng_list": int, "variants": str, "seeds": int}


def parse_config(path) -> ExperimentConfig:
    """Flat key=value file with optional [section] headers and # comments."""
    known = {f.name: f for f in fields(ExperimentConfig)}
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line or (line.startswith("[") and line.endswith("]")):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(key, val)
    return ExperimentConfig(**values)


def _coerce(key: str, val: str):
    if key in _TUPLE_FIELDS:
        conv = _TUPLE_FIELDS[key]
        return tuple(conv(v.strip()) for v in val.split(",") if v.strip())
    if key in ("demos", "step_cap"):
        if val.lower() in ("", "none"):
            return None
        return int(val) if key == "step_cap" else val
    for conv in (int, float):
        try:
            return conv(val)
        except ValueError:
            continue
    return val


def version_stamp() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"],
                             capture_output=True, text=True, timeout=5,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
        git = rev.stdout.strip() if rev.returncode == 0 else "unknown"
    except OSError:
        git = "unknown"
    return f"subgoal-forge {__version__} ({git})"


@dataclass
class RunRecord:
    variant: str
    seed: int
    curve: list
    final_return: float
    final_success: float
    curve_area: float
    pretrain_accuracy: float
    labeling_generation: int | None
    labeling_converged: bool | None
    expert_mean_return: float
    expert_mean_length: float
    wall_clock_s: float
    version: str
    config: dict


def curve_area(curve) -> float:
    """Trapezoid area under the mean-return learning curve."""
    xs = [row[0] for row in curve]
    ys = [row[1] for row in curve]
    return float(sum(0.5 * (y0 + y1) * (x1 - x0)
                     for x0, x1, y0, y1 in zip(xs, xs[1:], ys, ys[1:])))


def write_curve_csv(path, curve, seed) -> None:
    with open(path, "w") as fh:
        fh.write(CURVE_HEADER + "\n")
        for steps, ret, sr in curve:
            fh.write(f"{steps},{seed},{ret!r},{sr!r}\n")


def prepare_demos(cfg: ExperimentConfig, env: GridEnv, out_dir: str | None = None) -> TrajectorySet:
    if cfg.demos is not None:
        tset = load_trajectories(cfg.demos)
        if tset.state_dim != env.state_dim:
            raise ValueError(
                f"demo state dim {tset.state_dim} does not match env encoding "
                f"({env.encoding}: {env.state_dim})")
        return tset
    kind = "noisy_search" if cfg.demo_noise > 0 else "optimal_search"
    tset = generate_expert(env, kind, count=cfg.demo_count, seed=cfg.demo_seed,
                           p_random=cfg.demo_noise)
    if out_dir is not None:
        save_trajectories(tset, os.path.join(out_dir, "demos.txt"))
    return tset


@dataclass
class SeedArtifacts:
    predictor: SubgoalPredictor | None = None
    labeling: SubgoalLabeling | None = None
    utility: UtilityModel | None = None
    value_net: object = None
    policy: Policy | None = None
    pretrain_accuracy: float = 0.0


def build_artifacts(cfg: ExperimentConfig, env: GridEnv, tset: TrajectorySet,
                    seed: int, variants, n_g: int | None = None) -> SeedArtifacts:
    """Everything a set of variants needs for one seed, built once."""
    n_g = cfg.n_g if n_g is None else n_g
    art = SeedArtifacts()
    if any(v in ("subgoal", "gated_subgoal") for v in variants):
        art.predictor, art.labeling = discover(
            tset, n_g, eps=cfg.discover_eps, max_iters=cfg.discover_max_iters,
            epochs=cfg.discover_epochs, seed=seed)
    if "gated_subgoal" in variants:
        art.utility = fit_utility(tset, m=cfg.utility_m, l2=cfg.utility_l2,
                                  epochs=cfg.utility_epochs, seed=seed,
                                  delta_quantile=cfg.utility_quantile)
    if "value" in variants:
        art.value_net = fit_value_baseline(tset, env.gamma, seed=seed)
    policy = new_policy(env.state_dim, seed=seed)
    art.policy, art.pretrain_accuracy = pretrain(policy, tset,
                                                 epochs=cfg.pretrain_epochs,
                                                 seed=seed)
    return art


def make_variant_potential(variant: str, env: GridEnv, art: SeedArtifacts) -> ShapingPotential:
    if variant == "none":
        return ShapingPotential("none", env.gamma)
    if variant == "subgoal":
        return ShapingPotential("subgoal", env.gamma, predictor=art.predictor)
    if variant == "gated_subgoal":
        return ShapingPotential("gated_subgoal", env.gamma, predictor=art.predictor,
                                utility_model=art.utility)
    if variant == "value":
        return ShapingPotential("value", env.gamma, value_net=art.value_net)
    raise ValueError(f"unknown variant {variant!r}")


def run_pipeline(cfg: ExperimentConfig, env: GridEnv, tset: TrajectorySet,
                 variant: str, seed: int, art: SeedArtifacts,
                 run_dir: str | None = None) -> RunRecord:
    """Train one variant for one seed and (optionally) persist its outputs."""
    started = time.time()
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        open(os.path.join(run_dir, IN_PROGRESS), "w").close()

    pot = make_variant_potential(variant, env, art)
    train_cfg = TrainConfig(
        total_env_steps=cfg.total_env_steps, n_step=cfg.n_step,
        entropy_coef=cfg.entropy_coef, value_coef=cfg.value_coef, lr=cfg.lr,
        eval_interval=cfg.eval_interval, eval_episodes=cfg.eval_episodes,
        seed=seed, shaping=variant)
    run_env = env.clone(seed=seed)
    policy, curve = train_a2c(art.policy, run_env, pot, train_cfg)

    record = RunRecord(
        variant=variant, seed=seed, curve=curve,
        final_return=curve[-1][1], final_success=curve[-1][2],
        curve_area=curve_area(curve),
        pretrain_accuracy=art.pretrain_accuracy,
        labeling_generation=art.labeling.generation if art.labeling else None,
        labeling_converged=art.labeling.converged if art.labeling else None,
        expert_mean_return=corpus_mean_return(tset, env.gamma),
        expert_mean_length=corpus_mean_length(tset),
        wall_clock_s=time.time() - started,
        version=version_stamp(),
        config=asdict(cfg))

    if run_dir is not None:
        write_curve_csv(os.path.join(run_dir, "curve.csv"), curve, seed)
        with open(os.path.join(run_dir, "run.json"), "w") as fh:
            json.dump(asdict(record), fh, indent=1)
        os.remove(os.path.join(run_dir, IN_PROGRESS))
    return record


def _write_combined(out_dir: str, records: list[RunRecord]) -> None:
    with open(os.path.join(out_dir, "curves.csv"), "w") as fh:
        fh.write("variant," + CURVE_HEADER + "\n")
        for rec in records:
            for steps, ret, sr in rec.curve:
                fh.write(f"{rec.variant},{steps},{rec.seed},{ret!r},{sr!r}\n")


def _write_summary(out_dir: str, records: list[RunRecord], title: str) -> None:
    lines = [title, version_stamp(), ""]
    variants = sorted({r.variant for r in records})
    lines.append(f"{'variant':<16} {'seeds':>5} {'median final ret':>17} "
                 f"{'median final succ':>18} {'mean curve area':>16}")
    for v in variants:
        vr = [r for r in records if r.variant == v]
        lines.append(f"{v:<16} {len(vr):>5} "
                     f"{np.median([r.final_return for r in vr]):>17.4f} "
                     f"{np.median([r.final_success for r in vr]):>18.3f} "
                     f"{np.mean([r.curve_area for r in vr]):>16.1f}")
    if records:
        lines.append("")
        lines.append(f"expert corpus: mean return {records[0].expert_mean_return:.4f}, "
                     f"mean length {records[0].expert_mean_length:.1f}")
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run_comparison(cfg: ExperimentConfig) -> list[RunRecord]:
    """Full pipeline per variant per seed with shared per-seed artifacts."""
    validate_config(cfg)
    out_dir = resolve_out_dir(cfg.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    env = make_env(cfg.env, encoding=cfg.encoding, step_cap=cfg.step_cap)
    tset = prepare_demos(cfg, env, out_dir)
    records = []
    for seed in cfg.seeds:
        art = build_artifacts(cfg, env, tset, seed, cfg.variants)
        for variant in cfg.variants:
            run_dir = os.path.join(out_dir, variant, f"seed{seed}")
            records.append(run_pipeline(cfg, env, tset, variant, seed, art, run_dir))
    _write_combined(out_dir, records)
    _write_summary(out_dir, records, f"comparison on {cfg.env}")
    return records


def run_ng_ablation(cfg: ExperimentConfig) -> list[RunRecord]:
    """Sweep the sub-goal count with plain (ungated) sub-goal shaping."""
    validate_config(cfg)
    if not cfg.ng_list:
        raise ValueError("ng_list is empty")
    out_dir = resolve_out_dir(cfg.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    env = make_env(cfg.env, encoding=cfg.encoding, step_cap=cfg.step_cap)
    tset = prepare_demos(cfg, env, out_dir)
    records = []
    for n_g in cfg.ng_list:
        for seed in cfg.seeds:
            art = build_artifacts(cfg, env, tset, seed, ("subgoal",), n_g=n_g)
            run_dir = os.path.join(out_dir, f"ng{n_g}", f"seed{seed}")
            rec = run_pipeline(cfg, env, tset, "subgoal", seed, art, run_dir)
            rec.variant = f"subgoal_ng{n_g}"
            records.append(rec)
    _write_combined(out_dir, records)
    _write_summary(out_dir, records, f"sub-goal count ablation on {cfg.env}")
    return records


def run_outofset_ablation(cfg: ExperimentConfig) -> list[RunRecord]:
    """Gated vs ungated sub-goal shaping on identical demos and seeds."""
    validate_config(cfg)
    out_dir = resolve_out_dir(cfg.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    env = make_env(cfg.env, encoding=cfg.encoding, step_cap=cfg.step_cap)
    tset = prepare_demos(cfg, env, out_dir)
    records = []
    for seed in cfg.seeds:
        art = build_artifacts(cfg, env, tset, seed, ("subgoal", "gated_subgoal"))
        for variant in ("subgoal", "gated_subgoal"):
            run_dir = os.path.join(out_dir, variant, f"seed{seed}")
            records.append(run_pipeline(cfg, env, tset, variant, seed, art, run_dir))
    _write_combined(out_dir, records)
    _write_summary(out_dir, records, f"out-of-set ablation on {cfg.env}")
    return records


def render_partition_map(predictor: SubgoalPredictor, env: GridEnv) -> tuple[str, str]:
    """Per-cell argmax sub-goal index as ASCII text and as a P2 graymap."""
    idx_grid = np.full((env.height, env.width), -1, dtype=np.int64)
    for cell in env.cells:
        pmf = predictor.predict(env.encode_cell(cell))
        idx_grid[cell] = int(np.argmax(pmf))

    def glyph(i):
        return str(i) if i < 10 else chr(ord("a") + i - 10)

    text_rows = []
    for r in range(env.height):
        text_rows.append("".join(
            "#" if idx_grid[r, c] < 0 else glyph(idx_grid[r, c])
            for c in range(env.width)))
    text = "\n".join(text_rows)

    span = max(predictor.n_g - 1, 1)
    pgm_rows = []
    for r in range(env.height):
        pgm_rows.append(" ".join(
            "0" if idx_grid[r, c] < 0 else str(55 + (200 * idx_grid[r, c]) // span)
            for c in range(env.width)))
    pgm = f"P2\n{env.width} {env.height}\n255\n" + "\n".join(pgm_rows) + "\n"
    return text, pgm


def save_partition_map(predictor: SubgoalPredictor, env: GridEnv, out_prefix: str) -> None:
    text, pgm = render_partition_map(predictor, env)
    with open(out_prefix + ".txt", "w") as fh:
        fh.write(text + "\n")
    with open(out_prefix + ".pgm", "w") as fh:
        fh.write(pgm)
