"""Demonstration corpus: data model, expert generation, serialization.

A corpus only admits episodes that actually reached a goal cell. The file
format is line-delimited text: a ``state_dim`` header, then one record
``episode_id,t,s[0..d-1],action`` per step with t counted from 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .envs import GridEnv, N_ACTIONS


@dataclass
class Trajectory:
    episode_id: int
    steps: list[tuple[np.ndarray, int]]
    terminal_reached: bool = True

    def __len__(self) -> int:
        return len(self.steps)

    def states(self) -> np.ndarray:
        return np.stack([s for s, _ in self.steps])

    def actions(self) -> np.ndarray:
        return np.array([a for _, a in self.steps], dtype=np.int64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.episode_id == other.episode_id
                and self.terminal_reached == other.terminal_reached
                and len(self.steps) == len(other.steps)
                and all(a == b and np.array_equal(sa, sb)
                        for (sa, a), (sb, b) in zip(self.steps, other.steps)))


@dataclass
class TrajectorySet:
    trajectories: list[Trajectory]
    state_dim: int

    @property
    def N(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def all_states(self) -> np.ndarray:
        return np.concatenate([t.states() for t in self.trajectories])

    def all_actions(self) -> np.ndarray:
        return np.concatenate([t.actions() for t in self.trajectories])

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrajectorySet):
            return NotImplemented
        return (self.state_dim == other.state_dim
                and self.trajectories == other.trajectories)

    @classmethod
    def build(cls, trajectories) -> "TrajectorySet":
        """Admission-checked constructor: drops episodes that never terminated."""
        admitted = []
        for t in trajectories:
            if not t.terminal_reached:
                warnings.warn(f"episode {t.episode_id} never reached a terminal; dropped")
                continue
            if len(t) == 0:
                raise ValueError(f"episode {t.episode_id} is empty")
            admitted.append(t)
        if not admitted:
            raise ValueError("no admissible trajectories")
        dim = admitted[0].steps[0][0].shape[0]
        for t in admitted:
            if any(s.shape != (dim,) for s, _ in t.steps):
                raise ValueError(f"episode {t.episode_id} has inconsistent state dims")
        return cls(admitted, dim)


def trajectory_return(traj: Trajectory, gamma: float) -> float:
    """Discounted sparse return of one successful episode."""
    return gamma ** (len(traj) - 1)


def corpus_mean_return(tset: TrajectorySet, gamma: float) -> float:
    return float(np.mean([trajectory_return(t, gamma) for t in tset.trajectories]))


def corpus_mean_length(tset: TrajectorySet) -> float:
    return float(np.mean([len(t) for t in tset.trajectories]))


POLICY_KINDS = ("optimal_search", "noisy_search")


def generate_expert(env: GridEnv, kind: str = "optimal_search", count: int = 1,
                    seed: int = 0, p_random: float = 0.0,
                    max_retries: int = 200) -> TrajectorySet:
    """Roll scripted search experts until `count` terminal-reaching episodes.

    optimal_search follows the BFS-shortest action everywhere. noisy_search
    takes it with probability 1 - p_random and a uniform action otherwise;
    an episode that exceeds 8x its start's optimal length is resampled from
    the same start with fresh noise.
    """
    if kind not in POLICY_KINDS:
        raise ValueError(f"unknown policy kind {kind!r}")
    if count < 1:
        raise ValueError("count must be >= 1")
    if kind == "optimal_search":
        p_random = 0.0
    if not 0.0 <= p_random <= 1.0:
        raise ValueError("p_random must be in [0, 1]")

    outer = np.random.default_rng(seed)
    trajectories = []
    for episode_id in range(count):
        ep_rng = np.random.default_rng(outer.integers(2**63 - 1))
        start = env.start_cells[ep_rng.integers(len(env.start_cells))]
        cap = max(8, 8 * env.distance_to_goal(start))
        for _ in range(max_retries):
            steps = []
            cell = start
            while len(steps) < cap:
                action = env.optimal_action(cell)
                if p_random > 0.0 and ep_rng.random() < p_random:
                    action = int(ep_rng.integers(N_ACTIONS))
                steps.append((env.encode_cell(cell), action))
                cell = env.transition(cell, action)
                if cell in env.goal_cells:
                    break
            if cell in env.goal_cells:
                trajectories.append(Trajectory(episode_id, steps, terminal_reached=True))
                break
        else:
            raise RuntimeError(
                f"expert generation failed: start {start} never reached the goal "
                f"within {cap} steps after {max_retries} retries (seed {seed})")
    return TrajectorySet.build(trajectories)


def save_trajectories(tset: TrajectorySet, path) -> None:
    for t in tset.trajectories:
        if not t.terminal_reached:
            raise ValueError(f"episode {t.episode_id} is not terminal-reaching")
    with open(path, "w") as fh:
        fh.write(f"state_dim {tset.state_dim}\n")
        for t in tset.trajectories:
            for i, (state, action) in enumerate(t.steps):
                svals = ",".join("%.17g" % v for v in state)
                fh.write(f"{t.episode_id},{i},{svals},{action}\n")


def load_trajectories(path) -> TrajectorySet:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("state_dim "):
        raise ValueError(f"{path}:1: expected 'state_dim <d>' header")
    try:
        dim = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise ValueError(f"{path}:1: malformed state_dim header") from None

    trajectories: list[Trajectory] = []
    current_id = None
    steps: list[tuple[np.ndarray, int]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != dim + 3:
            raise ValueError(f"{path}:{lineno}: expected {dim + 3} fields, got {len(fields)}")
        try:
            eid = int(fields[0])
            t = int(fields[1])
            state = np.array([float(v) for v in fields[2:-1]])
            action = int(fields[-1])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: malformed record") from None
        if eid != current_id:
            if steps:
                trajectories.append(Trajectory(current_id, steps))
            current_id, steps = eid, []
        if t != len(steps):
            raise ValueError(f"{path}:{lineno}: step index {t} out of order")
        steps.append((state, action))
    if steps:
        trajectories.append(Trajectory(current_id, steps))
    if not trajectories:
        raise ValueError(f"{path}: no records")
    return TrajectorySet.build(trajectories)
