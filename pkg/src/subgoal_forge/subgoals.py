"""Iterative sub-goal discovery over a demonstration corpus.

Alternates two phases until the labeling stops moving: fit a softmax
classifier to the current per-state labels, then relabel every trajectory
with the min-cost monotone alignment of its predicted p.m.f. sequence
against the basis-vector sequence e_1..e_K (l1 cost). The alignment is a
segmentation: labels start at 1, end at K, and advance by at most one per
step, so each label occupies exactly one contiguous run.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import nets
from .trajectories import Trajectory, TrajectorySet


@dataclass
class SubgoalLabeling:
    """One generation of per-state labels; values are 1-based in 1..n_g."""

    labels: list[np.ndarray]
    n_g: int
    generation: int = 0
    converged: bool = True

    @property
    def N(self) -> int:
        return sum(len(l) for l in self.labels)


@dataclass
class SubgoalPredictor:
    net: nets.Mlp
    n_g: int

    def predict(self, state) -> np.ndarray:
        return nets.forward(self.net, state)

    def predict_batch(self, states) -> np.ndarray:
        return nets.forward_batch(self.net, states)


def new_predictor(state_dim: int, n_g: int, hidden=(64, 64), seed: int = 0) -> SubgoalPredictor:
    if n_g < 1:
        raise ValueError("n_g must be >= 1")
    net = nets.init_mlp([state_dim, *hidden, n_g], head="softmax", seed=seed)
    return SubgoalPredictor(net, n_g)


def equipartition_init(tset: TrajectorySet, n_g: int) -> SubgoalLabeling:
    """Initial labels: each trajectory is cut into n_g equal contiguous chunks.

    With 1-based position t in a length-n trajectory, label j covers
    floor((j-1)n/K) < t <= floor(jn/K). Trajectories shorter than n_g leave
    some labels without any state; that degenerate case is allowed with a
    warning.
    """
    if n_g < 2:
        raise ValueError("n_g must be >= 2")
    labels = []
    for traj in tset.trajectories:
        n = len(traj)
        if n < n_g:
            warnings.warn(
                f"episode {traj.episode_id} has {n} states for {n_g} sub-goals; "
                "some initial segments are empty")
        bounds = np.array([(j * n) // n_g for j in range(1, n_g + 1)])
        t = np.arange(1, n + 1)
        labels.append(np.searchsorted(bounds, t, side="left").astype(np.int64) + 1)
    return SubgoalLabeling(labels, n_g, generation=0)


def mean_cross_entropy(predictor: SubgoalPredictor, tset: TrajectorySet,
                       labeling: SubgoalLabeling) -> float:
    x = tset.all_states()
    y = np.concatenate(labeling.labels) - 1
    return nets.loss_batch(predictor.net, x, "cross_entropy", y)


def learning_step(tset: TrajectorySet, labeling: SubgoalLabeling,
                  predictor: SubgoalPredictor, epochs: int = 10, lr: float = 1e-3,
                  batch_size: int = 64, seed: int = 0) -> SubgoalPredictor:
    """Fit the classifier to the current labels (mean cross-entropy over all states).

    Weights warm-start from the incoming predictor; optimizer moments start
    fresh. Samples are put in a canonical sort order first so the result does
    not depend on how the corpus happens to be ordered.
    """
    if labeling.n_g != predictor.n_g:
        raise ValueError("labeling and predictor disagree on n_g")
    if len(labeling.labels) != len(tset.trajectories):
        raise ValueError("labeling does not cover the trajectory set")
    x = tset.all_states()
    y = np.concatenate(labeling.labels) - 1
    if len(y) != len(x):
        raise ValueError("labeling does not cover every state")
    order = np.lexsort((y,) + tuple(x.T[::-1]))
    net, _ = nets.fit(predictor.net, x[order], "cross_entropy", y[order],
                      epochs=epochs, lr=lr, batch_size=batch_size, seed=seed)
    return SubgoalPredictor(net, predictor.n_g)


def segment_pmfs(pmfs: np.ndarray) -> tuple[np.ndarray, float]:
    """Min-cost monotone labeling of a p.m.f. sequence (labels 1..K).

    Dynamic program over (position, label): cost(t, j) = |p_t - e_j|_1,
    labels non-decreasing with unit advances, pinned to 1 at the start and K
    at the end. Ties break toward the lexicographically smallest labeling.
    O(n*K) time.
    """
    p = np.asarray(pmfs, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("pmfs must be a (n, K) array")
    n, k = p.shape
    if n < k:
        raise ValueError(f"cannot fit {k} ordered labels on {n} states")
    cost = np.abs(p[:, None, :] - np.eye(k)[None, :, :]).sum(axis=2)

    # suffix[t, j]: best cost of labeling positions t..n-1 starting at label j
    suffix = np.full((n, k), np.inf)
    suffix[n - 1, k - 1] = cost[n - 1, k - 1]
    for t in range(n - 2, -1, -1):
        stay = suffix[t + 1]
        advance = np.append(suffix[t + 1, 1:], np.inf)
        suffix[t] = cost[t] + np.minimum(stay, advance)

    labels = np.empty(n, dtype=np.int64)
    j = 0
    labels[0] = 1
    for t in range(1, n):
        if j + 1 < k and suffix[t, j + 1] < suffix[t, j]:
            j += 1
        labels[t] = j + 1
    return labels, float(suffix[0, 0])


def dtw_infer(predictor: SubgoalPredictor, traj: Trajectory) -> np.ndarray:
    """Monotone label sequence for one trajectory under the current predictor."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    labels, _ = segment_pmfs(predictor.predict_batch(traj.states()))
    return labels


def label_change_fraction(a: SubgoalLabeling, b: SubgoalLabeling) -> float:
    """Fraction of states whose label differs between two generations."""
    if len(a.labels) != len(b.labels):
        raise ValueError("labelings cover different trajectory counts")
    changed = sum(int((la != lb).sum()) for la, lb in zip(a.labels, b.labels))
    return changed / a.N


def save_predictor(predictor: SubgoalPredictor, path) -> None:
    nets.save_mlp(predictor.net, path)


def load_predictor(path) -> SubgoalPredictor:
    net = nets.load_mlp(path)
    if net.head != "softmax":
        raise ValueError(f"{path}: predictor checkpoint must have a softmax head")
    return SubgoalPredictor(net, net.out_dim)


def save_labels(labeling: SubgoalLabeling, tset: TrajectorySet, path) -> None:
    """CSV of per-state labels: episode_id,t,label with t counted from 0."""
    if len(labeling.labels) != len(tset.trajectories):
        raise ValueError("labeling does not cover the trajectory set")
    with open(path, "w") as fh:
        fh.write("episode_id,t,label\n")
        for traj, labels in zip(tset.trajectories, labeling.labels):
            for t, lab in enumerate(labels):
                fh.write(f"{traj.episode_id},{t},{int(lab)}\n")


def discover(tset: TrajectorySet, n_g: int, eps: float = 0.01, max_iters: int = 20,
             epochs: int = 10, lr: float = 1e-3, batch_size: int = 64,
             seed: int = 0) -> tuple[SubgoalPredictor, SubgoalLabeling]:
    """Alternate learning and relabeling from the equipartition start.

    Stops when the fraction of changed labels drops below eps, or at
    max_iters with ``converged=False`` on the returned labeling.
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError("eps must be in (0, 1]")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    labeling = equipartition_init(tset, n_g)
    predictor = new_predictor(tset.state_dim, n_g, seed=seed)
    short = [len(t) < n_g for t in tset.trajectories]
    if any(short):
        warnings.warn(f"{sum(short)} trajectories shorter than n_g are kept "
                      "at their previous labels during inference")
    for k in range(1, max_iters + 1):
        predictor = learning_step(tset, labeling, predictor,
                                  epochs=epochs, lr=lr, batch_size=batch_size,
                                  seed=seed + 7919 * k)
        new_labels = [old if skip else dtw_infer(predictor, traj)
                      for old, skip, traj in zip(labeling.labels, short, tset.trajectories)]
        new_labeling = SubgoalLabeling(new_labels, n_g, generation=k)
        frac = label_change_fraction(labeling, new_labeling)
        labeling = new_labeling
        if frac < eps:
            labeling.converged = True
            return predictor, labeling
    labeling.converged = False
    return predictor, labeling
