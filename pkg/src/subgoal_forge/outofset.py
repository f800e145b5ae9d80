"""One-class utility: how well a state is covered by the demonstration set.

A bias-free embedding net is pulled toward a fixed center on the corpus
states; the squared distance to the center is the utility score. Low means
seen, high means out-of-set. The threshold delta is calibrated as a high
quantile of the training scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .trajectories import TrajectorySet


@dataclass
class UtilityModel:
    net: nets.Mlp
    center: np.ndarray  # frozen after initialization
    delta: float
    l2: float


def fit_utility(tset: TrajectorySet, m: int = 16, l2: float = 1e-4,
                epochs: int = 100, lr: float = 1e-3, batch_size: int = 64,
                seed: int = 0, hidden=(64, 64),
                delta_quantile: float = 0.99) -> UtilityModel:
    """Train the embedding on all corpus states.

    The center is the untrained net's mean embedding of the corpus (never
    trained afterwards). If the initial embeddings already collapse onto the
    center, the net is re-initialized with a fresh seed.
    """
    if m < 2:
        raise ValueError("embedding dim m must be >= 2")
    x = tset.all_states()
    net = None
    center = None
    for attempt in range(8):
        cand = nets.init_mlp([tset.state_dim, *hidden, m], head="linear",
                             seed=seed + 1009 * attempt, use_bias=False)
        emb = nets.forward_batch(cand, x)
        c = emb.mean(axis=0)
        if np.linalg.norm(emb - c, axis=1).mean() >= 1e-8:
            net, center = cand, c
            break
    if net is None:
        raise RuntimeError("embedding collapsed at initialization for every reseed")
    net, _ = nets.fit(net, x, "svdd", center, epochs=epochs, lr=lr,
                      batch_size=batch_size, seed=seed, l2=l2)
    scores = ((nets.forward_batch(net, x) - center) ** 2).sum(axis=1)
    delta = float(np.quantile(scores, delta_quantile))
    return UtilityModel(net, center, delta, l2)


def utility(model: UtilityModel, state) -> float:
    """Squared distance of the embedded state from the center; always >= 0."""
    diff = nets.forward(model.net, state) - model.center
    return float((diff**2).sum())


def utility_batch(model: UtilityModel, states) -> np.ndarray:
    diff = nets.forward_batch(model.net, states) - model.center
    return (diff**2).sum(axis=1)


def in_set(model: UtilityModel, state) -> bool:
    return utility(model, state) <= model.delta


def save_utility(model: UtilityModel, path) -> None:
    with open(path, "w") as fh:
        fh.write("UTILCKPT v1\n")
        fh.write("center " + " ".join("%.17g" % v for v in model.center) + "\n")
        fh.write("delta %.17g\n" % model.delta)
        fh.write("l2 %.17g\n" % model.l2)
        fh.write(nets.dump_mlp(model.net))


def load_utility(path) -> UtilityModel:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "UTILCKPT v1":
        raise ValueError(f"{path}: not a UTILCKPT v1 file")
    center = np.array([float(v) for v in lines[1].split()[1:]])
    delta = float(lines[2].split()[1])
    l2 = float(lines[3].split()[1])
    net = nets.parse_mlp("\n".join(lines[4:]) + "\n", where=str(path))
    return UtilityModel(net, center, delta, l2)
