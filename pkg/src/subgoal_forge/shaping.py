"""Potential functions and the shaped extrinsic reward.

The potential of a state is its predicted sub-goal index, counted from 0 so
demo start states sit at potential 0. The gated variant zeroes the potential
wherever the one-class utility says the state is out-of-set. The shaped
reward r_env + gamma*phi(s') - phi(s) is used during RL updates only; all
reported evaluation numbers stay on the original sparse reward. On the
transition that ends an episode at the goal, the successor potential is the
absorbing pseudo-state's, defined as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .outofset import UtilityModel, in_set
from .subgoals import SubgoalPredictor
from .trajectories import TrajectorySet

VARIANTS = ("none", "subgoal", "gated_subgoal", "value")


@dataclass
class ShapingPotential:
    variant: str
    gamma: float
    predictor: SubgoalPredictor | None = None
    utility_model: UtilityModel | None = None
    value_net: nets.Mlp | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown shaping variant {self.variant!r}")
        if self.variant in ("subgoal", "gated_subgoal") and self.predictor is None:
            raise ValueError(f"{self.variant} needs a sub-goal predictor")
        if self.variant == "gated_subgoal" and self.utility_model is None:
            raise ValueError("gated_subgoal needs a utility model")
        if self.variant == "value" and self.value_net is None:
            raise ValueError("value shaping needs a value net")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")


def potential(p: ShapingPotential, state) -> float:
    if p.variant == "none":
        return 0.0
    if p.variant == "value":
        return float(nets.forward(p.value_net, state)[0])
    # argmax over the p.m.f., ties to the lower index, 0-based
    idx = int(np.argmax(p.predictor.predict(state)))
    if p.variant == "gated_subgoal" and not in_set(p.utility_model, state):
        return 0.0
    return float(idx)


def shaped_reward(p: ShapingPotential, state, action, next_state, r_env: float,
                  terminal: bool = False) -> float:
    """r_env + gamma*phi(s') - phi(s); phi(s') is 0 past the terminal."""
    nxt = 0.0 if terminal else potential(p, next_state)
    return r_env + p.gamma * nxt - potential(p, state)


def fit_value_baseline(tset: TrajectorySet, gamma: float, epochs: int = 100,
                       lr: float = 1e-3, batch_size: int = 64, seed: int = 0,
                       hidden=(64, 64)) -> nets.Mlp:
    """Regress state values onto discounted steps-to-go from the demos.

    A state k steps before the goal gets target gamma**k, so the last state
    of each episode (one action from the goal) regresses onto gamma.
    """
    x = tset.all_states()
    targets = np.concatenate([
        gamma ** np.arange(len(t), 0, -1, dtype=np.float64)
        for t in tset.trajectories
    ])[:, None]
    net = nets.init_mlp([tset.state_dim, *hidden, 1], head="linear", seed=seed)
    net, _ = nets.fit(net, x, "mse", targets, epochs=epochs, lr=lr,
                      batch_size=batch_size, seed=seed)
    return net
