"""Behavior cloning, synchronous advantage actor-critic, and tabular oracles.

The actor-critic is single-worker and n-step: collect up to n transitions
(never crossing an episode end), bootstrap the return from the value head,
and take one Adam step on each net. Shaped rewards only enter the update;
the learning curve logs greedy evaluations on the raw sparse reward. With a
fixed seed the whole run is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nets
from .envs import GridEnv, N_ACTIONS
from .shaping import ShapingPotential, potential
from .trajectories import TrajectorySet


@dataclass
class Policy:
    net: nets.Mlp      # softmax over actions
    value: nets.Mlp    # scalar state value


def new_policy(state_dim: int, n_actions: int = N_ACTIONS, hidden=(64, 64),
               seed: int = 0) -> Policy:
    pol = nets.init_mlp([state_dim, *hidden, n_actions], head="softmax", seed=seed)
    val = nets.init_mlp([state_dim, *hidden, 1], head="linear", seed=seed + 1)
    return Policy(pol, val)


@dataclass
class TrainConfig:
    total_env_steps: int = 500_000
    n_step: int = 8
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    lr: float = 3e-4
    gamma: float | None = None  # default: the env's discount
    eval_interval: int = 10_000
    eval_episodes: int = 20
    seed: int = 0
    shaping: str = "none"  # metadata only; the potential object decides

    def __post_init__(self):
        for name in ("entropy_coef", "value_coef", "lr"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
        if self.total_env_steps < 1 or self.n_step < 1 or self.eval_interval < 1:
            raise ValueError("step counts must be positive")
        if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss; carries the last finite parameters."""

    def __init__(self, message, policy: Policy):
        super().__init__(message)
        self.policy = policy


@dataclass
class EvalResult:
    mean_return: float
    success_rate: float
    returns: list[float] = field(repr=False, default_factory=list)


def pretrain(policy: Policy, tset: TrajectorySet, epochs: int = 20, lr: float = 1e-3,
             batch_size: int = 64, seed: int = 0) -> tuple[Policy, float]:
    """Clone expert actions by cross-entropy; touches no environment.

    Returns the updated policy and its final training accuracy.
    """
    x = tset.all_states()
    y = tset.all_actions()
    net, _ = nets.fit(policy.net, x, "cross_entropy", y, epochs=epochs, lr=lr,
                      batch_size=batch_size, seed=seed)
    acc = float((nets.forward_batch(net, x).argmax(axis=1) == y).mean())
    return Policy(net, policy.value), acc


def evaluate(policy: Policy, env: GridEnv, episodes: int = 20, seed: int = 0) -> EvalResult:
    """Greedy rollouts on the raw sparse reward; returns are discounted."""
    returns = []
    successes = 0
    for ep in range(episodes):
        state = env.reset(seed=seed * 100_003 + ep)
        ret, disc = 0.0, 1.0
        done = False
        while not done:
            action = int(np.argmax(nets.forward(policy.net, state)))
            state, reward, done = env.step(action)
            ret += disc * reward
            disc *= env.gamma
        returns.append(ret)
        successes += int(env.reached_goal)
    return EvalResult(float(np.mean(returns)), successes / episodes, returns)


def _sample(pmf: np.ndarray, rng) -> int:
    u = rng.random()
    return min(int(np.searchsorted(np.cumsum(pmf), u)), len(pmf) - 1)


def train_a2c(policy: Policy, env: GridEnv, pot: ShapingPotential,
              cfg: TrainConfig) -> tuple[Policy, list[tuple[int, float, float]]]:
    """Run n-step advantage actor-critic; returns the policy and its curve.

    Curve rows are (env_steps, mean_return, success_rate) from periodic
    greedy evaluations with the sparse reward.
    """
    gamma = env.gamma if cfg.gamma is None else cfg.gamma
    rng = np.random.default_rng(cfg.seed)
    eval_env = env.clone(seed=cfg.seed + 101)
    pol, val = policy.net, policy.value
    step_pol = nets.make_step(cfg.lr)
    step_val = nets.make_step(cfg.lr)

    phi_cache: dict[int, float] = {}

    def phi(cell_idx, state):
        got = phi_cache.get(cell_idx)
        if got is None:
            got = potential(pot, state)
            phi_cache[cell_idx] = got
        return got

    curve: list[tuple[int, float, float]] = []
    n_env = 0

    def run_eval():
        res = evaluate(Policy(pol, val), eval_env, cfg.eval_episodes,
                       seed=cfg.seed + 9999)
        curve.append((n_env, res.mean_return, res.success_rate))

    run_eval()
    next_eval = cfg.eval_interval

    state = env.reset(seed=int(rng.integers(2**31 - 1)))
    cell_idx = env.index_of_cell(env.pos)

    while n_env < cfg.total_env_steps:
        xs, acts, rews, pmfs = [], [], [], []
        terminal = False
        bootstrap_state = None
        for _ in range(cfg.n_step):
            pmf = nets.forward(pol, state)
            action = _sample(pmf, rng)
            phi_s = phi(cell_idx, state)
            next_state, r_env, done = env.step(action)
            next_idx = env.index_of_cell(env.pos)
            terminal = env.reached_goal
            r_sh = r_env + gamma * (0.0 if terminal else phi(next_idx, next_state)) - phi_s
            xs.append(state)
            acts.append(action)
            rews.append(r_sh)
            pmfs.append(pmf)
            n_env += 1
            if done:
                bootstrap_state = next_state  # used only when truncated
                state = env.reset(seed=int(rng.integers(2**31 - 1)))
                cell_idx = env.index_of_cell(env.pos)
                break
            state, cell_idx = next_state, next_idx
            if n_env >= cfg.total_env_steps:
                break
        else:
            bootstrap_state = state

        if bootstrap_state is None:
            bootstrap_state = state
        k = len(xs)
        x = np.stack(xs)
        ret = 0.0 if terminal else float(nets.forward(val, bootstrap_state)[0])
        targets = np.empty(k)
        for i in range(k - 1, -1, -1):
            ret = rews[i] + gamma * ret
            targets[i] = ret
        values = nets.forward_batch(val, x)[:, 0]
        adv = targets - values

        p = np.stack(pmfs)
        logp = np.log(p)
        entropy = -(p * logp).sum(axis=1)
        onehot = np.zeros((k, pol.out_dim))
        onehot[np.arange(k), acts] = 1.0
        dlogits = (p - onehot) * adv[:, None]
        dlogits += cfg.entropy_coef * p * (logp + entropy[:, None])
        dlogits /= k
        dval = (2.0 * cfg.value_coef * (values - targets) / k)[:, None]

        try:
            gp = nets.backward_logits(pol, x, dlogits)
            gv = nets.backward_logits(val, x, dval)
            pol, step_pol = nets.apply_step(pol, gp, step_pol)
            val, step_val = nets.apply_step(val, gv, step_val)
        except FloatingPointError as err:
            raise TrainingDiverged(
                f"non-finite update at env step {n_env}: {err}", Policy(pol, val)
            ) from err

        if n_env >= next_eval:
            run_eval()
            next_eval += cfg.eval_interval

    if curve[-1][0] != n_env:
        run_eval()
    return Policy(pol, val), curve


def save_policy(policy: Policy, path) -> None:
    with open(path, "w") as fh:
        fh.write("POLICYCKPT v1\n")
        fh.write(nets.dump_mlp(policy.net))
        fh.write(nets.dump_mlp(policy.value))


def load_policy(path) -> Policy:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "POLICYCKPT v1":
        raise ValueError(f"{path}: not a POLICYCKPT v1 file")
    starts = [i for i, ln in enumerate(lines) if ln == "MLPCKPT v1"]
    if len(starts) != 2:
        raise ValueError(f"{path}: expected exactly two net blocks")
    first = "\n".join(lines[starts[0]:starts[1]]) + "\n"
    second = "\n".join(lines[starts[1]:]) + "\n"
    return Policy(nets.parse_mlp(first, where=str(path)),
                  nets.parse_mlp(second, where=str(path)))


# -- tabular oracles -------------------------------------------------------------


def _transition_tables(env: GridEnv):
    n = env.n_states
    ns = np.empty((n, N_ACTIONS), dtype=np.int64)
    goal_next = np.zeros((n, N_ACTIONS), dtype=bool)
    for i, cell in enumerate(env.cells):
        for a in range(N_ACTIONS):
            nxt = env.transition(cell, a)
            ns[i, a] = env.index_of_cell(nxt)
            goal_next[i, a] = nxt in env.goal_cells
    return ns, goal_next


def shaped_reward_table(env: GridEnv, pot: ShapingPotential | None) -> np.ndarray:
    """r_env + gamma*phi(s') - phi(s) for every (state, action); goal rows unused."""
    ns, goal_next = _transition_tables(env)
    r = goal_next.astype(np.float64)
    if pot is None:
        return r
    phi = np.array([potential(pot, env.encode_cell(c)) for c in env.cells])
    phi_next = np.where(goal_next, 0.0, phi[ns])
    return r + pot.gamma * phi_next - phi[:, None]


def value_iteration(env: GridEnv, pot: ShapingPotential | None = None,
                    tol: float = 1e-13, max_sweeps: int = 100_000):
    """Exact V and Q for the (optionally shaped) absorbing-goal MDP."""
    ns, goal_next = _transition_tables(env)
    r = shaped_reward_table(env, pot)
    goal_idx = np.array([env.index_of_cell(c) for c in env.goal_cells
                         if c in set(env.cells)])
    v = np.zeros(env.n_states)
    for _ in range(max_sweeps):
        q = r + env.gamma * np.where(goal_next, 0.0, v[ns])
        v_new = q.max(axis=1)
        v_new[goal_idx] = 0.0
        if np.abs(v_new - v).max() < tol:
            v = v_new
            break
        v = v_new
    q = r + env.gamma * np.where(goal_next, 0.0, v[ns])
    return v, q


def greedy_action_sets(q: np.ndarray, tol: float = 1e-9) -> list[frozenset]:
    """Per-state set of actions within tol of the best."""
    best = q.max(axis=1, keepdims=True)
    return [frozenset(np.flatnonzero(row >= b - tol)) for row, b in zip(q, best)]


def train_tabular_q(env: GridEnv, pot: ShapingPotential | None = None,
                    episodes: int = 2000, alpha: float = 0.1,
                    eps_greedy: float = 0.1, seed: int = 0) -> np.ndarray:
    """Plain epsilon-greedy Q-learning over tabular states with shaped reward."""
    rng = np.random.default_rng(seed)
    q = np.zeros((env.n_states, N_ACTIONS))
    phi_cache: dict[int, float] = {}

    def phi(idx, st):
        got = phi_cache.get(idx)
        if got is None:
            got = 0.0 if pot is None else potential(pot, st)
            phi_cache[idx] = got
        return got

    for _ in range(episodes):
        state = env.reset(seed=int(rng.integers(2**31 - 1)))
        s = env.index_of_cell(env.pos)
        done = False
        while not done:
            if rng.random() < eps_greedy:
                a = int(rng.integers(N_ACTIONS))
            else:
                a = int(np.argmax(q[s]))
            phi_s = phi(s, state)
            state, r_env, done = env.step(a)
            s2 = env.index_of_cell(env.pos)
            terminal = env.reached_goal
            r_sh = r_env + env.gamma * (0.0 if terminal else phi(s2, state)) - phi_s
            target = r_sh + env.gamma * (0.0 if terminal else q[s2].max())
            q[s, a] += alpha * (target - q[s, a])
            s = s2
    return q
