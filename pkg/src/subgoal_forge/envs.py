"""Three deterministic grid tasks with goal-only sparse reward.

ring_maze:   21x21, four concentric square walls, each pierced by a single
             one-cell gap on alternating sides; start anywhere on the outer
             band, goal at the center.
open_target: 15x15 open field; start on a 45-degree arc of cells at radius
             six from the center goal.
u_maze:      11x7 U-shaped corridor; fixed entrance, goal at the far tip.

Stepping into a wall leaves the position unchanged. Reward is +1 exactly
when the post-step cell is a goal cell, otherwise 0. Episodes end on the
goal or at the step cap.
"""

from __future__ import annotations

from collections import deque

import numpy as np

ACTION_NAMES = ("up", "down", "left", "right", "noop")
ACTION_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))
N_ACTIONS = 5

ENV_NAMES = ("ring_maze", "open_target", "u_maze")
ENCODINGS = ("normalized_xy", "onehot_cell")

DEFAULT_GAMMA = 0.99


class GridEnv:
    """Deterministic grid MDP. One instance serves one rollout worker."""

    def __init__(self, name, height, width, walls, start_cells, goal_cells,
                 step_cap=None, gamma=DEFAULT_GAMMA, encoding="normalized_xy", seed=0):
        if encoding not in ENCODINGS:
            raise ValueError(f"unknown encoding {encoding!r}")
        self.name = name
        self.height = int(height)
        self.width = int(width)
        self.walls = frozenset(walls)
        self.start_cells = tuple(sorted(start_cells))
        self.goal_cells = frozenset(goal_cells)
        self.gamma = float(gamma)
        self.encoding = encoding

        for cell in self.start_cells + tuple(self.goal_cells):
            if cell in self.walls:
                raise ValueError(f"{name}: cell {cell} is both special and wall")

        self._cells = self._reachable_cells()
        self._index = {c: i for i, c in enumerate(self._cells)}
        self._dist = self._distances_to_goal()
        for s in self.start_cells:
            if s not in self._dist:
                raise ValueError(f"{name}: start {s} cannot reach a goal cell")

        if step_cap is None:
            step_cap = 8 * max(self._dist[s] for s in self.start_cells)
        self.step_cap = int(step_cap)

        self._enc_table = {c: self._encode(c) for c in self._cells}

        self._rng = np.random.default_rng(seed)
        self.pos = None
        self.steps_taken = 0
        self.done = True
        self.reached_goal = False
        self.step_count = 0  # lifetime counter, used to assert pure-offline phases

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_ascii(cls, name, art, step_cap=None, gamma=DEFAULT_GAMMA,
                   encoding="normalized_xy", seed=0):
        """Parse a layout drawing: '#' wall, '.' free, 'S' start, 'G' goal."""
        rows = [r for r in art.strip("\n").splitlines()]
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise ValueError("ragged layout")
        walls, starts, goals = set(), set(), set()
        for r, row in enumerate(rows):
            for c, ch in enumerate(row):
                if ch == "#":
                    walls.add((r, c))
                elif ch == "S":
                    starts.add((r, c))
                elif ch == "G":
                    goals.add((r, c))
                elif ch != ".":
                    raise ValueError(f"bad layout char {ch!r} at {(r, c)}")
        return cls(name, len(rows), width, walls, starts, goals,
                   step_cap=step_cap, gamma=gamma, encoding=encoding, seed=seed)

    def clone(self, seed=None):
        return GridEnv(self.name, self.height, self.width, self.walls,
                       self.start_cells, self.goal_cells, step_cap=self.step_cap,
                       gamma=self.gamma, encoding=self.encoding,
                       seed=self._rng.integers(2**31 - 1) if seed is None else seed)

    def _reachable_cells(self):
        free = [(r, c) for r in range(self.height) for c in range(self.width)
                if (r, c) not in self.walls]
        freeset = set(free)
        seen = set(self.start_cells)
        queue = deque(self.start_cells)
        while queue:
            cur = queue.popleft()
            for dr, dc in ACTION_DELTAS[:4]:
                nxt = (cur[0] + dr, cur[1] + dc)
                if nxt in freeset and nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return tuple(sorted(seen))

    def _distances_to_goal(self):
        dist = {g: 0 for g in self.goal_cells if g in self._index}
        queue = deque(dist)
        cellset = set(self._cells)
        while queue:
            cur = queue.popleft()
            for dr, dc in ACTION_DELTAS[:4]:
                nxt = (cur[0] + dr, cur[1] + dc)
                if nxt in cellset and nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    queue.append(nxt)
        return dist

    # -- state encoding --------------------------------------------------------

    @property
    def state_dim(self) -> int:
        return 2 if self.encoding == "normalized_xy" else len(self._cells)

    @property
    def n_states(self) -> int:
        return len(self._cells)

    @property
    def cells(self):
        return self._cells

    def _encode(self, cell):
        if self.encoding == "normalized_xy":
            r, c = cell
            return np.array([c / (self.width - 1), r / (self.height - 1)])
        vec = np.zeros(len(self._cells))
        vec[self._index[cell]] = 1.0
        return vec

    def encode_cell(self, cell) -> np.ndarray:
        return self._enc_table[cell].copy()

    def decode(self, state) -> tuple[int, int]:
        state = np.asarray(state, dtype=np.float64)
        if self.encoding == "onehot_cell":
            return self._cells[int(np.argmax(state))]
        c = int(round(state[0] * (self.width - 1)))
        r = int(round(state[1] * (self.height - 1)))
        return (r, c)

    def index_of_cell(self, cell) -> int:
        return self._index[cell]

    def tabular_index(self, state) -> int:
        """Bijection between reachable states and 0..n_states-1."""
        return self._index[self.decode(state)]

    def distance_to_goal(self, cell) -> int:
        return self._dist[cell]

    # -- dynamics ---------------------------------------------------------------

    def transition(self, cell, action) -> tuple[int, int]:
        """Pure one-step dynamics; walls and borders bounce back."""
        dr, dc = ACTION_DELTAS[action]
        nxt = (cell[0] + dr, cell[1] + dc)
        if (nxt[0] < 0 or nxt[0] >= self.height or nxt[1] < 0
                or nxt[1] >= self.width or nxt in self.walls):
            return cell
        return nxt

    def optimal_action(self, cell) -> int:
        """First action (in fixed order) that reduces BFS distance to goal."""
        d = self._dist[cell]
        for a in range(4):
            nxt = self.transition(cell, a)
            if self._dist.get(nxt, d) < d:
                return a
        return 4  # only at the goal itself

    def reset(self, seed=None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.pos = self.start_cells[self._rng.integers(len(self.start_cells))]
        self.steps_taken = 0
        self.done = False
        self.reached_goal = False
        return self.encode_cell(self.pos)

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise RuntimeError("step() called on a finished episode; reset first")
        action = int(action)
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"action {action} outside 0..{N_ACTIONS - 1}")
        self.pos = self.transition(self.pos, action)
        self.steps_taken += 1
        self.step_count += 1
        self.reached_goal = self.pos in self.goal_cells
        reward = 1.0 if self.reached_goal else 0.0
        self.done = self.reached_goal or self.steps_taken >= self.step_cap
        return self.encode_cell(self.pos), reward, self.done

    # -- rendering ---------------------------------------------------------------

    def ascii_layout(self) -> str:
        rows = []
        for r in range(self.height):
            row = []
            for c in range(self.width):
                cell = (r, c)
                if cell in self.walls:
                    row.append("#")
                elif cell in self.goal_cells:
                    row.append("G")
                elif cell in self.start_cells:
                    row.append("S")
                else:
                    row.append(".")
            rows.append("".join(row))
        return "\n".join(rows)


def _ring_maze():
    size = 21
    center = (10, 10)
    walls = set()
    for r in range(size):
        for c in range(size):
            if r in (0, size - 1) or c in (0, size - 1):
                walls.add((r, c))
    # concentric square walls at Chebyshev radii 8, 6, 4, 2 with one gap each,
    # gaps alternating north/south so the corridor winds back and forth
    gaps = {(2, 10), (16, 10), (6, 10), (12, 10)}
    for radius in (8, 6, 4, 2):
        for r in range(size):
            for c in range(size):
                if max(abs(r - center[0]), abs(c - center[1])) == radius:
                    if (r, c) not in gaps:
                        walls.add((r, c))
    starts = {(r, c) for r in range(size) for c in range(size)
              if max(abs(r - 10), abs(c - 10)) == 9}
    return size, size, walls, starts, {center}


def _open_target():
    size = 15
    center = (7, 7)
    walls = {(r, c) for r in range(size) for c in range(size)
             if r in (0, size - 1) or c in (0, size - 1)}
    starts = set()
    for r in range(size):
        for c in range(size):
            dr, dc = r - center[0], c - center[1]
            d = np.hypot(dr, dc)
            if 5.5 <= d <= 6.5:
                angle = np.degrees(np.arctan2(-dr, dc))  # north is positive
                if 0.0 <= angle <= 45.0:
                    starts.add((r, c))
    return size, size, walls, starts, {center}


_U_MAZE_ART = """
###########
#S..###..G#
#...###...#
#...###...#
#.........#
#.........#
###########
"""


def make_env(name, encoding="normalized_xy", step_cap=None,
             gamma=DEFAULT_GAMMA, seed=0) -> GridEnv:
    if name == "ring_maze":
        h, w, walls, starts, goals = _ring_maze()
        return GridEnv(name, h, w, walls, starts, goals, step_cap=step_cap,
                       gamma=gamma, encoding=encoding, seed=seed)
    if name == "open_target":
        h, w, walls, starts, goals = _open_target()
        return GridEnv(name, h, w, walls, starts, goals, step_cap=step_cap,
                       gamma=gamma, encoding=encoding, seed=seed)
    if name == "u_maze":
        return GridEnv.from_ascii(name, _U_MAZE_ART, step_cap=step_cap,
                                  gamma=gamma, encoding=encoding, seed=seed)
    raise ValueError(f"unknown env {name!r}, expected one of {ENV_NAMES}")
