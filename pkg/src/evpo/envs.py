"""
Seeded sparse-reward grid worlds: slippery FrozenLake and a one-box Sokoban.

Both environments pay a single terminal reward (1 on success, 0 otherwise)
and share the action set LEFT=0, DOWN=1, RIGHT=2, UP=3. ``reset``/``step``
are value-semantic: a step returns a new ``EnvState``.

``rollout`` runs a whole episode on a precompiled transition table and
consumes the random stream in exactly the order ``step`` would (one uniform
for the action, then one for the slip on FrozenLake), so both paths produce
identical trajectories for the same generator.

Tabular state ids:

* FrozenLake: ``pos * 16 + mask`` where ``mask`` has bit ``d`` set when the
  neighbour in direction ``d`` is a hole. The id carries the local hazard
  layout so one table generalizes across resampled maps.
* MiniSokoban: player offset from the box, target offset from the box, and
  four bits saying whether the box touches each wall. Translation-invariant,
  so pushing skills transfer between layouts.
"""

from __future__ import annotations

import enum
import functools
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Union

import numpy as np

from .advantages import Trajectory
from .errors import GenerationError, InvalidInputError, InvalidTransitionError

LEFT, DOWN, RIGHT, UP = 0, 1, 2, 3
N_ACTIONS = 4
MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))
ACTION_NAMES = ("LEFT", "DOWN", "RIGHT", "UP")

# FrozenLake cells
START, FROZEN, HOLE, GOAL = "S", "F", "H", "G"
# Sokoban cells (static layer) and overlays used by ``render``
FLOOR, TARGET = "_", "T"
PLAYER, BOX, BOX_ON_TARGET, PLAYER_ON_TARGET, AGENT = "P", "B", "*", "+", "A"


class EnvKind(str, enum.Enum):
    FROZEN_LAKE = "FrozenLakeSlippery"
    MINI_SOKOBAN = "MiniSokoban"


@dataclass(frozen=True)
class EnvConfig:
    """Task description; ``seed`` selects the layout.

    ``hole_count`` is used by FrozenLake only.
    """

    env_kind: EnvKind = EnvKind.FROZEN_LAKE
    grid_size: int = 4
    max_steps: int = 10
    hole_count: int = 3
    seed: int = 0
    max_rerolls: int = 100

    def __post_init__(self):
        object.__setattr__(self, "env_kind", EnvKind(self.env_kind))
        if self.grid_size < 3:
            raise InvalidInputError("grid_size must be >= 3")
        if self.max_steps < 1:
            raise InvalidInputError("max_steps must be >= 1")
        if self.hole_count < 0:
            raise InvalidInputError("hole_count must be >= 0")

    @classmethod
    def frozen_lake(cls, seed: int = 0, grid_size: int = 4, hole_count: int = 3,
                    max_steps: int = 10) -> "EnvConfig":
        return cls(EnvKind.FROZEN_LAKE, grid_size, max_steps, hole_count, seed)

    @classmethod
    def mini_sokoban(cls, seed: int = 0, grid_size: int = 5, max_steps: int = 20) -> "EnvConfig":
        return cls(EnvKind.MINI_SOKOBAN, grid_size, max_steps, 0, seed)

    def with_seed(self, seed: int) -> "EnvConfig":
        return replace(self, seed=int(seed))

    @property
    def n_states(self) -> int:
        g = self.grid_size
        if self.env_kind is EnvKind.FROZEN_LAKE:
            return g * g * 16
        return (2 * g - 1) ** 4 * 16


@dataclass(frozen=True)
class EnvState:
    """One environment snapshot.

    ``grid`` is the static layer as row strings: S/F/H/G for FrozenLake,
    ``_``/``T`` for Sokoban. ``aux_pos`` is the box position (Sokoban only).
    """

    kind: EnvKind
    grid: tuple[str, ...]
    agent_pos: tuple[int, int]
    aux_pos: tuple[int, int] | None
    step_count: int
    max_steps: int
    done: bool = False
    terminal_reward: float | None = None

    @property
    def size(self) -> int:
        return len(self.grid)

    def find(self, cell: str) -> tuple[int, int]:
        for r, row in enumerate(self.grid):
            c = row.find(cell)
            if c >= 0:
                return r, c
        raise KeyError(cell)


# --------------------------------------------------------------------------
# layout generation

def _frozen_lake_grid(g: int, holes) -> tuple[str, ...]:
    cells = [FROZEN] * (g * g)
    cells[0] = START
    cells[g * g - 1] = GOAL
    for h in holes:
        cells[int(h)] = HOLE
    return tuple("".join(cells[r * g:(r + 1) * g]) for r in range(g))


def _sokoban_grid(g: int, target: int) -> tuple[str, ...]:
    cells = [FLOOR] * (g * g)
    cells[target] = TARGET
    return tuple("".join(cells[r * g:(r + 1) * g]) for r in range(g))


@functools.lru_cache(maxsize=8192)
def _generate(config: EnvConfig) -> EnvState:
    g = config.grid_size
    rng = np.random.default_rng(config.seed)
    if config.env_kind is EnvKind.FROZEN_LAKE:
        candidates = np.arange(1, g * g - 1)
        k = min(config.hole_count, len(candidates))
        for _ in range(config.max_rerolls):
            holes = rng.choice(candidates, size=k, replace=False)
            state = EnvState(EnvKind.FROZEN_LAKE, _frozen_lake_grid(g, holes),
                             (0, 0), None, 0, config.max_steps)
            if frozen_lake_optimal_success(state) > 0.0:
                return state
    else:
        interior = [r * g + c for r in range(1, g - 1) for c in range(1, g - 1)]
        for _ in range(config.max_rerolls):
            target = int(rng.integers(g * g))
            box = int(rng.choice([p for p in interior if p != target]))
            player = int(rng.choice([p for p in range(g * g) if p != box]))
            state = EnvState(EnvKind.MINI_SOKOBAN, _sokoban_grid(g, target),
                             divmod(player, g), divmod(box, g), 0, config.max_steps)
            if sokoban_shortest_solution(state) is not None:
                return state
    raise GenerationError(
        f"no solvable {config.env_kind.value} layout for seed {config.seed} "
        f"after {config.max_rerolls} re-rolls"
    )


def reset(config: EnvConfig) -> EnvState:
    """Initial state of the layout selected by ``config.seed``."""
    return _generate(config)


# --------------------------------------------------------------------------
# transitions

def _move(pos: tuple[int, int], action: int, g: int) -> tuple[int, int] | None:
    dr, dc = MOVES[action]
    r, c = pos[0] + dr, pos[1] + dc
    if 0 <= r < g and 0 <= c < g:
        return r, c
    return None


def _is_corner(pos: tuple[int, int], g: int) -> bool:
    return pos[0] in (0, g - 1) and pos[1] in (0, g - 1)


def slip_direction(action: int, u: float) -> int:
    """Executed direction for commanded ``action`` given a uniform draw ``u``.

    Thirds of [0, 1) map to the left perpendicular, the intended direction
    and the right perpendicular.
    """
    if u < 1.0 / 3.0:
        return (action - 1) % N_ACTIONS
    if u < 2.0 / 3.0:
        return action
    return (action + 1) % N_ACTIONS


def step(state: EnvState, action: int, rng: np.random.Generator) -> EnvState:
    """Advance one action. FrozenLake draws one uniform from ``rng``; Sokoban none."""
    if state.done:
        raise InvalidTransitionError("cannot step a finished episode")
    if not 0 <= action < N_ACTIONS:
        raise InvalidInputError(f"action must be in [0, {N_ACTIONS}), got {action}")
    g = state.size
    t = state.step_count + 1
    if state.kind is EnvKind.FROZEN_LAKE:
        executed = slip_direction(action, float(rng.random()))
        pos = _move(state.agent_pos, executed, g) or state.agent_pos
        cell = state.grid[pos[0]][pos[1]]
        if cell == GOAL:
            return replace(state, agent_pos=pos, step_count=t, done=True, terminal_reward=1.0)
        if cell == HOLE or t >= state.max_steps:
            return replace(state, agent_pos=pos, step_count=t, done=True, terminal_reward=0.0)
        return replace(state, agent_pos=pos, step_count=t)

    player, box = state.agent_pos, state.aux_pos
    nxt = _move(player, action, g)
    if nxt is not None:
        if nxt == box:
            pushed = _move(box, action, g)
            if pushed is not None:
                player, box = nxt, pushed
        else:
            player = nxt
    if state.grid[box[0]][box[1]] == TARGET:
        return replace(state, agent_pos=player, aux_pos=box, step_count=t,
                       done=True, terminal_reward=1.0)
    if _is_corner(box, g) or t >= state.max_steps:
        return replace(state, agent_pos=player, aux_pos=box, step_count=t,
                       done=True, terminal_reward=0.0)
    return replace(state, agent_pos=player, aux_pos=box, step_count=t)


# --------------------------------------------------------------------------
# observations

def observe(state: EnvState) -> int:
    """Tabular state id of ``state`` (see module docstring)."""
    g = state.size
    if state.kind is EnvKind.FROZEN_LAKE:
        r, c = state.agent_pos
        mask = 0
        for d in range(N_ACTIONS):
            n = _move((r, c), d, g)
            if n is not None and state.grid[n[0]][n[1]] == HOLE:
                mask |= 1 << d
        return (r * g + c) * 16 + mask
    return _sokoban_obs(state.agent_pos, state.aux_pos, state.find(TARGET), g)


def _sokoban_obs(player, box, target, g: int) -> int:
    w = 2 * g - 1
    off = g - 1
    pr, pc = player[0] - box[0] + off, player[1] - box[1] + off
    tr, tc = target[0] - box[0] + off, target[1] - box[1] + off
    flags = ((box[1] == 0) | (box[0] == g - 1) << 1
             | (box[1] == g - 1) << 2 | (box[0] == 0) << 3)
    return (((pr * w + pc) * w + tr) * w + tc) * 16 + int(flags)


# --------------------------------------------------------------------------
# text format

def render(state: EnvState) -> str:
    """One character per cell, newline-separated rows, dynamic objects overlaid."""
    rows = [list(row) for row in state.grid]
    pr, pc = state.agent_pos
    if state.kind is EnvKind.FROZEN_LAKE:
        rows[pr][pc] = AGENT
    else:
        br, bc = state.aux_pos
        rows[br][bc] = BOX_ON_TARGET if rows[br][bc] == TARGET else BOX
        rows[pr][pc] = PLAYER_ON_TARGET if rows[pr][pc] == TARGET else PLAYER
    return "\n".join("".join(r) for r in rows)


def parse_grid(text: str, max_steps: int) -> EnvState:
    """Inverse of ``render`` for a fresh (step 0) state."""
    rows = [line for line in text.strip("\n").split("\n")]
    g = len(rows)
    if any(len(r) != g for r in rows):
        raise InvalidInputError("grid must be square")
    flat = "".join(rows)
    if GOAL in flat:
        agent = (0, 0)
        if AGENT in flat:
            agent = divmod(flat.index(AGENT), g)
            flat = flat.replace(AGENT, START if agent == (0, 0) else FROZEN)
        grid = tuple(flat[r * g:(r + 1) * g] for r in range(g))
        return EnvState(EnvKind.FROZEN_LAKE, grid, agent, None, 0, max_steps)
    player = box = None
    static = []
    for i, ch in enumerate(flat):
        if ch in (PLAYER, PLAYER_ON_TARGET):
            player = divmod(i, g)
        if ch in (BOX, BOX_ON_TARGET):
            box = divmod(i, g)
        static.append(TARGET if ch in (TARGET, BOX_ON_TARGET, PLAYER_ON_TARGET) else FLOOR)
    if player is None or box is None:
        raise InvalidInputError("sokoban grid needs a player and a box")
    s = "".join(static)
    grid = tuple(s[r * g:(r + 1) * g] for r in range(g))
    return EnvState(EnvKind.MINI_SOKOBAN, grid, player, box, 0, max_steps)


# --------------------------------------------------------------------------
# exact solvers used for certification and as test oracles

def frozen_lake_transition_matrix(state: EnvState) -> np.ndarray:
    """P[s, a, s'] over flattened positions; holes and goal are absorbing."""
    g = state.size
    n = g * g
    P = np.zeros((n, N_ACTIONS, n))
    for s in range(n):
        r, c = divmod(s, g)
        if state.grid[r][c] in (HOLE, GOAL):
            P[s, :, s] = 1.0
            continue
        for a in range(N_ACTIONS):
            for d in ((a - 1) % N_ACTIONS, a, (a + 1) % N_ACTIONS):
                nr, nc = _move((r, c), d, g) or (r, c)
                P[s, a, nr * g + nc] += 1.0 / 3.0
    return P


def _goal_mask(state: EnvState) -> np.ndarray:
    return np.array([ch == GOAL for row in state.grid for ch in row], dtype=float)


def frozen_lake_value_iteration(state: EnvState, horizon: int | None = None):
    """Finite-horizon optimal success probabilities.

    Returns ``(V, Q)`` where ``V[k, s]`` is the best success probability with
    ``k`` actions left and ``Q[k, s, a]`` the action values with ``k`` left.
    """
    horizon = state.max_steps if horizon is None else horizon
    P = frozen_lake_transition_matrix(state)
    goal = _goal_mask(state)
    n = P.shape[0]
    V = np.zeros((horizon + 1, n))
    Q = np.zeros((horizon + 1, n, N_ACTIONS))
    V[0] = goal
    holes = np.array([ch == HOLE for row in state.grid for ch in row])
    for k in range(1, horizon + 1):
        Q[k] = P @ V[k - 1]
        V[k] = np.where(goal > 0, 1.0, Q[k].max(axis=1))
        V[k][holes] = 0.0
    return V, Q


def frozen_lake_optimal_success(state: EnvState) -> float:
    V, _ = frozen_lake_value_iteration(state)
    r, c = state.agent_pos
    return float(V[state.max_steps - state.step_count, r * state.size + c])


def frozen_lake_policy_success(state: EnvState, policy: np.ndarray) -> float:
    """Exact success probability of a stationary position policy ``policy[s, a]``."""
    P = frozen_lake_transition_matrix(state)
    goal = _goal_mask(state)
    Ppi = np.einsum("sa,sat->st", policy, P)
    v = goal.copy()
    holes = np.array([ch == HOLE for row in state.grid for ch in row])
    for _ in range(state.max_steps - state.step_count):
        v = Ppi @ v
        v[goal > 0] = 1.0
        v[holes] = 0.0
    r, c = state.agent_pos
    return float(v[r * state.size + c])


def sokoban_shortest_solution(state: EnvState) -> int | None:
    """Fewest actions that put the box on the target, or None within budget."""
    g = state.size
    target = state.find(TARGET)
    budget = state.max_steps - state.step_count
    start = (state.agent_pos, state.aux_pos)
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        (player, box), d = frontier.popleft()
        if d >= budget:
            continue
        for a in range(N_ACTIONS):
            nxt = _move(player, a, g)
            if nxt is None:
                continue
            nbox = box
            if nxt == box:
                nbox = _move(box, a, g)
                if nbox is None:
                    continue
            if nbox == target:
                return d + 1
            if _is_corner(nbox, g):
                continue
            key = (nxt, nbox)
            if key not in seen:
                seen.add(key)
                frontier.append((key, d + 1))
    return None


# --------------------------------------------------------------------------
# fast episode runner

@dataclass(frozen=True)
class _Compiled:
    kind: EnvKind
    g: int
    max_steps: int
    start: int
    box: int
    target: int
    next_pos: tuple        # next_pos[pos][dir] -> pos, or -1 at a wall (sokoban)
    terminal: tuple        # FrozenLake: 0 frozen, 1 hole, 2 goal
    obs: tuple             # FrozenLake obs id per position


@functools.lru_cache(maxsize=8192)
def _compile(config: EnvConfig) -> _Compiled:
    state = reset(config)
    g = config.grid_size
    nxt = []
    for p in range(g * g):
        row = []
        for d in range(N_ACTIONS):
            m = _move(divmod(p, g), d, g)
            row.append(-1 if m is None else m[0] * g + m[1])
        nxt.append(tuple(row))
    flat = "".join(state.grid)
    if config.env_kind is EnvKind.FROZEN_LAKE:
        terminal = tuple(1 if ch == HOLE else 2 if ch == GOAL else 0 for ch in flat)
        obs = tuple(observe(replace(state, agent_pos=divmod(p, g))) for p in range(g * g))
        return _Compiled(config.env_kind, g, config.max_steps, 0, -1, -1,
                         tuple(nxt), terminal, obs)
    pr, pc = state.agent_pos
    br, bc = state.aux_pos
    tr, tc = state.find(TARGET)
    return _Compiled(config.env_kind, g, config.max_steps, pr * g + pc, br * g + bc,
                     tr * g + tc, tuple(nxt), (), ())


Policy = Union[np.ndarray, Callable[[int], np.ndarray]]


def rollout(config: EnvConfig, policy: Policy, rng: np.random.Generator,
            value_fn: Callable[[np.ndarray], np.ndarray] | None = None) -> Trajectory:
    """Sample one episode.

    Args:
        config: task (layout chosen by ``config.seed``).
        policy: either a callable ``state_id -> probabilities`` or an
            ``(n_states, 4)`` probability table.
        rng: stream used for action sampling and slips.
        value_fn: optional critic read applied to the visited state ids;
            values default to zeros.
    """
    env = _compile(config)
    probs = policy.__getitem__ if isinstance(policy, np.ndarray) else policy
    cdf = lambda s: np.cumsum(probs(s))  # noqa: E731
    last = N_ACTIONS - 1
    states: list[int] = []
    actions: list[int] = []
    reward = 0.0
    g = env.g
    nxt = env.next_pos

    if env.kind is EnvKind.FROZEN_LAKE:
        pos = env.start
        for t in range(env.max_steps):
            s = env.obs[pos]
            a = min(int(np.searchsorted(cdf(s), rng.random(), side="right")), last)
            states.append(s)
            actions.append(a)
            u = rng.random()
            d = (a - 1) % N_ACTIONS if u < 1.0 / 3.0 else a if u < 2.0 / 3.0 else (a + 1) % N_ACTIONS
            q = nxt[pos][d]
            if q >= 0:
                pos = q
            kind = env.terminal[pos]
            if kind == 2:
                reward = 1.0
                break
            if kind == 1:
                break
    else:
        player, box, target = env.start, env.box, env.target
        for t in range(env.max_steps):
            s = _sokoban_obs(divmod(player, g), divmod(box, g), divmod(target, g), g)
            a = min(int(np.searchsorted(cdf(s), rng.random(), side="right")), last)
            states.append(s)
            actions.append(a)
            q = nxt[player][a]
            if q >= 0:
                if q == box:
                    b2 = nxt[box][a]
                    if b2 >= 0:
                        player, box = q, b2
                else:
                    player = q
            if box == target:
                reward = 1.0
                break
            if _is_corner(divmod(box, g), g):
                break

    n = len(states)
    rewards = np.zeros(n)
    rewards[-1] = reward
    s_arr = np.asarray(states, dtype=np.int64)
    values = np.zeros(n) if value_fn is None else np.asarray(value_fn(s_arr), dtype=float)
    return Trajectory(s_arr, np.asarray(actions, dtype=np.int64), rewards, values, reward)


def uniform_policy(n_states: int) -> np.ndarray:
    return np.full((n_states, N_ACTIONS), 1.0 / N_ACTIONS)
