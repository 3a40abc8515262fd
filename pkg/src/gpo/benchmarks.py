"""Benchmark model families: the mining robot, Hallway, RockSample.

Also a random-model generator used by the property tests.
"""
from __future__ import annotations

from importlib import resources

import numpy as np

from .model import PomdpModel, RawPomdpModel, determinize_observations


def gen_tiger_mining() -> PomdpModel:
    """The two-ore mining robot (a tiger-style problem with 7 states).

    The ore type (``t1`` or ``t2``) is hidden. ``m1``/``m2`` mine the matching
    type and wreck the robot on the other; ``ms`` succeeds with probability
    0.6 on either type; ``sense`` reveals the type at the cost of one step.
    Reaching ``mnd`` pays 100 on the following step, discount 1/2.
    """
    states = ["t1", "t2", "t1p", "t2p", "mnd", "fail", "fin"]
    actions = ["m1", "m2", "ms", "sense"]
    observations = ["ore", "ore1", "ore2", "mined", "failed", "done"]
    ix = {s: i for i, s in enumerate(states)}
    T = np.zeros((7, 4, 7))

    def edge(s, a, s2, p=1.0):
        T[ix[s], actions.index(a), ix[s2]] = p

    for i, other in ((1, 2), (2, 1)):
        t = f"t{i}"
        edge(t, f"m{i}", "mnd")
        edge(t, f"m{other}", "fail")
        edge(t, "ms", "mnd", 0.6)
        edge(t, "ms", t, 0.4)
        edge(t, "sense", f"t{i}p")
    for a in actions:
        edge("t1p", a, "mnd")
        edge("t2p", a, "mnd")
        edge("mnd", a, "fin")
        edge("fail", a, "fail")
        edge("fin", a, "fin")
    R = np.zeros((7, 4))
    R[ix["mnd"], :] = 100.0
    obs = [0, 0, 1, 2, 3, 4, 5]
    lam = np.zeros(7)
    lam[ix["t1"]], lam[ix["t2"]] = 0.9, 0.1
    return PomdpModel(states, actions, observations, T, R, obs, lam, 0.5, name="tiger")


def tiger_mining_text() -> str:
    """Text of the shipped mining-robot model file."""
    return resources.files("gpo.data").joinpath("tiger_mining.pomdp").read_text(encoding="utf-8")


# headings: 0 = north (+y), 1 = east (+x), 2 = south, 3 = west
_STEP = ((0, 1), (1, 0), (0, -1), (-1, 0))


def gen_hallway(
    width: int,
    height: int,
    traps=(),
    trap_kind: str = "spin",
    discount: float = 0.95,
    *,
    goal=None,
    start=None,
    walls=(),
    goal_reward: float = 1.0,
    slip: float = 0.0,
) -> PomdpModel:
    """Gridworld navigation with hidden position and heading.

    The robot sees the wall pattern around it relative to its heading
    (front, right, back, left) and can move ``forward``, ``turn-left`` or
    ``turn-right``. Moving into a wall leaves it in place; with probability
    ``slip`` a forward move fails. Entering the goal pays ``goal_reward`` on
    the next step, then the robot is absorbed. Damage traps absorb it with
    reward zero; spin traps leave it on the trap cell with a uniformly random
    heading.

    State count is ``free cells * 4 + 1`` (the shared absorbing sink).
    """
    if width < 1 or height < 1:
        raise ValueError("grid must be nonempty")
    if trap_kind not in ("damage", "spin"):
        raise ValueError(f"unknown trap kind {trap_kind!r}")
    if not 0.0 <= slip < 1.0:
        raise ValueError("slip must be in [0, 1)")
    blocked = {tuple(c) for c in walls}
    cells = [(x, y) for y in range(height) for x in range(width) if (x, y) not in blocked]
    if not cells:
        raise ValueError("grid has no free cell")
    free = set(cells)
    goal = tuple(goal) if goal is not None else (width - 1, height - 1)
    traps = {tuple(c) for c in traps}
    for c in traps | {goal}:
        if c not in free:
            raise ValueError(f"cell {c} is outside the grid or blocked")
    if goal in traps:
        raise ValueError("goal cannot be a trap")
    if start is None:
        start = [c for c in cells if c != goal and c not in traps]
    start = [tuple(c) for c in start]
    for c in start:
        if c not in free or c == goal or c in traps:
            raise ValueError(f"invalid start cell {c}")
    if not start:
        raise ValueError("no start cell")

    states = [f"x{x}y{y}h{'NESW'[h]}" for (x, y) in cells for h in range(4)]
    states.append("sink")
    six = {(c, h): i * 4 + h for i, c in enumerate(cells) for h in range(4)}
    sink = len(states) - 1
    actions = ["forward", "turn-left", "turn-right"]
    observations = [f"w{b:04b}" for b in range(16)] + ["goal", "trap", "sink"]
    S = len(states)
    T = np.zeros((S, 3, S))
    R = np.zeros((S, 3))
    obs = np.zeros(S, dtype=np.int64)

    def wall_bits(c, h):
        bits = 0
        for k in range(4):  # front, right, back, left
            dx, dy = _STEP[(h + k) % 4]
            if (c[0] + dx, c[1] + dy) not in free:
                bits |= 8 >> k
        return bits

    for c in cells:
        for h in range(4):
            s = six[(c, h)]
            if c == goal:
                obs[s] = 16
                R[s, :] = goal_reward
                T[s, :, sink] = 1.0
                continue
            if c in traps:
                obs[s] = 17
                if trap_kind == "damage":
                    T[s, :, sink] = 1.0
                    continue
            else:
                obs[s] = wall_bits(c, h)
            T[s, 1, six[(c, (h - 1) % 4)]] = 1.0
            T[s, 2, six[(c, (h + 1) % 4)]] = 1.0
            dx, dy = _STEP[h]
            nxt = (c[0] + dx, c[1] + dy)
            if nxt not in free:
                T[s, 0, s] = 1.0
                continue
            T[s, 0, s] += slip
            if nxt in traps and trap_kind == "spin":
                for h2 in range(4):
                    T[s, 0, six[(nxt, h2)]] += (1.0 - slip) / 4
            else:
                T[s, 0, six[(nxt, h)]] += 1.0 - slip
    obs[sink] = 18
    T[sink, :, sink] = 1.0
    lam = np.zeros(S)
    for c in start:
        for h in range(4):
            lam[six[(c, h)]] = 1.0
    lam /= lam.sum()
    return PomdpModel(states, actions, observations, T, R, obs, lam, discount,
                      name=f"hallway{width}x{height}")


def rock_positions(grid_n: int, rocks_k: int, seed: int = 0):
    """Deterministic rock placement avoiding the start cell."""
    start = (0, grid_n // 2)
    cells = [(x, y) for y in range(grid_n) for x in range(grid_n) if (x, y) != start]
    if rocks_k > len(cells):
        raise ValueError("too many rocks for the grid")
    pick = np.random.default_rng(seed).choice(len(cells), size=rocks_k, replace=False)
    return [cells[i] for i in sorted(pick)]


def gen_rocksample(
    grid_n: int,
    rocks_k: int,
    sensor_accuracy: float = 0.8,
    discount: float = 0.95,
    *,
    rocks=None,
    seed: int = 0,
    rock_reward: float = 10.0,
    exit_reward: float = 10.0,
) -> PomdpModel:
    """RockSample(n, k) with a single noisy ``check`` action.

    ``check`` reads the rock nearest to the robot (Manhattan distance, ties
    to the lower rock index); the reading is right with probability
    ``sensor_accuracy``. ``sample`` on a rock pays ``+rock_reward`` if it is
    good and ``-rock_reward`` if bad, and leaves it bad; elsewhere it does
    nothing. ``exit`` in the east column pays ``exit_reward`` and ends the
    episode. The robot position is observed together with the reading.

    The sensor noise is folded into the state space, so the emitted model has
    ``n*n * 2**k * 3 + 1`` states for accuracy below one.
    """
    if grid_n < 1 or rocks_k < 1:
        raise ValueError("grid_n and rocks_k must be at least 1")
    if not 0.5 < sensor_accuracy <= 1.0:
        raise ValueError("sensor_accuracy must be in (0.5, 1]")
    rocks = [tuple(r) for r in rocks] if rocks is not None else rock_positions(grid_n, rocks_k, seed)
    if len(rocks) != rocks_k or len(set(rocks)) != rocks_k:
        raise ValueError("rocks must list rocks_k distinct cells")
    n, k = grid_n, rocks_k
    rock_at = {c: j for j, c in enumerate(rocks)}

    def nearest(x, y):
        return min(range(k), key=lambda j: (abs(rocks[j][0] - x) + abs(rocks[j][1] - y), j))

    # raw state: (x, y, config, sensed) plus terminal; sensed=1 right after a check
    raw = [(x, y, c, f) for x in range(n) for y in range(n) for c in range(2 ** k) for f in (0, 1)]
    index = {r: i for i, r in enumerate(raw)}
    term = len(raw)
    S = term + 1
    actions = ["north", "south", "east", "west", "sample", "check", "exit"]
    observations = [f"x{x}y{y}{r}" for x in range(n) for y in range(n) for r in ("n", "g", "b")] + ["end"]
    oix = {o: i for i, o in enumerate(observations)}
    T = np.zeros((S, 7, S))
    R = np.zeros((S, 7))
    O = np.zeros((S, len(observations)))
    moves = {0: (0, 1), 1: (0, -1), 2: (1, 0), 3: (-1, 0)}
    for (x, y, c, f), s in index.items():
        for a, (dx, dy) in moves.items():
            nx, ny = x + dx, y + dy
            if not (0 <= nx < n and 0 <= ny < n):
                nx, ny = x, y
            T[s, a, index[(nx, ny, c, 0)]] = 1.0
        j = rock_at.get((x, y))
        if j is not None:
            good = (c >> j) & 1
            R[s, 4] = rock_reward if good else -rock_reward
            T[s, 4, index[(x, y, c & ~(1 << j), 0)]] = 1.0
        else:
            T[s, 4, index[(x, y, c, 0)]] = 1.0
        T[s, 5, index[(x, y, c, 1)]] = 1.0
        if x == n - 1:
            R[s, 6] = exit_reward
            T[s, 6, term] = 1.0
        else:
            T[s, 6, index[(x, y, c, 0)]] = 1.0
        if f == 0:
            O[s, oix[f"x{x}y{y}n"]] = 1.0
        else:
            good = (c >> nearest(x, y)) & 1
            O[s, oix[f"x{x}y{y}g"]] += sensor_accuracy if good else 1.0 - sensor_accuracy
            O[s, oix[f"x{x}y{y}b"]] += 1.0 - sensor_accuracy if good else sensor_accuracy
    T[term, :, term] = 1.0
    O[term, oix["end"]] = 1.0
    lam = np.zeros(S)
    for c in range(2 ** k):
        lam[index[(0, n // 2, c, 0)]] = 1.0 / 2 ** k
    names = [f"x{x}y{y}c{c:0{k}b}{'s' if f else ''}" for (x, y, c, f) in raw] + ["terminal"]
    return determinize_observations(
        RawPomdpModel(names, actions, observations, T, R, O, lam, discount, name=f"rocksample{n}_{k}")
    )


def random_model(
    n_states: int,
    n_actions: int = 2,
    n_obs: int = 3,
    *,
    seed: int = 0,
    reward_low: float = -5.0,
    reward_high: float = 10.0,
    observable: bool = True,
    max_branching: int = 3,
    discount: float = 0.8,
) -> PomdpModel:
    """Random model with integer rewards and short-decimal probabilities.

    With ``observable=True`` rewards depend only on (observation, action).
    The initial belief is spread over the states of one observation class.
    """
    rng = np.random.default_rng(seed)
    n_obs = min(n_obs, n_states)
    obs = np.concatenate([np.arange(n_obs), rng.integers(0, n_obs, n_states - n_obs)])
    rng.shuffle(obs)
    T = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            k = int(rng.integers(1, max_branching + 1))
            succ = rng.choice(n_states, size=k, replace=False)
            w = rng.integers(1, 10, size=k).astype(float)
            T[s, a, succ] = w / w.sum()
    if observable:
        per_obs = rng.integers(int(reward_low), int(reward_high) + 1, size=(n_obs, n_actions))
        R = per_obs[obs].astype(float)
    else:
        R = rng.integers(int(reward_low), int(reward_high) + 1, size=(n_states, n_actions)).astype(float)
    cls = obs[0]
    members = np.flatnonzero(obs == cls)
    lam = np.zeros(n_states)
    lam[members] = 1.0 / len(members)
    return PomdpModel(
        [f"s{i}" for i in range(n_states)],
        [f"a{i}" for i in range(n_actions)],
        [f"o{i}" for i in range(n_obs)],
        T, R, obs, lam, discount, name=f"random{seed}",
    )
