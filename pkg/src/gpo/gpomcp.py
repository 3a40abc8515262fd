"""G-POMCP: UCT search over histories where every choice is a guard-allowed action.

Each tree node carries the belief support and the remaining requirement of
its history. Those two numbers decide which actions may be tried; particles
only steer the sampling of states and never influence what is allowed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .exceptions import GuardDesyncError, InfeasibilityFault
from .guard import GuardState, advance_guard, guard_tables, initial_guard, is_allowed
from .model import PomdpModel
from .support import FutureValueTable, SupportGame

DEFAULT_PARTICLES = 1024


def default_ucb(model: PomdpModel) -> float:
    """Exploration constant ``max|r| / (1 - γ)``: the payoff scale."""
    g = model.discount
    return model.max_abs_reward / (1.0 - g) if g < 1 else model.max_abs_reward


def default_depth(model: PomdpModel, precision: float = 1e-3) -> int:
    """Smallest ``d`` with ``γ^d·max|r|/(1-γ) < precision·payoff range``."""
    g = model.discount
    rmax = model.max_abs_reward
    span = (float(model.reward.max()) - float(model.reward.min())) / (1.0 - g)
    if rmax == 0.0 or span == 0.0 or g == 0.0:
        return 1
    tail = rmax / (1.0 - g)
    d = 0
    while tail >= precision * span:
        tail *= g
        d += 1
    return max(d, 1)


@dataclass
class PlannerConfig:
    """Knobs of the search.

    :param simulations: simulations per decision.
    :param ucb_constant: exploration constant; ``None`` picks :func:`default_ucb`.
    :param depth: search and rollout cutoff; ``None`` derives it from ``depth_precision``.
    :param depth_precision: relative truncation error used for the default depth.
    :param particles: size of the root particle set.
    :param seed: default seed for callers that do not pass an rng.
    :param epsilon: optimality slack aimed at; informational only, the
        guarantee never depends on it.
    """

    simulations: int = 1024
    ucb_constant: Optional[float] = None
    depth: Optional[int] = None
    depth_precision: float = 1e-3
    particles: int = DEFAULT_PARTICLES
    seed: int = 0
    epsilon: float = 0.0

    def __post_init__(self):
        if self.simulations < 1:
            raise ValueError("simulations must be positive")
        if self.particles < 1:
            raise ValueError("particles must be positive")
        if self.ucb_constant is not None and self.ucb_constant < 0:
            raise ValueError("ucb_constant must be nonnegative")
        if self.depth is not None and self.depth < 1:
            raise ValueError("depth must be positive")

    def resolved(self, model: PomdpModel) -> "PlannerConfig":
        out = PlannerConfig(**self.__dict__)
        if out.ucb_constant is None:
            out.ucb_constant = default_ucb(model)
        if out.depth is None:
            out.depth = default_depth(model, self.depth_precision)
        return out


class SearchTree:
    """Array-backed search tree; node 0 is always the current root."""

    def __init__(self, model: PomdpModel, game: SupportGame, table: FutureValueTable,
                 cfg: PlannerConfig, guard: GuardState, particles: np.ndarray):
        self.model = model
        self.game = game
        self.table = table
        self.cfg = cfg.resolved(model)
        self.tables = guard_tables(game, table)
        self.guard = guard
        self.particles = np.asarray(particles, dtype=np.int64)
        self._alloc(64)
        self.node_support[0] = guard.support
        self.node_rem[0] = guard.rem
        self.n_nodes = 1

    def _alloc(self, cap):
        A = self.model.n_actions
        self.node_support = np.empty(cap, np.int64)
        self.node_rem = np.empty(cap, np.float64)
        self.node_visits = np.zeros(cap, np.int64)
        self.node_obs = np.full(cap, -1, np.int64)
        self.node_next = np.full(cap, -1, np.int64)
        self.act_visits = np.zeros((cap, A), np.int64)
        self.act_value = np.zeros((cap, A), np.float64)
        self.child_head = np.full((cap, A), -1, np.int64)

    def _arrays(self):
        return (self.node_support, self.node_rem, self.node_visits, self.node_obs,
                self.node_next, self.act_visits, self.act_value, self.child_head)

    def reserve(self, extra: int) -> None:
        need = self.n_nodes + extra
        if need <= self.node_support.shape[0]:
            return
        cap = max(need, 2 * self.node_support.shape[0])
        out = K.compact(0, self.n_nodes, self.model.n_actions, *self._arrays(), cap)
        _, *arrays = out
        (self.node_support, self.node_rem, self.node_visits, self.node_obs,
         self.node_next, self.act_visits, self.act_value, self.child_head) = arrays

    @property
    def root(self) -> "SearchNode":
        return SearchNode(self, 0, self.guard.depth)

    def node(self, i: int) -> "SearchNode":
        return SearchNode(self, i, None)

    def nodes(self):
        """All nodes in breadth-first order from the root."""
        todo = [self.root]
        while todo:
            n = todo.pop(0)
            yield n
            todo.extend(n.children.values())

    def _model_arrays(self):
        m = self.model
        r = m.rows
        t = self.tables
        return (r.ptr, r.state, r.cum, np.ascontiguousarray(m.reward), np.asarray(m.obs_map, np.int64),
                t.reward, t.min_succ, t.edge_ptr, t.edge_obs, t.edge_succ, t.absorbing, t.discount)


@dataclass
class SearchNode:
    """Read-only view of one tree node."""

    tree: SearchTree = field(repr=False)
    index: int
    depth: Optional[int] = None

    @property
    def visit_count(self) -> int:
        return int(self.tree.node_visits[self.index])

    @property
    def value_sum(self) -> float:
        return float(self.tree.act_value[self.index].sum())

    @property
    def action_visits(self) -> np.ndarray:
        return self.tree.act_visits[self.index].copy()

    def action_values(self) -> np.ndarray:
        """Mean return per action; ``nan`` for untried actions."""
        n = self.tree.act_visits[self.index]
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, self.tree.act_value[self.index] / np.maximum(n, 1), np.nan)

    @property
    def value(self) -> float:
        n = self.visit_count
        return self.value_sum / n if n else math.nan

    @property
    def guard(self) -> GuardState:
        t = self.tree
        return GuardState(int(t.node_support[self.index]), float(t.node_rem[self.index]),
                          -1 if self.depth is None else self.depth)

    @property
    def particles(self) -> Optional[np.ndarray]:
        return self.tree.particles if self.index == 0 else None

    @property
    def children(self) -> dict:
        t = self.tree
        out = {}
        d = None if self.depth is None else self.depth + 1
        for a in range(t.model.n_actions):
            c = int(t.child_head[self.index, a])
            while c >= 0:
                out[(a, int(t.node_obs[c]))] = SearchNode(t, c, d)
                c = int(t.node_next[c])
        return out


def initial_particles(model: PomdpModel, n: int, rng: np.random.Generator,
                      observation: Optional[int] = None) -> np.ndarray:
    """``n`` states drawn from the initial belief, conditioned on an observation if given."""
    lam = np.asarray(model.initial_belief, dtype=np.float64)
    if observation is not None:
        lam = np.where(np.asarray(model.obs_map) == observation, lam, 0.0)
    return rng.choice(model.n_states, size=n, p=lam / lam.sum()).astype(np.int64)


def new_tree(model: PomdpModel, game: SupportGame, table: FutureValueTable, t: float,
             cfg: PlannerConfig, rng: np.random.Generator,
             observation: Optional[int] = None) -> SearchTree:
    """Fresh tree for the empty history with threshold ``t``."""
    g = initial_guard(game, t, observation)
    obs = observation if len(game.initial) > 1 else None
    return SearchTree(model, game, table, cfg, g, initial_particles(model, cfg.particles, rng, obs))


def allowed_at_root(tree: SearchTree) -> list:
    return [a for a in range(tree.model.n_actions) if is_allowed(tree.tables, tree.guard, a)]


def _raise_status(status, tree):
    if status == K.NO_ALLOWED:
        raise InfeasibilityFault("reached a history with no allowed action")
    if status == K.DESYNC:
        raise GuardDesyncError("simulated observation impossible under the support map")
    if status == K.FULL:
        raise RuntimeError("search tree capacity exceeded")


def run_search(tree: SearchTree, n_sims: int, rng: np.random.Generator,
               particles: Optional[np.ndarray] = None) -> float:
    """Run ``n_sims`` simulations from the root; returns the last sampled return."""
    K.seed(int(rng.integers(2**31 - 1)))
    tree.reserve(n_sims + 1)
    cfg = tree.cfg
    p = tree.particles if particles is None else np.asarray(particles, dtype=np.int64)
    n, status, last = K.search(
        n_sims, 0, p, tree.n_nodes, cfg.depth, float(cfg.ucb_constant), tree.model.n_actions,
        *tree._model_arrays(), *tree._arrays(),
    )
    tree.n_nodes = int(n)
    _raise_status(status, tree)
    return float(last)


def simulate(tree: SearchTree, state: int, rng: np.random.Generator) -> float:
    """One simulation from the root starting in ``state``; returns its discounted return."""
    if state not in tree.game.members(tree.guard.support):
        raise ValueError(f"state {state} outside the root support")
    return run_search(tree, 1, rng, particles=np.array([state]))


def rollout(model: PomdpModel, game: SupportGame, table: FutureValueTable, state: int,
            guard: GuardState, depth: int, rng: np.random.Generator, max_depth: int):
    """Random allowed-action suffix from ``state``; returns ``(payoff, actions)``."""
    tables = guard_tables(game, table)
    r = model.rows
    log = np.empty(max(max_depth - depth, 0), np.int64)
    K.seed(int(rng.integers(2**31 - 1)))
    total, n, status = K.rollout(
        int(state), guard.support, float(guard.rem), int(depth), int(max_depth), model.n_actions,
        r.ptr, r.state, r.cum, np.ascontiguousarray(model.reward), np.asarray(model.obs_map, np.int64),
        tables.reward, tables.min_succ, tables.edge_ptr, tables.edge_obs, tables.edge_succ,
        tables.absorbing, tables.discount, log,
    )
    _raise_status(status, None)
    return float(total), [int(a) for a in log[:n]]


def best_action(tree: SearchTree) -> int:
    """Allowed root action with the highest mean return; untried ones rank last."""
    allowed = allowed_at_root(tree)
    if not allowed:
        raise InfeasibilityFault(
            f"no allowed action at support {sorted(tree.game.members(tree.guard.support))}, rem {tree.guard.rem}"
        )
    q = tree.root.action_values()
    best, best_q = allowed[0], -math.inf
    for a in allowed:
        v = q[a]
        if not math.isnan(v) and v > best_q:
            best, best_q = a, v
    return best


def plan_action(tree: SearchTree, rng: np.random.Generator) -> int:
    """Search from the root and return the allowed action to play.

    When every allowed action behaves identically on the root support there
    is nothing to decide and the search is skipped.
    """
    allowed = allowed_at_root(tree)
    if not allowed:
        raise InfeasibilityFault(
            f"no allowed action at support {sorted(tree.game.members(tree.guard.support))}, rem {tree.guard.rem}"
        )
    cls = tree.tables.action_class[tree.guard.support]
    if len({int(cls[a]) for a in allowed}) == 1:
        return allowed[0]
    run_search(tree, tree.cfg.simulations, rng)
    return best_action(tree)


def commit(tree: SearchTree, a: int, o: int, rng: np.random.Generator) -> SearchNode:
    """Make the ``(a, o)`` child the new root, keeping its subtree and refiltering particles."""
    g2 = advance_guard(tree.game, tree.guard, a, o)
    child = K.find_child(0, a, o, tree.child_head, tree.node_next, tree.node_obs)
    cap = max(64, tree.node_support.shape[0])
    if child >= 0:
        out = K.compact(child, tree.n_nodes, tree.model.n_actions, *tree._arrays(), cap)
        n, *arrays = out
        (tree.node_support, tree.node_rem, tree.node_visits, tree.node_obs,
         tree.node_next, tree.act_visits, tree.act_value, tree.child_head) = arrays
        tree.n_nodes = int(n)
    else:
        tree._alloc(cap)
        tree.node_support[0] = g2.support
        tree.node_rem[0] = g2.rem
        tree.n_nodes = 1
    tree.guard = g2
    tree.particles = refresh_particles(tree, a, o, rng)
    return tree.root


def refresh_particles(tree: SearchTree, a: int, o: int, rng: np.random.Generator) -> np.ndarray:
    """Rejection-filter the root particles through ``(a, o)``.

    Falls back to a uniform draw over the new support when no particle
    survives, which cannot affect safety.
    """
    m = tree.model
    n = tree.cfg.particles
    members = sorted(tree.game.members(tree.guard.support))
    member = np.zeros(m.n_states, dtype=np.bool_)
    member[members] = True
    r = m.rows
    K.seed(int(rng.integers(2**31 - 1)))
    kept = K.filter_particles(tree.particles, int(a), int(o), tree.guard.support, n, 20 * n,
                              m.n_actions, r.ptr, r.state, r.cum, np.asarray(m.obs_map, np.int64), member)
    if len(kept) == 0:
        return rng.choice(np.asarray(members, dtype=np.int64), size=n)
    if len(kept) < n:
        kept = np.concatenate([kept, rng.choice(kept, size=n - len(kept))])
    return kept
