"""Online safety statistic: current belief support plus remaining requirement.

``rem`` is how much discounted payoff the future still has to deliver,
rescaled so that it is always expressed from the current step onward. An
action is allowed when, whatever observation comes next, the remaining
requirement after paying out its reward fits under the future value of the
successor support.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from .exceptions import GuardDesyncError
from .support import FutureValueTable, SupportGame


def next_rem(rem: float, reward: float, discount: float) -> float:
    """Remaining requirement after earning ``reward``: ``(rem - reward) / discount``."""
    if discount == 0.0:
        # nothing after this step counts
        return -math.inf if rem <= reward else math.inf
    return (rem - reward) / discount


@dataclass(frozen=True)
class GuardState:
    support: int  # support id in the game
    rem: float
    depth: int = 0

    def members(self, game: SupportGame) -> frozenset:
        return game.members(self.support)


def initial_guard(game: SupportGame, t: float, observation: Optional[int] = None) -> GuardState:
    """Guard for the empty history.

    When the initial belief spans several observation classes the first
    observation selects the root support and must be given.
    """
    if len(game.initial) == 1 and observation is None:
        return GuardState(game.initial[0], float(t), 0)
    if observation is None:
        raise ValueError("initial belief spans several observations; pass the first observation")
    b = game.initial_for(int(observation))
    if b is None:
        raise GuardDesyncError(f"observation {observation} impossible in the initial belief")
    return GuardState(b, float(t), 0)


def advance_guard(game: SupportGame, g: GuardState, a: int, o: int) -> GuardState:
    b2 = game.successor(g.support, int(a), int(o))
    if b2 is None:
        m = game.model
        raise GuardDesyncError(
            f"observation {m.observations[o]!r} impossible after {m.actions[a]!r} "
            f"from support {sorted(m.states[s] for s in game.members(g.support))}"
        )
    r = float(game.support_reward[g.support, a])
    return GuardState(b2, next_rem(g.rem, r, game.model.discount), g.depth + 1)


class GuardTables(NamedTuple):
    """Flat arrays describing the guard, as consumed by the search kernels.

    ``min_succ[b, a]`` is the smallest table value over the successors of
    ``(b, a)``; action ``a`` is allowed at ``(b, rem)`` iff
    ``next_rem(rem, reward[b, a]) <= min_succ[b, a]``.
    """

    reward: np.ndarray
    min_succ: np.ndarray
    psi: np.ndarray
    edge_ptr: np.ndarray
    edge_obs: np.ndarray
    edge_succ: np.ndarray
    absorbing: np.ndarray
    action_class: np.ndarray
    discount: float


def guard_tables(game: SupportGame, table: FutureValueTable) -> GuardTables:
    cached = getattr(table, "_guard_tables", None)
    if cached is not None:
        return cached
    ptr, obs, succ = game.edges()
    A = game.model.n_actions
    psi = np.asarray(table.values, dtype=np.float64)
    min_succ = np.minimum.reduceat(psi[succ], ptr[:-1]).reshape(-1, A) if len(succ) else np.zeros((0, A))
    out = GuardTables(
        np.ascontiguousarray(game.support_reward, dtype=np.float64),
        np.ascontiguousarray(min_succ),
        psi,
        ptr, obs, succ,
        np.ascontiguousarray(game.absorbing),
        np.ascontiguousarray(game.action_class, dtype=np.int64),
        float(game.model.discount),
    )
    table._guard_tables = out
    return out


def is_allowed(tables: GuardTables, g: GuardState, a: int) -> bool:
    b = g.support
    return next_rem(g.rem, tables.reward[b, a], tables.discount) <= tables.min_succ[b, a]


def allowed_actions(game: SupportGame, table: FutureValueTable, g: GuardState) -> frozenset:
    """Actions whose every possible successor keeps ``rem`` under the table value.

    This is the allowed-action condition ``r(B, a) + γ·Ψ(Δ(B, a, o)) >= rem``
    for all possible ``o``, evaluated as ``(rem - r)/γ <= Ψ(Δ(B, a, o))`` so
    that the very same rounded ``rem`` is carried into the successor guard.
    May be empty; callers treat that as an infeasibility fault.
    """
    tables = guard_tables(game, table)
    return frozenset(a for a in range(game.model.n_actions) if is_allowed(tables, g, a))


def check_feasible(table: FutureValueTable, t: float) -> bool:
    """True iff every initial support can guarantee at least ``t``."""
    return all(table.values[b] >= t for b in table.game.initial)


def safety_holds(table: FutureValueTable, g: GuardState) -> bool:
    return g.rem <= table.values[g.support]


def with_rem(g: GuardState, rem: float) -> GuardState:
    return replace(g, rem=float(rem))
