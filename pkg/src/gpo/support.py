"""Offline worst-case analysis on belief supports.

Belief supports evolve by pure set algebra, independently of the
probabilities: after playing ``a`` from support ``B`` and seeing ``o`` the
support becomes ``o ∩ ⋃_{s∈B} Supp(δ(s, a))``. The reachable supports with
this successor map form a turn-based game against an adversary who picks the
observation; its discounted max-min value is the best payoff that can be
guaranteed from a support (the future value).

Supports are stored as Python-int bitsets over state indices.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .exceptions import BoundUnavailableError, RewardAmbiguityError, UnknownSupportError
from .model import PomdpModel


def to_mask(states) -> int:
    m = 0
    for s in states:
        m |= 1 << int(s)
    return m


def from_mask(mask: int) -> frozenset:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return frozenset(out)


class ObservabilityReport(NamedTuple):
    observable: bool
    counterexample: Optional[tuple] = None  # (s, s2, a)


def check_observable_rewards(model: PomdpModel) -> ObservabilityReport:
    """Rewards are observable when states sharing an observation agree on every r(s, a)."""
    first: dict = {}
    for s, z in enumerate(model.obs_map.tolist()):
        rep = first.setdefault(z, s)
        if rep == s:
            continue
        diff = np.flatnonzero(model.reward[rep] != model.reward[s])
        if len(diff):
            return ObservabilityReport(False, (rep, s, int(diff[0])))
    return ObservabilityReport(True, None)


@dataclass(eq=False)
class SupportGame:
    """Reachable belief supports and the successor map between them.

    ``delta[(b, a)]`` lists ``(observation, successor id)`` pairs sorted by
    observation; ``support_reward[b, a]`` is the reward of playing ``a`` in
    support ``b`` (the minimum over members when rewards are pessimistic).
    """

    model: PomdpModel
    masks: list
    delta: dict
    support_reward: np.ndarray
    initial: tuple
    pessimistic: bool = False
    index: dict = field(init=False)

    def __post_init__(self):
        self.index = {m: i for i, m in enumerate(self.masks)}

    @property
    def n_supports(self) -> int:
        return len(self.masks)

    def members(self, b: int) -> frozenset:
        return from_mask(self.masks[b])

    @property
    def supports(self) -> list:
        return [from_mask(m) for m in self.masks]

    def support_id(self, states) -> int:
        """Id of a support given as state indices or names."""
        mask = to_mask(self.model.state_index(s) for s in states)
        try:
            return self.index[mask]
        except KeyError:
            raise UnknownSupportError(
                f"support {{{', '.join(self.model.states[s] for s in sorted(from_mask(mask)))}}} "
                "was never enumerated"
            ) from None

    def observation(self, b: int) -> int:
        low = self.masks[b] & -self.masks[b]
        return int(self.model.obs_map[low.bit_length() - 1])

    def successor(self, b: int, a: int, o: int):
        """Successor id, or ``None`` when the observation is impossible."""
        for z, b2 in self.delta[(b, a)]:
            if z == o:
                return b2
        return None

    def initial_for(self, o: int):
        for b in self.initial:
            if self.observation(b) == o:
                return b
        return None

    @property
    def absorbing(self) -> np.ndarray:
        """Supports closed under every action with zero reward throughout."""
        return self._cached("_absorbing", self._compute_absorbing)

    @property
    def action_class(self) -> np.ndarray:
        """``action_class[b, a]``: lowest action behaving exactly like ``a`` on ``b``."""
        return self._cached("_action_class", self._compute_action_class)

    def _cached(self, name, fn):
        if not hasattr(self, name):
            setattr(self, name, fn())
        return getattr(self, name)

    def _compute_absorbing(self):
        m = self.model
        succ = _successor_masks(m)
        out = np.zeros(self.n_supports, dtype=bool)
        for b, mask in enumerate(self.masks):
            members = from_mask(mask)
            out[b] = all(
                m.reward[s, a] == 0.0 and not (succ[s][a] & ~mask)
                for s in members for a in range(m.n_actions)
            )
        return out

    def _compute_action_class(self):
        m = self.model
        A = m.n_actions
        out = np.tile(np.arange(A), (self.n_supports, 1))
        for b, mask in enumerate(self.masks):
            members = sorted(from_mask(mask))
            T = m.transition[members]
            R = m.reward[members]
            for a in range(A):
                for a0 in range(a):
                    if out[b, a0] == a0 and np.array_equal(T[:, a], T[:, a0]) and np.array_equal(R[:, a], R[:, a0]):
                        out[b, a] = a0
                        break
        return out

    def edges(self):
        """CSR arrays ``(ptr, obs, succ)`` indexed by ``b * n_actions + a``."""
        if not hasattr(self, "_edges"):
            A = self.model.n_actions
            ptr = np.zeros(self.n_supports * A + 1, dtype=np.int64)
            obs, succ = [], []
            for b in range(self.n_supports):
                for a in range(A):
                    row = self.delta[(b, a)]
                    ptr[b * A + a + 1] = ptr[b * A + a] + len(row)
                    obs.extend(z for z, _ in row)
                    succ.extend(b2 for _, b2 in row)
            self._edges = (ptr, np.asarray(obs, dtype=np.int64), np.asarray(succ, dtype=np.int64))
        return self._edges


def _successor_masks(model: PomdpModel):
    return [
        [to_mask(model.successors(s, a)) for a in range(model.n_actions)]
        for s in range(model.n_states)
    ]


def successor_mask(model, succ, mask: int, a: int) -> dict:
    """Split ``⋃_{s∈B} Supp(δ(s, a))`` by observation: ``{o: mask}``."""
    union = 0
    m = mask
    while m:
        low = m & -m
        union |= succ[low.bit_length() - 1][a]
        m ^= low
    return split_by_observation(model, union)


def split_by_observation(model, union: int) -> dict:
    groups: dict = {}
    obs_map = model.obs_map
    while union:
        low = union & -union
        s = low.bit_length() - 1
        z = int(obs_map[s])
        groups[z] = groups.get(z, 0) | low
        union ^= low
    return groups


def enumerate_valid_supports(model: PomdpModel, pessimistic: bool = False) -> SupportGame:
    """Breadth-first closure of the initial support(s) under the successor map.

    An initial belief spread over several observation classes is split into
    one root per class, since the first observation reveals the class.

    Rewards must be observable unless ``pessimistic`` is set, in which case a
    support earns the minimum reward of its members (a safe lower bound).
    """
    if not pessimistic:
        rep = check_observable_rewards(model)
        if not rep.observable:
            s, s2, a = rep.counterexample
            raise RewardAmbiguityError(
                f"rewards are not observable: r({model.states[s]}, {model.actions[a]}) != "
                f"r({model.states[s2]}, {model.actions[a]}) although both emit "
                f"{model.observations[model.obs_map[s]]!r}"
            )
    succ = _successor_masks(model)
    A = model.n_actions
    masks: list = []
    index: dict = {}
    queue: deque = deque()

    def visit(mask):
        b = index.get(mask)
        if b is None:
            b = index[mask] = len(masks)
            masks.append(mask)
            queue.append(b)
        return b

    roots = split_by_observation(model, to_mask(model.initial_support))
    initial = tuple(visit(roots[z]) for z in sorted(roots))
    delta: dict = {}
    while queue:
        b = queue.popleft()
        for a in range(A):
            groups = successor_mask(model, succ, masks[b], a)
            delta[(b, a)] = tuple((z, visit(groups[z])) for z in sorted(groups))

    R = np.empty((len(masks), A))
    for b, mask in enumerate(masks):
        members = sorted(from_mask(mask))
        R[b] = model.reward[members].min(axis=0)
    return SupportGame(model, masks, delta, R, initial, pessimistic)


def successor_support(game: SupportGame, B, a, o):
    """Δ(B, a, o) as a frozenset of states, or ``None`` if the observation is impossible.

    ``B`` may be a support id or a collection of state indices/names.
    """
    m = game.model
    b = B if isinstance(B, (int, np.integer)) else game.support_id(B)
    b2 = game.successor(int(b), m.action_index(a), m.obs_index(o))
    return None if b2 is None else game.members(b2)


@dataclass(eq=False)
class FutureValueTable:
    """Per-support lower bounds on the future value.

    ``exact`` is set when value iteration reached a floating-point fixpoint;
    otherwise the values were corrected downwards so they stay below it.
    """

    game: SupportGame
    values: np.ndarray
    residual: float
    iterations: int
    exact: bool
    best_actions: tuple = ()
    discount: float = 0.0

    def __getitem__(self, b):
        return float(self.values[b])

    def by_name(self) -> dict:
        m = self.game.model
        return {
            frozenset(m.states[s] for s in self.game.members(b)): float(v)
            for b, v in enumerate(self.values)
        }


def bellman_sweep(game: SupportGame, f: np.ndarray, discount: float):
    """One max-min backup; returns ``(new_values, q)`` with ``q[b, a]`` the inner min."""
    ptr, _, succ = game.edges()
    A = game.model.n_actions
    rhat = game.support_reward.reshape(-1)
    rows = np.repeat(np.arange(len(ptr) - 1), np.diff(ptr))
    vals = rhat[rows] + discount * f[succ]
    q = np.minimum.reduceat(vals, ptr[:-1]).reshape(-1, A)
    return q.max(axis=1), q


def value_iteration(
    game: SupportGame,
    discount: Optional[float] = None,
    *,
    max_iters: Optional[int] = None,
    tol: float = 0.0,
    init: float = 0.0,
    fixpoint_cap: int = 1_000_000,
) -> FutureValueTable:
    """Game value iteration ``f_i(B) = max_a min_o r(B, a) + γ f_{i-1}(Δ(B, a, o))``.

    Stops at an exact floating-point fixpoint, after ``max_iters`` sweeps, or
    once the sup-norm change drops to ``tol``. On an early stop the values are
    lowered by ``δγ/(1-γ)`` (``δ`` the last change) so they never exceed the
    fixpoint; the correction is skipped when iterating upwards from zero with
    nonnegative rewards, where every iterate is already below the fixpoint.
    """
    gamma = game.model.discount if discount is None else float(discount)
    nB = game.n_supports
    ptr, _, succ = game.edges()
    A = game.model.n_actions
    rhat = game.support_reward.reshape(-1)
    rows = np.repeat(np.arange(len(ptr) - 1), np.diff(ptr))
    starts = ptr[:-1]

    f = np.full(nB, float(init))
    cap = fixpoint_cap if max_iters is None else max_iters
    residual = math.inf
    it = 0
    q = None
    stalled = 0
    while it < cap:
        q = np.minimum.reduceat(rhat[rows] + gamma * f[succ], starts).reshape(-1, A)
        g = q.max(axis=1)
        it += 1
        new_residual = float(np.max(np.abs(g - f))) if nB else 0.0
        f = g
        if new_residual == 0.0:
            residual = 0.0
            break
        # non-monotone runs can cycle within a few ulps of the fixpoint
        scale = float(np.max(np.abs(f))) + 1.0
        stalled = stalled + 1 if new_residual >= residual and new_residual < 64 * np.finfo(float).eps * scale else 0
        residual = new_residual
        if residual <= tol or stalled >= 8:
            break
    exact = residual == 0.0
    values = f.copy()
    monotone = init == 0.0 and np.all(game.support_reward >= 0)
    if not exact and not monotone and nB:
        corr = residual * gamma / (1.0 - gamma) if gamma > 0 else 0.0
        # rounding guard on top of the contraction bound; float sweeps drift
        # from the exact operator by about eps * scale / (1 - γ)
        guard = 8 * np.finfo(float).eps * (float(np.max(np.abs(values))) + corr) / (1.0 - gamma)
        values = values - (corr + guard)
    if nB:
        values = close_under_guard(game, values, gamma)
    if q is None:
        q = np.zeros((nB, A))
    best = tuple(tuple(np.flatnonzero(q[b] == q[b].max()).tolist()) for b in range(nB))
    return FutureValueTable(game, values, residual, it, exact, best, gamma)


def close_under_guard(game: SupportGame, values: np.ndarray, discount: float,
                      max_rounds: int = 100_000) -> np.ndarray:
    """Lower ``values`` until the guard's float arithmetic is closed on them.

    For every support some action must satisfy
    ``fl((Ψ(B) - r)/γ) <= min_o Ψ(B')`` exactly as the guard evaluates it.
    At a float fixpoint this can fail by an ulp, which would leave a guard
    sitting exactly on the threshold without an allowed action. Entries only
    ever decrease, normally by a few ulps.
    """
    ptr, _, succ = game.edges()
    A = game.model.n_actions
    rhat = np.asarray(game.support_reward, dtype=np.float64).reshape(-1)
    v = np.asarray(values, dtype=np.float64).copy()
    for _ in range(max_rounds):
        m = np.minimum.reduceat(v[succ], ptr[:-1])
        if discount == 0.0:
            x = rhat.copy()
        else:
            x = rhat + discount * m
            bad = (x - rhat) / discount > m
            while bad.any():
                x[bad] = np.nextafter(x[bad], -np.inf)
                bad = (x - rhat) / discount > m
        new = np.minimum(v, x.reshape(-1, A).max(axis=1))
        if np.array_equal(new, v):
            return v
        v = new
    raise RuntimeError("table could not be closed under the guard update")


def fixpoint_residual(table: FutureValueTable) -> float:
    """``max_B |f(B) - (T f)(B)|`` for the stored values."""
    g, _ = bellman_sweep(table.game, table.values, table.discount)
    return float(np.max(np.abs(g - table.values))) if len(g) else 0.0


def fval_lookup(table: FutureValueTable, B) -> float:
    """Value of a support given as an id or as state indices/names."""
    if isinstance(B, (int, np.integer)):
        if not 0 <= B < len(table.values):
            raise UnknownSupportError(f"support id {B} out of range")
        return float(table.values[B])
    return float(table.values[table.game.support_id(B)])


def discount_fraction(discount) -> Fraction:
    if isinstance(discount, Fraction):
        return discount
    if isinstance(discount, str):
        return Fraction(discount)
    x = float(discount)
    if not math.isfinite(x):
        raise BoundUnavailableError("discount is not finite")
    frac = Fraction(repr(x))
    if frac.denominator > 10**12:
        raise BoundUnavailableError(f"no short rational form known for discount {x!r}")
    return frac


def iteration_bound(model: PomdpModel, discount=None) -> int:
    """Worst-case number of sweeps before value iteration reaches its fixpoint.

    ``ceil(3 + log2(max|r|) + (|S|+3)^2 / 2 * log2(den(γ)) / (1-γ))`` where
    ``den(γ)`` is the denominator of γ in lowest terms. ``discount`` may be a
    :class:`fractions.Fraction` or decimal string; floats are read through
    their shortest decimal representation.
    """
    g = discount_fraction(model.discount if discount is None else discount)
    rmax = model.max_abs_reward
    if rmax == 0.0:
        return 1
    value = 3 + math.log2(rmax) + 0.5 * (model.n_states + 3) ** 2 * math.log2(g.denominator) / float(1 - g)
    return math.ceil(value)


CACHE_MAGIC = "# gpo-fval-cache v1"


def write_cache(path, table: FutureValueTable, model_digest: str) -> None:
    """Write ``support-bitset-hex<TAB>value`` lines behind a small header."""
    lines = [
        CACHE_MAGIC,
        f"# model {model_digest}",
        f"# discount {table.discount!r}",
        f"# residual {table.residual!r}",
        f"# iterations {table.iterations}",
        f"# exact {int(table.exact)}",
    ]
    for mask, v in zip(table.game.masks, table.values.tolist()):
        lines.append(f"{mask:x}\t{v!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_cache(path, game: SupportGame, model_digest: str, discount: float):
    """Load a cached table for ``game``; ``None`` when stale or mismatched."""
    p = Path(path)
    if not p.exists():
        return None
    header, values = {}, {}
    lines = p.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CACHE_MAGIC:
        return None
    for line in lines[1:]:
        if line.startswith("#"):
            key, _, val = line[2:].partition(" ")
            header[key] = val
        elif line.strip():
            hexmask, val = line.split("\t")
            values[int(hexmask, 16)] = float(val)
    if header.get("model") != model_digest or float(header.get("discount", "nan")) != discount:
        return None
    if set(values) != set(game.masks):
        return None
    vals = np.array([values[m] for m in game.masks])
    _, q = bellman_sweep(game, vals, discount)
    best = tuple(tuple(np.flatnonzero(q[b] == q[b].max()).tolist()) for b in range(game.n_supports))
    return FutureValueTable(
        game, vals, float(header["residual"]), int(header["iterations"]),
        header.get("exact") == "1", best, discount,
    )
