"""Exhaustive ground truth for tiny models.

Nothing here touches the support game or the search code: supports,
successors and worst cases are recomputed straight from the transition
matrix so the results can be used to check those modules.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np

from .exceptions import EnumerationBudgetExceeded, PolicyIncompleteError
from .guard import GuardState, advance_guard, allowed_actions, initial_guard
from .model import PomdpModel
from .support import FutureValueTable

MAX_STATES = 10
MAX_DEPTH = 8
DEFAULT_BUDGET = 10**6


# -- policy trees ------------------------------------------------------------

@dataclass(frozen=True)
class Repeat:
    """Leaf: play ``action`` forever."""

    action: int


@dataclass(frozen=True)
class Stationary:
    """Leaf: from here on play ``rule[observation]`` at every step."""

    rule: tuple
    name: str = "stationary"

    def __post_init__(self):
        object.__setattr__(self, "rule", tuple(int(a) for a in self.rule))


@dataclass(frozen=True)
class Decision:
    """Play ``action``, then continue with ``children[o]`` (or ``default``)."""

    action: int
    children: Mapping = field(default_factory=dict)
    default: Optional["PolicyTree"] = None

    def __post_init__(self):
        object.__setattr__(self, "children", dict(self.children))

    def __hash__(self):
        return hash((self.action, tuple(sorted(self.children.items(), key=lambda kv: kv[0])), self.default))

    def next(self, o: int):
        return self.children.get(o, self.default)


PolicyTree = Union[Decision, Repeat, Stationary]


def leaf_rule(model: PomdpModel, leaf) -> np.ndarray:
    """Action per state of a memoryless leaf."""
    if isinstance(leaf, Repeat):
        return np.full(model.n_states, int(leaf.action))
    if len(leaf.rule) != model.n_observations:
        raise ValueError("stationary rule needs one action per observation")
    return np.asarray([leaf.rule[o] for o in model.obs_map])


def describe(model: PomdpModel, p, indent: int = 0) -> str:
    """Readable multi-line rendering of a policy tree."""
    pad = "  " * indent
    if isinstance(p, Repeat):
        return f"{pad}repeat {model.actions[p.action]}"
    if isinstance(p, Stationary):
        pairs = ", ".join(f"{model.observations[o]}->{model.actions[a]}" for o, a in enumerate(p.rule))
        return f"{pad}{p.name} [{pairs}]"
    lines = [f"{pad}{model.actions[p.action]}"]
    for o in sorted(p.children):
        lines.append(f"{pad}  on {model.observations[o]}:")
        lines.append(describe(model, p.children[o], indent + 2))
    if p.default is not None:
        lines.append(f"{pad}  otherwise:")
        lines.append(describe(model, p.default, indent + 2))
    return "\n".join(lines)


def actions_along(p, observations) -> list:
    """Actions played when the given observations arrive in turn."""
    out = []
    last = None
    for o in list(observations) + [None]:
        if isinstance(p, Decision):
            out.append(p.action)
            if o is None:
                break
            p = p.next(o)
            last = o
            if p is None:
                break
        else:
            if isinstance(p, Repeat):
                out.append(p.action)
            else:
                # a stationary rule reacts to the observation that led here
                out.append(None if last is None else int(p.rule[last]))
            break
    return out


# -- evaluation ----------------------------------------------------------------

def _check_size(model):
    if model.n_states > MAX_STATES:
        raise EnumerationBudgetExceeded(f"oracle limited to {MAX_STATES} states, model has {model.n_states}")


def leaf_expected(model: PomdpModel, rule: np.ndarray) -> np.ndarray:
    """Expected discounted payoff per start state of a memoryless policy (linear solve)."""
    S = model.n_states
    idx = np.arange(S)
    P = model.transition[idx, rule]
    r = model.reward[idx, rule]
    return np.linalg.solve(np.eye(S) - model.discount * P, r)


def leaf_worst(model: PomdpModel, rule: np.ndarray, max_iters: int = 100_000) -> np.ndarray:
    """Infimum of the payoff over every path of a memoryless policy, per start state.

    Iterates ``w(s) = r(s) + γ·min over successors w(s')`` to its fixpoint,
    which includes paths of probability zero such as failing forever.
    """
    S = model.n_states
    idx = np.arange(S)
    r = model.reward[idx, rule]
    succ = [np.flatnonzero(model.transition[s, rule[s]] > 0) for s in range(S)]
    w = np.zeros(S)
    for _ in range(max_iters):
        w2 = np.array([r[s] + model.discount * w[succ[s]].min() for s in range(S)])
        if np.array_equal(w2, w) or np.max(np.abs(w2 - w)) < 1e-14 * (1 + np.max(np.abs(w2))):
            return w2
        w = w2
    return w


@dataclass(frozen=True)
class PolicyValue:
    expected: float
    worst: float


def policy_eval(model: PomdpModel, policy, budget: int = DEFAULT_BUDGET) -> PolicyValue:
    """Exact ``(eVal, wVal)`` of a finite policy tree from the initial belief."""
    _check_size(model)
    g = model.discount
    count = [0]

    def tick():
        count[0] += 1
        if count[0] > budget:
            raise EnumerationBudgetExceeded(f"more than {budget} tree nodes visited")

    def expected(p, mu):
        tick()
        if not isinstance(p, Decision):
            return float(mu @ leaf_expected(model, leaf_rule(model, p)))
        a = p.action
        now = float(mu @ model.reward[:, a])
        nu = mu @ model.transition[:, a, :]
        later = 0.0
        for o in np.unique(model.obs_map[nu > 0]):
            part = np.where(model.obs_map == o, nu, 0.0)
            child = p.next(int(o))
            if child is None:
                raise PolicyIncompleteError(f"no branch for observation {model.observations[o]!r}")
            later += expected(child, part)
        return now + g * later

    memo = {}

    def worst(p, s):
        key = (id(p), s)
        if key in memo:
            return memo[key]
        tick()
        if not isinstance(p, Decision):
            v = float(leaf_worst(model, leaf_rule(model, p))[s])
        else:
            a = p.action
            best = math.inf
            for s2 in np.flatnonzero(model.transition[s, a] > 0):
                child = p.next(int(model.obs_map[s2]))
                if child is None:
                    raise PolicyIncompleteError(
                        f"no branch for observation {model.observations[model.obs_map[s2]]!r}"
                    )
                best = min(best, worst(child, int(s2)))
            v = float(model.reward[s, a]) + g * best
        memo[key] = v
        return v

    mu = np.asarray(model.initial_belief, dtype=float)
    e = expected(policy, mu)
    w = min(worst(policy, int(s)) for s in np.flatnonzero(mu > 0))
    return PolicyValue(e, w)


# -- supports recomputed from scratch -------------------------------------------

def _succ_masks(model: PomdpModel, mask: int, a: int) -> dict:
    out = {}
    for s in range(model.n_states):
        if mask >> s & 1:
            for s2 in np.flatnonzero(model.transition[s, a] > 0):
                o = int(model.obs_map[s2])
                out[o] = out.get(o, 0) | (1 << int(s2))
    return out


def _mask(states) -> int:
    m = 0
    for s in states:
        m |= 1 << int(s)
    return m


def _members(mask: int) -> list:
    return [s for s in range(mask.bit_length()) if mask >> s & 1]


def _min_reward(model, mask, a) -> float:
    return min(float(model.reward[s, a]) for s in _members(mask))


class WorstCaseBracket:
    """Finite-horizon worst-case game values bracketing the future value.

    ``lower(B, d)`` is what some strategy guarantees when the payoff beyond
    ``d`` steps is taken at its minimum; ``upper`` assumes the maximum. Both
    converge to the future value at rate ``γ^d``.
    """

    def __init__(self, model: PomdpModel):
        self.model = model
        g = model.discount
        self.lo_tail = float(model.reward.min()) / (1 - g)
        self.hi_tail = float(model.reward.max()) / (1 - g)
        self._succ: dict = {}  # mask -> [(min reward, successor masks)] per action
        self._layers = {False: [], True: []}  # depth-indexed {mask: value}

    def _reach(self, mask: int) -> None:
        if mask in self._succ:
            return
        todo = [mask]
        while todo:
            b = todo.pop()
            if b in self._succ:
                continue
            row = []
            for a in range(self.model.n_actions):
                succ = tuple(_succ_masks(self.model, b, a).values())
                row.append((_min_reward(self.model, b, a), succ))
                todo.extend(s for s in succ if s not in self._succ)
            self._succ[b] = row
        # new masks invalidate the layers computed so far
        self._layers = {False: [], True: []}

    def _value(self, mask: int, d: int, hi: bool) -> float:
        self._reach(mask)
        layers = self._layers[hi]
        if not layers:
            layers.append(dict.fromkeys(self._succ, self.hi_tail if hi else self.lo_tail))
        g = self.model.discount
        while len(layers) <= d:
            prev = layers[-1]
            layers.append({
                b: max(r + g * min(prev[s] for s in succ) for r, succ in row)
                for b, row in self._succ.items()
            })
        return layers[d][mask]

    def lower(self, states, d: int) -> float:
        return self._value(states if isinstance(states, int) else _mask(states), d, False)

    def upper(self, states, d: int) -> float:
        return self._value(states if isinstance(states, int) else _mask(states), d, True)

    def width(self, d: int) -> float:
        return self.model.discount ** d * (self.hi_tail - self.lo_tail)


def initial_masks(model: PomdpModel) -> list:
    by_obs = {}
    for s in np.flatnonzero(model.initial_belief > 0):
        o = int(model.obs_map[s])
        by_obs[o] = by_obs.get(o, 0) | (1 << int(s))
    return [by_obs[o] for o in sorted(by_obs)]


# -- gVal search -------------------------------------------------------------------

@dataclass
class GValResult:
    value: float  # expected value of the witness
    upper: float  # no fVal-allowed policy does better than this
    witness: object
    worst: float
    explored: int


def optimistic_values(model: PomdpModel, iters: int = 10_000) -> np.ndarray:
    """Fully observable optimum; bounds the expected value of any policy."""
    v = np.zeros(model.n_states)
    for _ in range(iters):
        v2 = (model.reward + model.discount * model.transition @ v).max(axis=1)
        if np.max(np.abs(v2 - v)) < 1e-13:
            v = v2
            break
        v = v2
    return v + 1e-12 * (1 + np.abs(v))


def gval_search(model: PomdpModel, table: FutureValueTable, t: float, depth: int = 6,
                budget: int = DEFAULT_BUDGET) -> GValResult:
    """Best expected value over policies that only ever play table-allowed actions.

    Runs a dynamic program over histories up to ``depth`` steps. A history
    can be closed off by a ``Repeat`` leaf when that leaf provably keeps the
    remaining requirement (giving the lower bound and its witness), while an
    optimistic fully observable leaf at the depth limit gives the upper bound.
    Allowed actions follow ``r̂ + γ·min_o Ψ(B') >= rem`` with ``Ψ`` read from
    ``table`` by support.
    """
    _check_size(model)
    if depth > MAX_DEPTH:
        raise EnumerationBudgetExceeded(f"depth limited to {MAX_DEPTH}")
    g = model.discount
    game = table.game
    psi = {}
    for b, m in enumerate(game.masks):
        psi[m] = float(table.values[b])
    opt = optimistic_values(model)
    repeat_exp = [leaf_expected(model, np.full(model.n_states, a)) for a in range(model.n_actions)]
    repeat_worst = [leaf_worst(model, np.full(model.n_states, a)) for a in range(model.n_actions)]
    count = [0]
    memo = {}

    def allowed(mask, rem):
        out = []
        for a in range(model.n_actions):
            succ = _succ_masks(model, mask, a)
            lhs = _min_reward(model, mask, a) + g * min(psi[b2] for b2 in succ.values())
            if lhs >= rem:
                out.append(a)
        return out

    def solve(belief, rem, d):
        """``(lower, upper, witness)`` for a normalized belief."""
        key = (belief.tobytes(), rem, d)
        if key in memo:
            return memo[key]
        count[0] += 1
        if count[0] > budget:
            raise EnumerationBudgetExceeded(f"more than {budget} histories")
        support = np.flatnonzero(belief > 0)
        mask = _mask(support)
        best_lo, best_p = -math.inf, None
        for a in range(model.n_actions):
            if min(repeat_worst[a][s] for s in support) >= rem:
                v = float(belief @ repeat_exp[a])
                if v > best_lo:
                    best_lo, best_p = v, Repeat(a)
        acts = allowed(mask, rem)
        best_hi = -math.inf
        if d == 0:
            best_hi = float(belief @ opt) if acts or best_p is not None else -math.inf
        else:
            for a in acts:
                r_hat = _min_reward(model, mask, a)
                rem2 = (rem - r_hat) / g if g > 0 else (-math.inf if rem <= r_hat else math.inf)
                nu = belief @ model.transition[:, a, :]
                lo = hi = float(belief @ model.reward[:, a])
                children = {}
                for o in np.unique(model.obs_map[nu > 0]):
                    part = np.where(model.obs_map == o, nu, 0.0)
                    p_o = part.sum()
                    clo, chi, cp = solve(part / p_o, rem2, d - 1)
                    lo += g * p_o * clo
                    hi += g * p_o * chi
                    children[int(o)] = cp
                best_hi = max(best_hi, hi)
                if all(c is not None for c in children.values()) and lo > best_lo + 1e-12 * (1 + abs(best_lo)):
                    best_lo, best_p = lo, Decision(a, children)
        if best_p is None:
            best_lo = -math.inf
        best_hi = max(best_hi, best_lo)
        memo[key] = (best_lo, best_hi, best_p)
        return memo[key]

    roots = initial_masks(model)
    if len(roots) != 1:
        raise ValueError("gval_search expects a single initial observation class")
    lam = np.asarray(model.initial_belief, dtype=float)
    lo, hi, witness = solve(lam / lam.sum(), float(t), depth)
    if witness is None:
        return GValResult(-math.inf, hi, None, -math.inf, count[0])
    pv = policy_eval(model, witness)
    return GValResult(pv.expected, hi, witness, pv.worst, count[0])


# -- allowed-set characterization by brute force ------------------------------------

@dataclass
class AllowedSetCheck:
    histories: int = 0
    deviations: int = 0
    mismatches: list = field(default_factory=list)

    @property
    def agrees(self) -> bool:
        return not self.mismatches


def check_allowed_sets(model: PomdpModel, table: FutureValueTable, t: float, depth: int = 6,
                       bracket_depth: int = 40, budget: int = DEFAULT_BUDGET) -> AllowedSetCheck:
    """Compare the guard's allowed sets with exhaustive worst-case reasoning.

    Walks every history of length up to ``depth`` in which only allowed
    actions are played. Each such history must still be completable: its
    worst prefix payoff plus ``γ^k`` times a guaranteed continuation value is
    at least ``t``. Each disallowed action must be doomed: some observation
    leads to a history that even the optimistic continuation bound cannot
    lift to ``t``. Continuation values come from :class:`WorstCaseBracket`.
    """
    _check_size(model)
    g = model.discount
    game = table.game
    br = WorstCaseBracket(model)
    out = AllowedSetCheck()

    def walk(guard: GuardState, worst: dict, k: int, hist: tuple):
        out.histories += 1
        if out.histories + out.deviations > budget:
            raise EnumerationBudgetExceeded(f"more than {budget} histories")
        mask = _mask(game.members(guard.support))
        base = min(worst.values())
        if base + g**k * br.lower(mask, bracket_depth) < t - 1e-9:
            out.mismatches.append(("not completable", hist))
        if k == depth:
            return
        allowed = allowed_actions(game, table, guard)
        for a in range(model.n_actions):
            succ = {}
            for s, w in worst.items():
                for s2 in np.flatnonzero(model.transition[s, a] > 0):
                    o = int(model.obs_map[s2])
                    v = w + g**k * float(model.reward[s, a])
                    cur = succ.setdefault(o, {})
                    cur[int(s2)] = min(cur.get(int(s2), math.inf), v)
            if a in allowed:
                for o in sorted(succ):
                    walk(advance_guard(game, guard, a, o), succ[o], k + 1, hist + (a, o))
            else:
                out.deviations += 1
                doomed = any(
                    min(ws.values()) + g ** (k + 1) * br.upper(_mask(ws), bracket_depth) < t - 1e-9
                    for ws in succ.values()
                )
                if not doomed:
                    out.mismatches.append(("disallowed but completable", hist + (a,)))

    for root in initial_masks(model):
        members = _members(root)
        o = int(model.obs_map[members[0]])
        walk(initial_guard(game, t, o if len(game.initial) > 1 else None), {s: 0.0 for s in members}, 0, ())
    return out


# -- the mining robot's named policies -------------------------------------------------

def mining_policy(model: PomdpModel, kind: str, n: int = 0):
    """Policies of the mining-robot example by name.

    ``kind`` is ``m1``, ``m2`` or ``sense`` (play it first, then mine the
    sensed type), ``ms`` (safe mining until it works), or ``ms-then-m1``,
    ``ms-then-m2``, ``ms-then-sense`` (``n`` safe attempts first).
    """
    A = model.action_index
    O = model.obs_index
    ms = A("ms")
    after_sense = Stationary(
        tuple(A("m2") if model.observations[o] == "ore2" else A("m1") for o in range(model.n_observations)),
        "mine-sensed-type",
    )
    if kind in ("m1", "m2"):
        return Repeat(A(kind))
    if kind == "sense":
        return Decision(A("sense"), {}, after_sense)
    if kind == "ms":
        return Repeat(ms)
    if kind.startswith("ms-then-"):
        tail = mining_policy(model, kind[len("ms-then-"):])
        p = tail
        for _ in range(n):
            p = Decision(ms, {O("ore"): p}, Repeat(ms))
        return p
    raise ValueError(f"unknown policy kind {kind!r}")
