"""Finite POMDP data model, belief updates and single-step simulation.

States, actions and observations are dense integer indices; the model keeps
a side table of names for each of them. Observations are a deterministic
function of the state. Models with state-dependent observation noise are
brought into that form by :func:`determinize_observations`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .exceptions import ObservationImpossibleError

#: absolute tolerance for every "sums to one" check
PROB_ATOL = 1e-9


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


class SparseRows(NamedTuple):
    """CSR view of the transition function, one row per ``s * n_actions + a``."""

    ptr: np.ndarray
    state: np.ndarray
    cum: np.ndarray


@dataclass(frozen=True, eq=False)
class PomdpModel:
    """A finite POMDP with a deterministic observation map.

    Parameters
    ----------
    states, actions, observations : sequence of str
        Names; the position of a name is its index.
    transition : array of shape (S, A, S)
        ``transition[s, a, s2]`` is the probability of moving to ``s2``.
    reward : array of shape (S, A)
    obs_map : array of shape (S,)
        Observation index emitted in each state; ``-1`` marks a missing entry
        (reported by :func:`validate_model`).
    initial_belief : array of shape (S,)
    discount : float in [0, 1)
    """

    states: tuple
    actions: tuple
    observations: tuple
    transition: np.ndarray
    reward: np.ndarray
    obs_map: np.ndarray
    initial_belief: np.ndarray
    discount: float
    name: str = field(default="pomdp", compare=False)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "states", tuple(str(s) for s in self.states))
        set_(self, "actions", tuple(str(a) for a in self.actions))
        set_(self, "observations", tuple(str(o) for o in self.observations))
        set_(self, "transition", _frozen(self.transition, np.float64))
        set_(self, "reward", _frozen(self.reward, np.float64))
        set_(self, "obs_map", _frozen(self.obs_map, np.int64))
        set_(self, "initial_belief", _frozen(self.initial_belief, np.float64))
        set_(self, "discount", float(self.discount))
        S, A = len(self.states), len(self.actions)
        if self.transition.shape != (S, A, S):
            raise ValueError(f"transition must have shape {(S, A, S)}, got {self.transition.shape}")
        if self.reward.shape != (S, A):
            raise ValueError(f"reward must have shape {(S, A)}, got {self.reward.shape}")
        if self.obs_map.shape != (S,):
            raise ValueError(f"obs_map must have shape {(S,)}, got {self.obs_map.shape}")
        if self.initial_belief.shape != (S,):
            raise ValueError(f"initial_belief must have shape {(S,)}")

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_observations(self) -> int:
        return len(self.observations)

    @cached_property
    def _state_ix(self):
        return {n: i for i, n in enumerate(self.states)}

    @cached_property
    def _action_ix(self):
        return {n: i for i, n in enumerate(self.actions)}

    @cached_property
    def _obs_ix(self):
        return {n: i for i, n in enumerate(self.observations)}

    def state_index(self, s) -> int:
        return _resolve(s, self._state_ix, "state")

    def action_index(self, a) -> int:
        return _resolve(a, self._action_ix, "action")

    def obs_index(self, o) -> int:
        return _resolve(o, self._obs_ix, "observation")

    def obs_of(self, s) -> int:
        return int(self.obs_map[self.state_index(s)])

    @property
    def max_abs_reward(self) -> float:
        return float(np.abs(self.reward).max()) if self.reward.size else 0.0

    @property
    def initial_support(self) -> frozenset:
        return frozenset(np.flatnonzero(self.initial_belief > 0).tolist())

    def with_discount(self, discount: float) -> "PomdpModel":
        return replace(self, discount=discount)

    @cached_property
    def rows(self) -> SparseRows:
        """Sparse successor lists with cumulative probabilities for sampling."""
        S, A = self.n_states, self.n_actions
        ptr = np.zeros(S * A + 1, dtype=np.int64)
        states, cums = [], []
        for s in range(S):
            for a in range(A):
                row = self.transition[s, a]
                nz = np.flatnonzero(row > 0)
                cum = np.cumsum(row[nz])
                if len(cum):
                    cum[-1] = 1.0  # absorb rounding so a uniform draw always lands
                states.append(nz)
                cums.append(cum)
                ptr[s * A + a + 1] = ptr[s * A + a] + len(nz)
        return SparseRows(
            ptr,
            np.concatenate(states).astype(np.int64) if states else np.zeros(0, np.int64),
            np.concatenate(cums) if cums else np.zeros(0),
        )

    def successors(self, s: int, a: int) -> np.ndarray:
        p = self.rows.ptr
        k = s * self.n_actions + a
        return self.rows.state[p[k]:p[k + 1]]

    def __eq__(self, other):
        if not isinstance(other, PomdpModel):
            return NotImplemented
        return (
            self.states == other.states
            and self.actions == other.actions
            and self.observations == other.observations
            and self.discount == other.discount
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.reward, other.reward)
            and np.array_equal(self.obs_map, other.obs_map)
            and np.array_equal(self.initial_belief, other.initial_belief)
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"PomdpModel({self.name!r}, |S|={self.n_states}, |A|={self.n_actions}, "
            f"|Z|={self.n_observations}, discount={self.discount})"
        )


def _resolve(x, table, kind):
    if isinstance(x, (int, np.integer)):
        i = int(x)
        if not 0 <= i < len(table):
            raise IndexError(f"{kind} index {i} out of range")
        return i
    try:
        return table[x]
    except KeyError:
        raise KeyError(f"unknown {kind} {x!r}") from None


def validate_model(model: PomdpModel) -> list:
    """Return a list of invariant violations; the list is empty iff valid."""
    report = []
    S, A = model.n_states, model.n_actions
    if not 0.0 <= model.discount < 1.0:
        report.append(f"discount {model.discount} outside [0, 1)")
    if np.any(model.transition < 0):
        for s, a, s2 in zip(*np.nonzero(model.transition < 0)):
            report.append(
                f"negative transition probability T({model.states[s]}, {model.actions[a]}, {model.states[s2]})"
            )
    sums = model.transition.sum(axis=2)
    for s in range(S):
        for a in range(A):
            if abs(sums[s, a] - 1.0) > PROB_ATOL:
                report.append(
                    f"transition row ({model.states[s]}, {model.actions[a]}) sums to {sums[s, a]:.12g}"
                )
    if not np.all(np.isfinite(model.reward)):
        report.append("reward contains non-finite entries")
    for s in range(S):
        z = model.obs_map[s]
        if not 0 <= z < model.n_observations:
            report.append(f"obs_map missing for state {model.states[s]}")
    b = model.initial_belief
    if np.any(b < 0):
        report.append("initial_belief has negative entries")
    if abs(b.sum() - 1.0) > PROB_ATOL:
        report.append(f"initial_belief sums to {b.sum():.12g}")
    for kind, names in (("state", model.states), ("action", model.actions), ("observation", model.observations)):
        if len(set(names)) != len(names):
            report.append(f"duplicate {kind} names")
    return report


@dataclass(frozen=True, eq=False)
class Belief:
    """A probability distribution over the states of a model."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs, np.float64))

    @classmethod
    def initial(cls, model: PomdpModel) -> "Belief":
        return cls(model.initial_belief)

    @property
    def support(self) -> frozenset:
        return frozenset(np.flatnonzero(self.probs > 0).tolist())

    def __getitem__(self, s):
        return float(self.probs[s])

    def is_valid(self) -> bool:
        p = self.probs
        return bool(np.all(p >= 0) and abs(p.sum() - 1.0) <= PROB_ATOL and np.any(p > 0))


def belief_update(model: PomdpModel, b: Belief, a, z) -> Belief:
    """Bayes posterior after playing ``a`` and observing ``z``.

    Raises :class:`ObservationImpossibleError` when the pair has probability
    zero from ``b``; the belief is never silently renormalized.
    """
    a = model.action_index(a)
    z = model.obs_index(z)
    predicted = b.probs @ model.transition[:, a, :]
    posterior = np.where(model.obs_map == z, predicted, 0.0)
    mass = posterior.sum()
    if mass <= 0.0:
        raise ObservationImpossibleError(
            f"observation {model.observations[z]!r} impossible after action {model.actions[a]!r}"
        )
    return Belief(posterior / mass)


def discounted_prefix(rewards: Sequence[float], discount: float) -> float:
    """Discounted sum ``sum_i discount**i * rewards[i]`` of a finite reward sequence.

    Evaluated back to front (``r0 + g*(r1 + g*(...))``), the same nesting the
    support-game recursion uses, so equal sums round identically.
    """
    total = 0.0
    for r in reversed(list(rewards)):
        total = float(r) + discount * total
    return total


def sample_step(model: PomdpModel, s: int, a: int, rng: np.random.Generator):
    """Draw one transition; returns ``(successor, observation, reward)``."""
    rows = model.rows
    k = s * model.n_actions + a
    lo, hi = rows.ptr[k], rows.ptr[k + 1]
    j = lo + int(np.searchsorted(rows.cum[lo:hi], rng.random(), side="right"))
    s2 = int(rows.state[min(j, hi - 1)])
    return s2, int(model.obs_map[s2]), float(model.reward[s, a])


@dataclass(frozen=True)
class PathTrace:
    """A finite path ``s0 a0 s1 a1 ... sn``.

    Each step is ``(successor, action, reward, observation)``: the action
    played in the previous state, the reward it earned, the state reached
    and the observation emitted there.
    """

    start_state: int
    steps: tuple = ()

    def extend(self, successor, action, reward, observation) -> "PathTrace":
        return PathTrace(self.start_state, self.steps + ((successor, action, reward, observation),))

    @property
    def history(self) -> tuple:
        return tuple((a, o) for _, a, _, o in self.steps)

    @property
    def rewards(self) -> list:
        return [r for _, _, r, _ in self.steps]

    def __len__(self):
        return len(self.steps)

    def payoff(self, discount: float) -> float:
        return discounted_prefix(self.rewards, discount)


def trace_violations(model: PomdpModel, trace: PathTrace) -> list:
    out = []
    prev = trace.start_state
    if model.initial_belief[prev] <= 0:
        out.append(f"start state {model.states[prev]} not in the initial support")
    for i, (s2, a, r, o) in enumerate(trace.steps):
        if model.transition[prev, a, s2] <= 0:
            out.append(f"step {i}: impossible transition")
        if r != model.reward[prev, a]:
            out.append(f"step {i}: reward {r} != r(s, a) = {model.reward[prev, a]}")
        if o != model.obs_map[s2]:
            out.append(f"step {i}: observation mismatch")
        prev = s2
    return out


@dataclass(frozen=True, eq=False)
class RawPomdpModel:
    """A POMDP whose observation function is a distribution per state."""

    states: tuple
    actions: tuple
    observations: tuple
    transition: np.ndarray
    reward: np.ndarray
    obs_probs: np.ndarray  # (S, Z)
    initial_belief: np.ndarray
    discount: float
    name: str = "pomdp"


def determinize_observations(raw: RawPomdpModel) -> PomdpModel:
    """Fold observation noise into the state space.

    The product state ``(s, z)`` exists whenever ``z`` can be emitted in ``s``;
    it moves like ``s`` and always emits ``z``. Only product states reachable
    from the initial belief are kept. A state that can emit a single
    observation keeps its name; otherwise the product is named ``s@z``.
    """
    T = np.asarray(raw.transition, dtype=np.float64)
    R = np.asarray(raw.reward, dtype=np.float64)
    O = np.asarray(raw.obs_probs, dtype=np.float64)
    lam = np.asarray(raw.initial_belief, dtype=np.float64)
    S, A, _ = T.shape

    emit = [np.flatnonzero(O[s] > 0) for s in range(S)]
    # reachable original states, then their products
    reach = np.zeros(S, dtype=bool)
    frontier = list(np.flatnonzero(lam > 0))
    reach[frontier] = True
    while frontier:
        s = frontier.pop()
        for s2 in np.flatnonzero(T[s].sum(axis=0) > 0):
            if not reach[s2]:
                reach[s2] = True
                frontier.append(s2)

    pairs = [(s, int(z)) for s in range(S) if reach[s] for z in emit[s]]
    index = {p: i for i, p in enumerate(pairs)}
    n = len(pairs)
    names = [
        raw.states[s] if len(emit[s]) == 1 else f"{raw.states[s]}@{raw.observations[z]}"
        for s, z in pairs
    ]
    trans = np.zeros((n, A, n))
    rew = np.zeros((n, A))
    obs = np.zeros(n, dtype=np.int64)
    init = np.zeros(n)
    for i, (s, z) in enumerate(pairs):
        obs[i] = z
        rew[i] = R[s]
        init[i] = lam[s] * O[s, z]
        for a in range(A):
            for s2 in np.flatnonzero(T[s, a] > 0):
                for z2 in emit[s2]:
                    trans[i, a, index[(s2, int(z2))]] += T[s, a, s2] * O[s2, z2]
    return PomdpModel(
        states=names,
        actions=raw.actions,
        observations=raw.observations,
        transition=trans,
        reward=rew,
        obs_map=obs,
        initial_belief=init,
        discount=raw.discount,
        name=raw.name,
    )


def as_raw(model: PomdpModel) -> RawPomdpModel:
    """View a deterministic-observation model as a raw one (Dirac rows)."""
    O = np.zeros((model.n_states, model.n_observations))
    O[np.arange(model.n_states), model.obs_map] = 1.0
    return RawPomdpModel(
        model.states, model.actions, model.observations, model.transition,
        model.reward, O, model.initial_belief, model.discount, model.name,
    )


def states_by_observation(model: PomdpModel) -> dict:
    out: dict = {}
    for s, z in enumerate(model.obs_map.tolist()):
        out.setdefault(z, []).append(s)
    return out


def names_of(model: PomdpModel, states: Iterable[int]) -> list:
    return [model.states[s] for s in sorted(states)]
