"""Reader and writer for the line-based ``pomdp v1`` model format.

Grammar (one statement per line, ``#`` starts a comment, tokens are
separated by whitespace)::

    pomdp v1
    discount <float>
    states <name>...
    actions <name>...
    observations <name>...
    init <state> <prob>
    obs <state> <observation> [<prob>]
    T <state> <action> <state> <prob>
    R <state> <action> <value>

``pomdp v1`` must be the first statement. Each declaration line appears
once. Transitions not listed have probability zero, but every
(state, action) pair needs at least one ``T`` line. Missing ``R`` lines mean
reward zero. A state with probabilistic ``obs`` lines makes the whole model
go through :func:`gpo.model.determinize_observations`.
"""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .exceptions import (
    DistributionSumError,
    DuplicateDeclarationError,
    InvalidModelError,
    ModelSyntaxError,
    UndeclaredNameError,
)
from .model import PROB_ATOL, PomdpModel, RawPomdpModel, determinize_observations, validate_model

HEADER = "pomdp v1"

_ARITY = {
    "discount": (1, 1),
    "init": (2, 2),
    "obs": (2, 3),
    "T": (4, 4),
    "R": (3, 3),
}


def _float(tok, lineno):
    try:
        return float(tok)
    except ValueError:
        raise ModelSyntaxError(f"expected a number, got {tok!r}", lineno) from None


def parse_model(text, name: str = "pomdp") -> PomdpModel:
    """Parse ``pomdp v1`` text (a string or an iterable of lines)."""
    lines = text.splitlines() if isinstance(text, str) else list(text)
    decl: dict = {}
    decl_line: dict = {}
    discount = None
    seen_header = False
    init, obs, trans, rew = {}, {}, {}, {}

    def lookup(kind, tok, lineno):
        table = decl.get(kind)
        if table is None:
            raise ModelSyntaxError(f"{kind} used before they are declared", lineno)
        try:
            return table[tok]
        except KeyError:
            raise UndeclaredNameError(f"undeclared {kind[:-1]} {tok!r}", lineno) from None

    for lineno, raw in enumerate(lines, start=1):
        toks = raw.split("#", 1)[0].split()
        if not toks:
            continue
        head, args = toks[0], toks[1:]
        if not seen_header:
            if toks != ["pomdp", "v1"]:
                raise ModelSyntaxError("file must start with 'pomdp v1'", lineno)
            seen_header = True
            continue
        if head in ("states", "actions", "observations"):
            if head in decl:
                raise DuplicateDeclarationError(
                    f"{head} already declared on line {decl_line[head]}", lineno
                )
            if not args:
                raise ModelSyntaxError(f"empty {head} declaration", lineno)
            table = {}
            for tok in args:
                if tok in table:
                    raise DuplicateDeclarationError(f"duplicate {head[:-1]} {tok!r}", lineno)
                table[tok] = len(table)
            decl[head] = table
            decl_line[head] = lineno
            continue
        if head not in _ARITY:
            raise ModelSyntaxError(f"unknown statement {head!r}", lineno)
        lo, hi = _ARITY[head]
        if not lo <= len(args) <= hi:
            raise ModelSyntaxError(f"{head} expects {lo}..{hi} arguments, got {len(args)}", lineno)
        if head == "discount":
            if discount is not None:
                raise DuplicateDeclarationError("discount declared twice", lineno)
            discount = _float(args[0], lineno)
        elif head == "init":
            s = lookup("states", args[0], lineno)
            if s in init:
                raise DuplicateDeclarationError(f"duplicate init for {args[0]!r}", lineno)
            init[s] = _float(args[1], lineno)
        elif head == "obs":
            s = lookup("states", args[0], lineno)
            z = lookup("observations", args[1], lineno)
            p = _float(args[2], lineno) if len(args) == 3 else 1.0
            row = obs.setdefault(s, {})
            if z in row:
                raise DuplicateDeclarationError(f"duplicate obs line for ({args[0]}, {args[1]})", lineno)
            row[z] = (p, lineno)
        elif head == "T":
            s = lookup("states", args[0], lineno)
            a = lookup("actions", args[1], lineno)
            s2 = lookup("states", args[2], lineno)
            row = trans.setdefault((s, a), {})
            if s2 in row:
                raise DuplicateDeclarationError(
                    f"duplicate transition ({args[0]}, {args[1]}, {args[2]})", lineno
                )
            row[s2] = (_float(args[3], lineno), lineno)
        else:
            s = lookup("states", args[0], lineno)
            a = lookup("actions", args[1], lineno)
            if (s, a) in rew:
                raise DuplicateDeclarationError(f"duplicate reward for ({args[0]}, {args[1]})", lineno)
            rew[(s, a)] = _float(args[2], lineno)

    if not seen_header:
        raise ModelSyntaxError("empty model: missing 'pomdp v1' header", 1)
    for kind in ("states", "actions", "observations"):
        if kind not in decl:
            raise ModelSyntaxError(f"missing {kind} declaration")
    if discount is None:
        raise ModelSyntaxError("missing discount")
    states = list(decl["states"])
    actions = list(decl["actions"])
    observations = list(decl["observations"])
    S, A, Z = len(states), len(actions), len(observations)

    T = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            row = trans.get((s, a))
            if not row:
                raise DistributionSumError(f"no T lines for ({states[s]}, {actions[a]})")
            total = 0.0
            for s2, (p, lineno) in row.items():
                if p < 0:
                    raise DistributionSumError(f"negative probability {p}", lineno)
                T[s, a, s2] = p
                total += p
            if abs(total - 1.0) > PROB_ATOL:
                first = min(ln for _, ln in row.values())
                raise DistributionSumError(
                    f"T({states[s]}, {actions[a]}, .) sums to {total:.12g}", first
                )
    Rm = np.zeros((S, A))
    for (s, a), v in rew.items():
        Rm[s, a] = v
    lam = np.zeros(S)
    for s, p in init.items():
        if p < 0:
            raise DistributionSumError(f"negative initial probability for {states[s]!r}")
        lam[s] = p
    if abs(lam.sum() - 1.0) > PROB_ATOL:
        raise DistributionSumError(f"init sums to {lam.sum():.12g}")

    probabilistic = False
    O = np.zeros((S, Z))
    for s in range(S):
        row = obs.get(s)
        if not row:
            raise UndeclaredNameError(f"no obs line for state {states[s]!r}")
        total = sum(p for p, _ in row.values())
        if abs(total - 1.0) > PROB_ATOL:
            raise DistributionSumError(f"obs({states[s]}, .) sums to {total:.12g}", min(ln for _, ln in row.values()))
        for z, (p, _) in row.items():
            O[s, z] = p
        if np.count_nonzero(O[s]) != 1:
            probabilistic = True

    if probabilistic:
        model = determinize_observations(
            RawPomdpModel(states, actions, observations, T, Rm, O, lam, discount, name)
        )
    else:
        model = PomdpModel(states, actions, observations, T, Rm, O.argmax(axis=1), lam, discount, name)
    problems = validate_model(model)
    if problems:
        raise InvalidModelError(problems)
    return model


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def serialize_model(model: PomdpModel) -> str:
    """Canonical text for ``model``.

    Declarations follow index order (so a reparse yields identical indices),
    statements are grouped by kind and ordered by index, numbers use 17
    significant digits, zero rewards and zero probabilities are omitted.
    """
    st, ac, ob = model.states, model.actions, model.observations
    out = [HEADER, f"discount {_fmt(model.discount)}"]
    out.append("states " + " ".join(st))
    out.append("actions " + " ".join(ac))
    out.append("observations " + " ".join(ob))
    for s in np.flatnonzero(model.initial_belief > 0):
        out.append(f"init {st[s]} {_fmt(model.initial_belief[s])}")
    for s in range(model.n_states):
        out.append(f"obs {st[s]} {ob[model.obs_map[s]]}")
    for s in range(model.n_states):
        for a in range(model.n_actions):
            for s2 in np.flatnonzero(model.transition[s, a] > 0):
                out.append(f"T {st[s]} {ac[a]} {st[s2]} {_fmt(model.transition[s, a, s2])}")
    for s in range(model.n_states):
        for a in range(model.n_actions):
            if model.reward[s, a] != 0.0:
                out.append(f"R {st[s]} {ac[a]} {_fmt(model.reward[s, a])}")
    return "\n".join(out) + "\n"


def model_hash(model: PomdpModel) -> str:
    return hashlib.sha256(serialize_model(model).encode("utf-8")).hexdigest()


def load_model(path, discount=None) -> PomdpModel:
    p = Path(path)
    model = parse_model(p.read_text(encoding="utf-8"), name=p.stem)
    if discount is not None:
        model = model.with_discount(discount)
    return model


def save_model(model: PomdpModel, path) -> None:
    Path(path).write_text(serialize_model(model), encoding="utf-8", newline="\n")
