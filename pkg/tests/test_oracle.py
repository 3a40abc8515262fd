import numpy as np
import pytest

from gpo.benchmarks import random_model
from gpo.exceptions import EnumerationBudgetExceeded
from gpo.oracle import (
    Decision,
    Repeat,
    WorstCaseBracket,
    actions_along,
    check_allowed_sets,
    describe,
    gval_search,
    initial_masks,
    mining_policy,
    policy_eval,
)
from gpo.support import enumerate_valid_supports, value_iteration

TOL = 1e-9


@pytest.mark.parametrize("kind,n,ev,wv", [
    ("m1", 0, 45.0, 0.0),
    ("m2", 0, 5.0, 0.0),
    ("sense", 0, 25.0, 25.0),
    ("ms", 0, 37.5, 0.0),
    ("ms-then-sense", 2, 37.0, 6.25),
])
def test_named_policies(tiger, kind, n, ev, wv):
    v = policy_eval(tiger, mining_policy(tiger, kind, n))
    assert v.expected == pytest.approx(ev, abs=TOL)
    assert v.worst == pytest.approx(wv, abs=TOL)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_closed_forms(tiger, n):
    ev = lambda k: policy_eval(tiger, mining_policy(tiger, k, n)).expected
    assert abs(ev("ms-then-m1") - (37.5 + 7.5 / 5**n)) < TOL
    assert abs(ev("ms-then-m2") - (37.5 - 32.5 / 5**n)) < TOL
    assert abs(ev("ms-then-sense") - (37.5 - 12.5 / 5**n)) < TOL


def test_sensing_worst_case_shrinks(tiger):
    for n in range(1, 4):
        w = policy_eval(tiger, mining_policy(tiger, "ms-then-sense", n)).worst
        assert w == pytest.approx(100 * 0.5 ** (n + 2), abs=TOL)


def test_actions_along(tiger):
    p = mining_policy(tiger, "ms-then-sense", 2)
    ore = tiger.obs_index("ore")
    names = [tiger.actions[a] for a in actions_along(p, [ore, ore, ore])]
    assert names[:3] == ["ms", "ms", "sense"]
    assert "sense" in describe(tiger, p)


def test_unknown_policy(tiger):
    with pytest.raises(ValueError):
        mining_policy(tiger, "jump")


def test_budget(tiger):
    with pytest.raises(EnumerationBudgetExceeded):
        policy_eval(tiger, mining_policy(tiger, "ms-then-sense", 3), budget=3)


@pytest.mark.parametrize("t,value", [(0, 45.0), (5, 37.0), (15, 25.0)])
def test_gval(tiger, tiger_table, t, value):
    res = gval_search(tiger, tiger_table, t, depth=6)
    assert res.value == pytest.approx(value, abs=TOL)
    assert res.worst >= t - TOL
    v = policy_eval(tiger, res.witness)
    assert v.expected == pytest.approx(res.value, abs=TOL)
    assert v.worst >= t - TOL
    assert res.upper >= res.value - TOL
    assert res.upper - res.value < 1e-9


def test_gval_witnesses(tiger, tiger_table):
    ore = tiger.obs_index("ore")
    w5 = gval_search(tiger, tiger_table, 5).witness
    assert [tiger.actions[a] for a in actions_along(w5, [ore, ore])][:3] == ["ms", "ms", "sense"]
    w15 = gval_search(tiger, tiger_table, 15).witness
    assert tiger.actions[actions_along(w15, [])[0]] == "sense"


def test_bracket_matches_table(tiger, tiger_game, tiger_table):
    br = WorstCaseBracket(tiger)
    for b, members in enumerate(tiger_game.supports):
        lo, hi = br.lower(members, 60), br.upper(members, 60)
        assert lo - TOL <= tiger_table.values[b] <= hi + TOL
        assert br.width(60) < 1e-12


def test_fval_is_best_worst_case(tiger, tiger_table):
    best = max(policy_eval(tiger, mining_policy(tiger, k, n)).worst
               for k, n in [("m1", 0), ("m2", 0), ("sense", 0), ("ms", 0), ("ms-then-sense", 1)])
    root = tiger_table.values[tiger_table.game.initial[0]]
    assert best == pytest.approx(root, abs=TOL)


def test_allowed_set_equivalence(tiger, tiger_table):
    res = check_allowed_sets(tiger, tiger_table, 12, depth=6)
    assert res.agrees, res.mismatches[:5]
    assert res.histories > 100
    assert res.deviations > 0


def test_allowed_set_equivalence_random():
    for seed in range(3):
        m = random_model(5, seed=seed)
        table = value_iteration(enumerate_valid_supports(m))
        t = float(table.values[table.game.initial[0]]) * 0.8
        res = check_allowed_sets(m, table, t, depth=3, bracket_depth=200)
        assert res.agrees, res.mismatches[:5]


def test_initial_masks(tiger):
    assert initial_masks(tiger) == [0b11]


def test_policy_types(tiger):
    p = Decision(tiger.action_index("ms"), {}, Repeat(tiger.action_index("sense")))
    assert isinstance(p.next(0), Repeat)
