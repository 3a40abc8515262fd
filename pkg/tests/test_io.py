import pytest

from gpo.benchmarks import gen_hallway, gen_rocksample, gen_tiger_mining, random_model, tiger_mining_text
from gpo.exceptions import (
    DistributionSumError,
    DuplicateDeclarationError,
    ModelSyntaxError,
    UndeclaredNameError,
)
from gpo.io import load_model, model_hash, parse_model, save_model, serialize_model

SMALL = """\
pomdp v1
discount 0.9
states a b
actions go
observations x y
init a 1
obs a x
obs b y
T a go b 1
T b go b 1
R a go 2
"""


def test_shipped_tiger_file():
    m = parse_model(tiger_mining_text())
    assert (m.n_states, m.n_actions, m.n_observations) == (7, 4, 6)
    assert m == gen_tiger_mining()


def test_round_trip_generators():
    for m in (gen_tiger_mining(), gen_hallway(3, 2, traps=[(1, 0)]), gen_rocksample(3, 2),
              random_model(6, seed=3, observable=False)):
        assert parse_model(serialize_model(m)) == m


def test_serialization_is_canonical():
    a, b = gen_tiger_mining(), parse_model(tiger_mining_text())
    assert serialize_model(a) == serialize_model(b)
    assert model_hash(a) == model_hash(b)
    text = serialize_model(a)
    assert text.endswith("\n")
    assert sum(line.startswith("R ") for line in text.splitlines()) == 4


def test_missing_mass():
    text = SMALL.replace("T a go b 1", "T a go b 0.6")
    with pytest.raises(DistributionSumError) as e:
        parse_model(text)
    assert e.value.line == 9
    assert "T(a, go, .)" in str(e.value)


def test_tiger_missing_mass():
    text = tiger_mining_text().replace("T t1 ms t1 0.40000000000000002\n", "")
    with pytest.raises(DistributionSumError, match=r"T\(t1, ms, \.\) sums to 0\.6"):
        parse_model(text)


def test_syntax_error_has_line():
    with pytest.raises(ModelSyntaxError, match="line 4"):
        parse_model(SMALL.replace("actions go", "actions"))
    with pytest.raises(ModelSyntaxError, match="line 1"):
        parse_model("discount 0.5\n")
    with pytest.raises(ModelSyntaxError, match="line 12"):
        parse_model(SMALL + "T a go\n")


def test_undeclared_name():
    with pytest.raises(UndeclaredNameError, match="line 9"):
        parse_model(SMALL.replace("T a go b 1", "T a go c 1"))


def test_duplicates():
    with pytest.raises(DuplicateDeclarationError):
        parse_model(SMALL + "states c\n")
    with pytest.raises(DuplicateDeclarationError):
        parse_model(SMALL + "R a go 3\n")


def test_missing_transition_row():
    with pytest.raises(DistributionSumError, match="no T lines"):
        parse_model(SMALL.replace("T b go b 1\n", ""))


def test_defaults_and_comments():
    m = parse_model("# leading comment\n" + SMALL.replace("R a go 2", "# no rewards"))
    assert m.reward.sum() == 0
    assert serialize_model(m).count("\nR ") == 0


def test_probabilistic_observations_are_folded():
    text = SMALL.replace("obs b y", "obs b y 0.25\nobs b x 0.75")
    m = parse_model(text)
    assert m.n_states == 3
    assert sorted(m.states) == ["a", "b@x", "b@y"]


def test_file_helpers(tmp_path):
    p = tmp_path / "m.pomdp"
    save_model(gen_tiger_mining(), p)
    assert load_model(p) == gen_tiger_mining()
    assert load_model(p, discount=0.9).discount == 0.9
