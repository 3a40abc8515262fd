import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gpo.benchmarks import tiger_mining_text
from gpo.estimator import FutureValueEstimator, GPOMCPPlanner, check_model
from gpo.exceptions import InfeasibleThresholdError


def test_future_values(tiger):
    fv = FutureValueEstimator().fit(tiger)
    assert fv.n_supports_ == 6
    got = fv.transform([["t1", "t2"], ["mnd"], ["t1p"]])
    assert np.allclose(got, [25, 100, 50], atol=1e-9)
    assert fv.fit_transform(tiger).shape == (6,)


def test_params_and_clone():
    fv = FutureValueEstimator(max_iters=3)
    assert fv.get_params() == {"max_iters": 3, "tol": 0.0, "pessimistic": "auto"}
    c = clone(fv)
    assert c.max_iters == 3 and not hasattr(c, "table_")
    with pytest.raises(NotFittedError):
        c.transform([[0]])


def test_early_stop_is_lower(tiger):
    lo = FutureValueEstimator(max_iters=2).fit_transform(tiger)
    hi = FutureValueEstimator().fit_transform(tiger)
    assert np.all(lo <= hi)


def test_fit_from_path(tmp_path):
    p = tmp_path / "m.pomdp"
    p.write_text(tiger_mining_text())
    assert check_model(p).n_states == 7
    assert FutureValueEstimator().fit(str(p)).n_supports_ == 6


def test_planner(tiger):
    pl = GPOMCPPlanner(threshold=12, simulations=128).fit(tiger)
    ms, ore = tiger.action_index("ms"), tiger.obs_index("ore")
    acts = pl.predict([[], [(ms, ore)]])
    assert tiger.actions[acts[0]] in {"ms", "sense"}
    assert tiger.actions[acts[1]] == "sense"
    rec = pl.run_episode(seed=4)
    assert rec.guarantee_ok


def test_planner_infeasible(tiger):
    with pytest.raises(InfeasibleThresholdError):
        GPOMCPPlanner(threshold=26).fit(tiger)
    with pytest.raises(NotFittedError):
        GPOMCPPlanner().predict([[]])
