"""scikit-learn style wrappers around preprocessing and planning.

``fit`` takes a :class:`~gpo.model.PomdpModel` (or a path to a model file)
instead of a feature matrix; everything learned from it ends in ``_``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import InfeasibleThresholdError, InvalidModelError
from .gpomcp import PlannerConfig, commit, new_tree, plan_action
from .guard import check_feasible
from .harness import run_episode
from .io import load_model
from .model import PomdpModel, validate_model
from .support import check_observable_rewards, enumerate_valid_supports, value_iteration


def check_model(model) -> PomdpModel:
    """Accept a model or a path to one; raise on structural problems."""
    if not isinstance(model, PomdpModel):
        model = load_model(model)
    problems = validate_model(model)
    if problems:
        raise InvalidModelError(problems)
    return model


def _pessimistic(model, flag):
    if flag == "auto":
        return not check_observable_rewards(model).observable
    return bool(flag)


class FutureValueEstimator(TransformerMixin, BaseEstimator):
    """Future values of belief supports.

    :param max_iters: cap on value-iteration sweeps; ``None`` runs to a fixpoint.
    :param tol: stop once successive sweeps differ by at most this much.
    :param pessimistic: score each action by its worst member reward.
        ``"auto"`` turns this on only when rewards are not observable.
    """

    def __init__(self, max_iters=None, tol=0.0, pessimistic="auto"):
        self.max_iters = max_iters
        self.tol = tol
        self.pessimistic = pessimistic

    def fit(self, model, y=None):
        model = check_model(model)
        self.model_ = model
        self.game_ = enumerate_valid_supports(model, pessimistic=_pessimistic(model, self.pessimistic))
        self.table_ = value_iteration(self.game_, max_iters=self.max_iters, tol=self.tol)
        self.n_supports_ = self.game_.n_supports
        return self

    def transform(self, supports):
        """Table value of each support (iterables of state indices or names)."""
        check_is_fitted(self, "table_")
        return np.array([self.table_[self.game_.support_id(B)] for B in supports])

    def fit_transform(self, model, y=None, supports=None):
        self.fit(model)
        if supports is None:
            return np.asarray(self.table_.values).copy()
        return self.transform(supports)


class GPOMCPPlanner(BaseEstimator):
    """Online planner with a hard worst-case payoff threshold.

    ``predict`` maps histories (sequences of ``(action, observation)`` pairs
    after the first observation) to the next action.
    """

    def __init__(self, threshold=0.0, simulations=1024, ucb_constant=None, particles=1024,
                 depth=None, seed=0, pessimistic="auto"):
        self.threshold = threshold
        self.simulations = simulations
        self.ucb_constant = ucb_constant
        self.particles = particles
        self.depth = depth
        self.seed = seed
        self.pessimistic = pessimistic

    def _config(self):
        return PlannerConfig(simulations=self.simulations, ucb_constant=self.ucb_constant,
                             depth=self.depth, particles=self.particles, seed=self.seed)

    def fit(self, model, y=None):
        fv = FutureValueEstimator(pessimistic=self.pessimistic).fit(model)
        self.model_ = fv.model_
        self.game_ = fv.game_
        self.table_ = fv.table_
        if not check_feasible(self.table_, self.threshold):
            raise InfeasibleThresholdError(
                f"threshold {self.threshold} exceeds the guaranteed value "
                f"{min(self.table_.values[b] for b in self.game_.initial)}"
            )
        self.config_ = self._config()
        return self

    def predict(self, histories, first_observations=None):
        """Next action index for each history.

        :param histories: list of histories, each a list of ``(a, o)`` index pairs.
        :param first_observations: initial observation per history, needed
            only when the initial belief spans several observations.
        """
        check_is_fitted(self, "table_")
        out = []
        for i, h in enumerate(histories):
            rng = np.random.default_rng([self.seed, i])
            o0 = None if first_observations is None else first_observations[i]
            tree = new_tree(self.model_, self.game_, self.table_, self.threshold, self.config_, rng, o0)
            for a, o in h:
                commit(tree, int(a), int(o), rng)
            out.append(plan_action(tree, rng))
        return np.asarray(out, dtype=np.int64)

    def run_episode(self, seed=None, horizon=None):
        check_is_fitted(self, "table_")
        return run_episode(self.model_, self.game_, self.table_, self.threshold, self.config_,
                           self.seed if seed is None else seed, horizon=horizon)
