"""scikit-learn style wrappers over the functional core.

``fit`` consumes a payoff sequence (rows are time steps) and leaves the
online state in fitted attributes; ``partial_fit`` continues from it.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .combiner import TreeEngine, build_multiscale_tree
from .confidence import ConfidenceParams, _g, derive_params
from .predictor import Constant, PNorm, PredictorState, step

__all__ = ["HedgePredictor", "TreeCombiner"]


def _as_sequence(X):
    X = check_array(X, ensure_2d=False, dtype=float, ensure_min_samples=0)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError("HedgePredictor expects one payoff per row")
        X = X[:, 0]
    return X


class HedgePredictor(BaseEstimator):
    """Bet ``g(x_t)`` on each payoff and keep the discounted deviation.

    Give either ``epsilon`` (with ``horizon``) or a window with ``Z``.
    ``predict`` returns the bets that would be placed on ``X`` from the
    fitted state without changing it; ``score`` is the resulting gain.
    """

    def __init__(self, epsilon=None, horizon=None, Z=None, window=None, variant="ramp",
                 schedule="constant", p=1.0):
        self.epsilon = epsilon
        self.horizon = horizon
        self.Z = Z
        self.window = window
        self.variant = variant
        self.schedule = schedule
        self.p = p

    def _params(self, n_samples):
        if self.epsilon is not None:
            return derive_params(self.horizon or max(n_samples, 1), self.epsilon, self.variant)
        n = self.window or max(n_samples, 1)
        Z = self.Z if self.Z is not None else 1.0 / max(n, 3)
        return ConfidenceParams.from_window(n, Z, variant=self.variant)

    def _schedule(self, params):
        if self.schedule == "constant":
            return Constant(params.rho)
        if self.schedule == "pnorm":
            return PNorm(self.p, params.n)
        raise ValueError(f"schedule must be 'constant' or 'pnorm', got {self.schedule!r}")

    def fit(self, X, y=None):
        b = _as_sequence(X)
        params = self._params(len(b))
        self.state_ = PredictorState(params, self._schedule(params))
        self.params_ = params
        self.confidence_ = np.empty(0)
        return self._consume(b)

    def partial_fit(self, X, y=None):
        if not hasattr(self, "state_"):
            return self.fit(X)
        return self._consume(_as_sequence(X))

    def _consume(self, b):
        conf = np.empty(len(b))
        for i, v in enumerate(b):
            conf[i], _ = step(self.state_, v)
        self.confidence_ = np.concatenate([self.confidence_, conf])
        self.gain_ = self.state_.cum_gain
        self.x_ = self.state_.x
        return self

    def predict(self, X):
        check_is_fitted(self, "state_")
        b = _as_sequence(X)
        st = PredictorState(self.params_, self.state_.schedule, x=self.state_.x)
        out = np.empty(len(b))
        for i, v in enumerate(b):
            out[i], _ = step(st, v)
        return out

    def next_bet(self):
        check_is_fitted(self, "state_")
        return float(_g(self.params_, np.float64(self.state_.x)))

    def score(self, X, y=None):
        return float(np.dot(self.predict(X), _as_sequence(X)))


class TreeCombiner(BaseEstimator):
    """Multi-window comparison tree over the columns of a payoff matrix.

    ``X`` has one row per step and one column per strategy. After ``fit``,
    ``weights_`` holds the per-step strategy weights and ``payoff_`` the
    combined payoff. ``predict`` gives the weights for the next step.
    """

    def __init__(self, horizon=None, Z=None, schedule="clipped", variant="ramp"):
        self.horizon = horizon
        self.Z = Z
        self.schedule = schedule
        self.variant = variant

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        T, N = X.shape
        horizon = self.horizon or max(T, 2)
        Z = self.Z if self.Z is not None else (N * horizon) ** -2.0 / math.e
        self.tree_ = build_multiscale_tree(N, horizon, Z, schedule=self.schedule, variant=self.variant)
        self.engine_ = TreeEngine(self.tree_, 1)
        self.n_features_in_ = N
        self.weights_ = np.zeros((0, N))
        self.payoff_ = np.zeros(0)
        return self._consume(X)

    def partial_fit(self, X, y=None):
        if not hasattr(self, "engine_"):
            return self.fit(X)
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} strategies, got {X.shape[1]}")
        return self._consume(X)

    def _consume(self, X):
        if np.any(np.abs(X) > 1):
            raise ValueError("payoffs must satisfy |s| <= 1")
        W = np.empty_like(X)
        pay = np.empty(len(X))
        for t, row in enumerate(X):
            w = self.engine_.node_weights()
            W[t] = self.engine_.strategy_weights(w)[0]
            pay[t] = self.engine_.advance(row[None], w)[0]
        self.weights_ = np.vstack([self.weights_, W])
        self.payoff_ = np.concatenate([self.payoff_, pay])
        return self

    def predict(self, X=None):
        """Strategy weights for the next step (``X`` is ignored)."""
        check_is_fitted(self, "engine_")
        return self.engine_.strategy_weights(self.engine_.node_weights())[0].copy()

    def score(self, X, y=None):
        check_is_fitted(self, "payoff_")
        return float(self.payoff_.sum())
