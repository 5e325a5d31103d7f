"""Binary classifier fitted by the stochastic tensor method.

The training objective is the logistic loss with the non-convex penalty
``lam * sum_j w_j^2 / (1 + w_j^2)``.  There is no intercept; append a
constant column to ``X`` if one is needed.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.multiclass import check_classification_targets, type_of_target
from sklearn.utils.validation import check_is_fitted, validate_data

from .driver import StmConfig, run
from .problems import nonconvex_logistic_from_data

__all__ = ["STMLogisticClassifier"]


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


class STMLogisticClassifier(ClassifierMixin, BaseEstimator):
    """Non-convex regularized logistic regression.

    Parameters
    ----------
    lam : float, default=0.01
        Weight of the non-convex penalty.
    eps : tuple of float, default=(1e-3, 1e-2, 1e-1)
        First-, second- and third-order stopping tolerances.
    sampling : {"without", "with", "full"}, default="without"
        How derivative estimates are sub-sampled.
    delta : float, default=0.1
        Failure probability used for the sample sizes.
    max_iters : int, default=100
    sigma0 : float, default=1.0
        Initial regularization weight of the model.
    theta : float, default=0.1
        Approximate-minimization constant of the model solver.
    mode : {"verify", "production"}, default="production"
        ``"verify"`` stops on exact criticality measures, ``"production"``
        on the sampled ones.
    random_state : int, default=0

    Attributes
    ----------
    classes_ : ndarray of shape (2,)
    coef_ : ndarray of shape (n_features,)
    n_iter_ : int
    report_ : RunReport
    """

    def __init__(self, lam=0.01, eps=(1e-3, 1e-2, 1e-1), sampling="without", delta=0.1,
                 max_iters=100, sigma0=1.0, theta=0.1, mode="production", random_state=0):
        self.lam = lam
        self.eps = eps
        self.sampling = sampling
        self.delta = delta
        self.max_iters = max_iters
        self.sigma0 = sigma0
        self.theta = theta
        self.mode = mode
        self.random_state = random_state

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.classifier_tags.multi_class = False
        return tags

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        y_type = type_of_target(y, input_name="y")
        if y_type != "binary":
            raise ValueError(f"Only binary classification is supported. The type of the target is {y_type}.")
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError(f"y contains only one class ({self.classes_[0]!r}); two are needed")
        problem = nonconvex_logistic_from_data(X, 2.0 * codes - 1.0, lam=self.lam)
        config = StmConfig(
            eps=tuple(self.eps), sampling=self.sampling, delta=self.delta,
            max_iters=self.max_iters, sigma0=self.sigma0, theta=self.theta,
            mode=self.mode, seed=int(self.random_state),
        )
        self.report_ = run(problem, config)
        if not self.report_.converged:
            warnings.warn(f"stopped after {self.max_iters} iterations without meeting eps",
                          ConvergenceWarning, stacklevel=2)
        self.coef_ = self.report_.x.copy()
        self.n_iter_ = self.report_.iterations
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return X @ self.coef_

    def predict_proba(self, X):
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores > 0).astype(int)]
