import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import ConvergenceWarning, NotFittedError
from sklearn.model_selection import cross_val_score
from sklearn.utils.estimator_checks import parametrize_with_checks

from stmopt.estimator import STMLogisticClassifier


def blobs(n=300, d=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    w = rng.standard_normal(d)
    y = np.where(X @ w + 0.3 * rng.standard_normal(n) > 0, "yes", "no")
    return X, y


@parametrize_with_checks([STMLogisticClassifier(max_iters=20)])
def test_sklearn_compatible(estimator, check):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        check(estimator)


def test_fit_predict():
    X, y = blobs()
    clf = STMLogisticClassifier().fit(X, y)
    assert list(clf.classes_) == ["no", "yes"]
    assert clf.coef_.shape == (4,)
    assert (clf.predict(X) == y).mean() > 0.9
    proba = clf.predict_proba(X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    np.testing.assert_array_equal(clf.predict(X), clf.classes_[(proba[:, 1] > 0.5).astype(int)])
    assert clf.n_iter_ == clf.report_.iterations


def test_get_set_params_and_clone():
    clf = STMLogisticClassifier(lam=0.5, eps=(1e-2, 1e-1, 0.5))
    assert clone(clf).get_params() == clf.get_params()
    clf.set_params(max_iters=3)
    assert clf.max_iters == 3


def test_seeded_fit_is_reproducible():
    X, y = blobs(seed=3)
    a = STMLogisticClassifier(random_state=5).fit(X, y)
    b = STMLogisticClassifier(random_state=5).fit(X, y)
    np.testing.assert_array_equal(a.coef_, b.coef_)


def test_unfitted_and_bad_targets():
    X, y = blobs()
    with pytest.raises(NotFittedError):
        STMLogisticClassifier().predict(X)
    with pytest.raises(ValueError, match="binary"):
        STMLogisticClassifier().fit(X, np.arange(len(X)) % 3)
    with pytest.raises(ValueError, match="only one class"):
        STMLogisticClassifier().fit(X, np.zeros(len(X)))


def test_convergence_warning():
    X, y = blobs()
    with pytest.warns(ConvergenceWarning):
        STMLogisticClassifier(max_iters=1).fit(X, y)


def test_works_in_cross_validation():
    X, y = blobs(n=200)
    scores = cross_val_score(STMLogisticClassifier(), X, y, cv=3)
    assert scores.mean() > 0.85
