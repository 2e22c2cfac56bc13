import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cgglrom.errors import InvalidArgumentError
from cgglrom.estimator import CgglRegressor, PODTransformer, check_parameters

from conftest import TRAIN3


def test_check_parameters():
    assert len(check_parameters([1, 1, 4, 4])) == 1
    with pytest.raises(InvalidArgumentError):
        check_parameters(np.ones((2, 3)))
    with pytest.raises(InvalidArgumentError):
        check_parameters([[1, 1, np.nan, 4]])
    with pytest.raises(InvalidArgumentError):
        check_parameters([[1, 1, 9, 4]], domain=__import__("cgglrom").Domain((0, 0), (8, 8)))


def test_pod_transformer_roundtrip(small_snapshots):
    t = PODTransformer(n_modes=3).fit(small_snapshots)
    assert t.singular_values_.shape == (3,)
    Z = t.transform(small_snapshots)
    back = t.inverse_transform(Z)
    for s, b in zip(small_snapshots, back):
        assert np.max(np.abs(s.coefficients - b)) < 1e-10 * np.max(np.abs(s.coefficients))
    assert t.get_params() == {"n_modes": 3, "rank_tol": 1e-10}


def test_pod_transformer_not_fitted(small_snapshots):
    with pytest.raises(NotFittedError):
        PODTransformer().transform(small_snapshots)
    with pytest.raises(InvalidArgumentError):
        PODTransformer().fit([np.zeros(3)])


def test_regressor_params_and_clone():
    r = CgglRegressor(n_modes=2, max_iter=1)
    c = clone(r)
    assert c.get_params()["n_modes"] == 2 and c.get_params()["max_iter"] == 1
    with pytest.raises(NotFittedError):
        r.predict([[1, 1, 4, 4]])


def test_regressor_fit_predict():
    r = CgglRegressor(reference_resolution=12, patches=(2, 2), base_res=(3, 3), n_modes=3, max_iter=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r.fit(TRAIN3)
        J = r.predict(TRAIN3[:1] + [(1, 1, 4, 4)])
        field = r.predict_field((1, 1, 4, 4), [[4.0, 4.0], [1.0, 1.0]])
    assert J.shape == (2,) and np.all(J < 0)
    assert set(r.weights_) == {0, 1, 2, 3}
    assert field.shape == (2,) and field[0] < field[1] <= 0
