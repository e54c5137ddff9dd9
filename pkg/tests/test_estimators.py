import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dualchain.estimators import DDIMInversion, DualChainInversion, check_conditions, check_latents
from dualchain.predictor import constant_predictor


def test_dual_chain_round_trip(gmm, shapes):
    X, C = shapes.images[:4], shapes.conditions[:4]
    est = DualChainInversion(gmm, n_steps=20, omega=2.0).fit(X)
    Z = est.transform(X, C)
    assert Z.shape == X.shape
    assert np.max(np.abs(est.inverse_transform(Z) - X)) <= 1e-6
    assert est.n_features_in_ == 32 * 32


def test_ddim_round_trip_is_approximate(gmm, shapes):
    X, C = shapes.images[:3], shapes.conditions[:3]
    dci = DualChainInversion(gmm, n_steps=10).fit(X)
    ddim = DDIMInversion(gmm, n_steps=10).fit(X)
    err_dci = np.mean((dci.inverse_transform(dci.transform(X, C)) - X) ** 2)
    err_ddim = np.mean((ddim.inverse_transform(ddim.transform(X, C)) - X) ** 2)
    assert err_ddim > 10 * err_dci


def test_ddim_exact_with_constant_predictor(rng_np):
    X = rng_np.standard_normal((3, 6))
    est = DDIMInversion(constant_predictor(rng_np.standard_normal(6)), n_steps=25).fit(X)
    np.testing.assert_allclose(est.inverse_transform(est.transform(X)), X, atol=1e-9)


def test_params_and_clone(gmm):
    est = DualChainInversion(gmm, n_steps=10, omega=3.0)
    params = est.get_params()
    assert params["n_steps"] == 10 and params["omega"] == 3.0
    twin = clone(est)
    assert twin.get_params()["omega"] == 3.0
    est.set_params(n_steps=5)
    assert est.n_steps == 5


def test_not_fitted_and_validation(gmm, shapes):
    est = DualChainInversion(gmm, n_steps=5)
    with pytest.raises(NotFittedError):
        est.transform(shapes.images[:1])
    est.fit()
    with pytest.raises(NotFittedError):
        est.inverse_transform(shapes.images[:1])
    with pytest.raises(ValueError):
        est.transform(np.full((1, 32, 32), np.nan))
    with pytest.raises(ValueError):
        DualChainInversion(None).fit()
    with pytest.raises(ValueError):
        DualChainInversion(gmm, omega=-1).fit()
    est.transform(shapes.images[:2], shapes.conditions[:2])
    with pytest.raises(ValueError):
        est.inverse_transform(shapes.images[:1])


def test_input_helpers():
    with pytest.raises(ValueError):
        check_latents(np.zeros(4))
    with pytest.raises(ValueError):
        check_latents(np.zeros((0, 3)))
    assert check_conditions(None, 3, 2).shape == (3, 2)
    assert check_conditions(np.ones(2), 3, 2).shape == (3, 2)
    with pytest.raises(ValueError):
        check_conditions(np.ones((2, 2)), 3, 2)
