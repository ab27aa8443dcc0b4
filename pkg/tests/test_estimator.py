import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from vml_lab import GaussianMixture, LinearOperator, SyntheticDecoder, VMLMAPRestorer
from vml_lab.estimator import check_measurements, check_prior_operator


@pytest.fixture
def est():
    prior = GaussianMixture([1.0], [[1.0]], [[[1.0]]])
    return VMLMAPRestorer(prior, LinearOperator.identity(1), sigma_y=0.5, num_steps=10, num_inner=30)


def test_transform_recovers_conjugate_map(est):
    out = est.fit().transform([[2.0], [0.0]])
    assert out.shape == (2, 1)
    assert np.allclose(out[:, 0], [1.8, 0.2], atol=1e-3)


def test_params_and_clone(est):
    params = est.get_params()
    assert params["sigma_y"] == 0.5 and params["num_steps"] == 10
    c = clone(est).set_params(gamma0=0.5)
    assert c.gamma0 == 0.5 and est.gamma0 == 1.0


def test_deterministic_given_random_state(est):
    est.fit()
    assert np.array_equal(est.predict([[1.0], [3.0]]), est.predict([[1.0], [3.0]]))


def test_not_fitted_and_bad_shapes(est):
    with pytest.raises(NotFittedError):
        est.transform([[1.0]])
    est.fit()
    with pytest.raises(ValueError):
        est.transform([[1.0, 2.0]])
    with pytest.raises(ValueError):
        est.transform([[np.nan]])


def test_validation_helpers():
    prior = GaussianMixture([1.0], [[0.0, 0.0]], [np.eye(2)])
    with pytest.raises(ValueError):
        check_prior_operator(prior, LinearOperator.identity(3))
    with pytest.raises(TypeError):
        check_prior_operator("prior", LinearOperator.identity(2))
    dec = SyntheticDecoder("affine", np.ones((3, 2)) + np.eye(3, 2))
    assert check_prior_operator(prior, LinearOperator.identity(3), dec) == 3
    assert check_measurements([[1, 2]], LinearOperator.identity(2)).dtype == np.float64


def test_latent_mode_and_pipeline():
    prior = GaussianMixture([1.0], [[0.0]], [[[1.0]]])
    dec = SyntheticDecoder("affine", [[2.0]], [1.0])
    est = VMLMAPRestorer(prior, LinearOperator.identity(1), sigma_y=0.5, gamma0=0.3, decoder=dec, num_steps=8)
    out = make_pipeline(est).fit(None).transform([[3.0]])
    # pushforward N(1, 4) observed with noise 0.25: MAP = 1 + 4 / 4.25 * 2
    assert out[0, 0] == pytest.approx(1 + 4 / 4.25 * 2, abs=1e-3)
