import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from vml_lab import prior as pr
from vml_lab.checks import random_gmm
from vml_lab.operator import LinearOperator, adjoint, apply, preconditioner_solve

seeds = st.integers(min_value=0, max_value=2**32 - 1)


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 6), st.floats(0.05, 20.0))
def test_tweedie_and_covariance_psd(seed, n, sigma):
    rng = np.random.default_rng(seed)
    prior = random_gmm(rng, n)
    x = prior.sample(1, rng)[0] + sigma * rng.standard_normal(n)
    d = pr.denoiser(prior, x, sigma)
    assert np.allclose(d, x + sigma**2 * pr.score(prior, x, sigma), atol=1e-9 * (1 + np.abs(x).max()))
    cov = pr.posterior_cov(prior, x, sigma)
    assert np.allclose(cov, cov.T, atol=1e-12)
    assert np.linalg.eigvalsh(cov)[0] > -1e-10


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 5), st.integers(1, 5))
def test_operator_adjoint_and_preconditioner(seed, m, n):
    rng = np.random.default_rng(seed)
    op = LinearOperator.from_matrix(rng.normal(size=(m, n)))
    x, v = rng.normal(size=n), rng.normal(size=m)
    assert np.isclose(apply(op, x) @ v, x @ adjoint(op, v), rtol=1e-10, atol=1e-10)
    g = rng.normal(size=n)
    from vml_lab.operator import preconditioner_matrix

    assert np.allclose(preconditioner_matrix(op) @ preconditioner_solve(op, g), g, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(2, 12))
def test_mask_preconditioner_is_identity(seed, n):
    rng = np.random.default_rng(seed)
    keep = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
    op = LinearOperator.mask(n, keep)
    g = rng.normal(size=n)
    assert np.array_equal(preconditioner_solve(op, g), g)
