"""scikit-learn style wrapper: rows of measurements in, restorations out."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_array, check_random_state
from sklearn.utils.validation import check_is_fitted

from . import latent as lt
from .operator import LinearOperator
from .prior import GaussianMixture
from .schedule import NoiseSchedule
from .solver import SolverConfig, solve


def check_measurements(X, operator: LinearOperator) -> np.ndarray:
    """2-D finite float array whose rows match the operator's output size."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    m = operator.shape[0]
    if X.shape[1] != m:
        raise ValueError(f"X has {X.shape[1]} features, the operator produces {m} measurements")
    return X


def check_prior_operator(prior, operator, decoder=None) -> int:
    """Signal dimension implied by a consistent (prior, operator, decoder) triple."""
    if not isinstance(prior, GaussianMixture):
        raise TypeError(f"prior must be a GaussianMixture, got {type(prior).__name__}")
    if not isinstance(operator, LinearOperator):
        raise TypeError(f"operator must be a LinearOperator, got {type(operator).__name__}")
    n = prior.dim
    if decoder is not None:
        if decoder.latent_dim != prior.dim:
            raise ValueError(f"decoder takes dimension {decoder.latent_dim}, prior has {prior.dim}")
        n = decoder.output_dim
    if operator.shape[1] != n:
        raise ValueError(f"operator acts on dimension {operator.shape[1]}, signal has {n}")
    return n


class VMLMAPRestorer(BaseEstimator, TransformerMixin):
    """MAP restoration of each measurement row by reverse-diffusion VML descent.

    ``fit`` only validates the parameters; the prior is given, not learned.
    Each row of ``X`` gets its own seed drawn from ``random_state``, so a
    fixed integer ``random_state`` makes ``transform`` deterministic.

    Parameters
    ----------
    prior : GaussianMixture
        Prior over the signal, or over the latent when ``decoder`` is set.
    operator : LinearOperator
    sigma_y : float
        Measurement noise level; values below 1e-9 are floored.
    variant : {'plain', 'preconditioned'}
        Ignored when ``decoder`` is set (the latent variant is used).
    decoder : SyntheticDecoder, optional
    """

    def __init__(
        self,
        prior=None,
        operator=None,
        sigma_y=1e-9,
        num_steps=20,
        num_inner=50,
        gamma0=1.0,
        sigma_min=0.002,
        sigma_max=140.0,
        rho=7.0,
        variant="plain",
        decoder=None,
        random_state=0,
    ):
        self.prior = prior
        self.operator = operator
        self.sigma_y = sigma_y
        self.num_steps = num_steps
        self.num_inner = num_inner
        self.gamma0 = gamma0
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max
        self.rho = rho
        self.variant = variant
        self.decoder = decoder
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.n_signal_ = check_prior_operator(self.prior, self.operator, self.decoder)
        if X is not None:
            check_measurements(X, self.operator)
        self.n_features_in_ = self.operator.shape[0]
        if self.decoder is None and self.variant == "latent":
            raise ValueError("variant='latent' needs a decoder")
        schedule = NoiseSchedule(self.sigma_min, self.sigma_max, self.rho, self.num_steps)
        self.config_ = SolverConfig(
            schedule=schedule,
            num_inner=self.num_inner,
            gamma0=self.gamma0,
            sigma_y=self.sigma_y,
            variant="latent" if self.decoder is not None else self.variant,
        )
        return self

    def _row_seeds(self, count: int) -> np.ndarray:
        return check_random_state(self.random_state).randint(0, 2**31 - 1, size=count)

    def _restore(self, y, seed):
        cfg = SolverConfig(**{**self.config_.__dict__, "seed": int(seed)})
        if self.decoder is not None:
            return lt.latent_solve(self.prior, self.decoder, self.operator, y, cfg)[1]
        return solve(self.prior, self.operator, y, cfg).final_x

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = check_measurements(X, self.operator)
        seeds = self._row_seeds(X.shape[0])
        return np.stack([self._restore(row, s) for row, s in zip(X, seeds)])

    def predict(self, X):
        return self.transform(X)
