"""The variational mode-seeking loss, its simplified form and their gradients.

All totals drop the additive constant ``C`` (it depends on sigma but not on
the point); :func:`vml_constant` returns it when an absolute value is needed,
e.g. to compare against a numerically integrated KL divergence.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import operator as ops
from . import prior as pr
from .prior import LOG_2PI

FIELDS = (
    "neg_log_marginal",
    "tweedie_quad",
    "trace_prior",
    "meas_consistency",
    "trace_meas",
    "total_full",
    "total_simplified",
)


@dataclass(frozen=True)
class LossBreakdown:
    """Individual VML terms at one point; trace terms are NaN when not computed."""

    neg_log_marginal: float
    tweedie_quad: float
    trace_prior: float
    meas_consistency: float
    trace_meas: float
    total_full: float
    total_simplified: float

    def as_dict(self) -> dict:
        return asdict(self)


class GradientParts(NamedTuple):
    total: np.ndarray
    measurement: np.ndarray
    prior: np.ndarray


class MeasurementMap(NamedTuple):
    """Forward model ``d -> A(d)`` and its vector-Jacobian product at ``d``."""

    forward: Callable[[np.ndarray], np.ndarray]
    pullback: Callable[[np.ndarray, np.ndarray], np.ndarray]


def linear_map(op: ops.LinearOperator) -> MeasurementMap:
    return MeasurementMap(lambda d: ops.apply(op, d), lambda d, r: ops.adjoint(op, r))


def _check(prior, op, y, x, sigma, sigma_y):
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not sigma_y > 0:
        raise ValueError(f"sigma_y must be positive, got {sigma_y}")
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (prior.dim,):
        raise ValueError(f"x has dimension {x.size}, prior has {prior.dim}")
    if op is not None:
        if op.shape[1] != prior.dim:
            raise ValueError(f"operator acts on dimension {op.shape[1]}, prior has {prior.dim}")
        if y is not None and np.shape(y) != (op.shape[0],):
            raise ValueError(f"y has shape {np.shape(y)}, operator expects ({op.shape[0]},)")
    return x


def simplified_terms(prior, meas: MeasurementMap, y, sigma_y, x, sigma):
    """(neg_log_marginal, tweedie_quad, meas_consistency, D) for any forward model."""
    d = pr.denoiser(prior, x, sigma)
    nlm = -pr.marginal_logpdf(prior, x, sigma)
    quad = -float(np.sum((d - x) ** 2)) / (2 * sigma**2)
    resid = np.asarray(y, dtype=float) - meas.forward(d)
    mc = float(resid @ resid) / (2 * sigma_y**2)
    return nlm, quad, mc, d


def _breakdown(nlm, quad, tp, mc, tm):
    return LossBreakdown(
        neg_log_marginal=nlm,
        tweedie_quad=quad,
        trace_prior=tp,
        meas_consistency=mc,
        trace_meas=tm,
        total_full=nlm + quad + tp + mc + tm,
        total_simplified=nlm + quad + mc,
    )


def vml_full(prior, op, y, sigma_y, x, sigma) -> LossBreakdown:
    """All five VML terms for a linear operator (constant excluded)."""
    x = _check(prior, op, y, x, sigma, sigma_y)
    nlm, quad, mc, _ = simplified_terms(prior, linear_map(op), y, sigma_y, x, sigma)
    cov = pr.posterior_cov(prior, x, sigma)
    tp = -float(np.trace(cov)) / (2 * sigma**2)
    tm = float(np.sum(op.gram * cov)) / (2 * sigma_y**2)  # Tr(H Cov H^T) = <H^T H, Cov>
    return _breakdown(nlm, quad, tp, mc, tm)


def vml_simplified(prior, op, y, sigma_y, x, sigma) -> LossBreakdown:
    """Simplified VML; the trace terms and ``total_full`` are left as NaN."""
    x = _check(prior, op, y, x, sigma, sigma_y)
    nlm, quad, mc, _ = simplified_terms(prior, linear_map(op), y, sigma_y, x, sigma)
    return _breakdown(nlm, quad, math.nan, mc, math.nan)


def vml_constant(prior, op, y, sigma_y, sigma) -> float:
    """The dropped constant: log p(y) - n log sigma + m log sigma_y - (n - m)/2 log 2pi."""
    m, n = op.shape
    return (
        pr.log_evidence(prior, op, y, sigma_y)
        - n * math.log(sigma)
        + m * math.log(sigma_y)
        - 0.5 * (n - m) * LOG_2PI
    )


def simplified_gradient(prior, meas: MeasurementMap, y, sigma_y, x, sigma, precondition=None):
    """Gradient of the simplified VML for an arbitrary differentiable forward model.

    ``precondition`` (optional) is applied to both residual directions before
    the Jacobian transpose, giving the preconditioned gradient.
    """
    d = pr.denoiser(prior, x, sigma)
    jac = pr.denoiser_jacobian(prior, x, sigma)
    resid = np.asarray(y, dtype=float) - meas.forward(d)
    meas_dir = meas.pullback(d, resid) / sigma_y**2
    prior_dir = (d - x) / sigma**2
    if precondition is not None:
        meas_dir = precondition(meas_dir)
        prior_dir = precondition(prior_dir)
    g_meas = -(jac.T @ meas_dir)
    g_prior = -(jac.T @ prior_dir)
    return GradientParts(g_meas + g_prior, g_meas, g_prior)


def grad_vml_simplified(prior, op, y, sigma_y, x, sigma) -> GradientParts:
    x = _check(prior, op, y, x, sigma, sigma_y)
    return simplified_gradient(prior, linear_map(op), y, sigma_y, x, sigma)


def grad_vml_preconditioned(prior, op, y, sigma_y, x, sigma) -> GradientParts:
    """The simplified gradient with ``M^{-1}`` inserted before each Jacobian."""
    x = _check(prior, op, y, x, sigma, sigma_y)
    return simplified_gradient(
        prior, linear_map(op), y, sigma_y, x, sigma,
        precondition=lambda g: ops.preconditioner_solve(op, g),
    )


def jacobian_min_eigenvalue(prior, x, sigma) -> float:
    """Smallest eigenvalue of the denoiser Jacobian; warns below 1e-10."""
    lam = float(np.linalg.eigvalsh(pr.denoiser_jacobian(prior, x, sigma))[0])
    if lam < 1e-10:
        warnings.warn(f"denoiser Jacobian is near singular (min eigenvalue {lam:.3g})")
    return lam


def vml_high_remainder(prior, op, sigma_y, x, sigma) -> float:
    """Higher-order terms minus their limit constant -n/2, from the exact Hessian.

    -s^2/2 Tr(Hess) + s^4/(2 sy^2) Tr(H Hess H^T) + s^2/(2 sy^2) Tr(H H^T)
    """
    x = _check(prior, op, None, x, sigma, sigma_y)
    hess = pr.logpdf_hessian(prior, x, sigma)
    s2 = sigma**2
    return (
        -0.5 * s2 * float(np.trace(hess))
        + s2 * s2 / (2 * sigma_y**2) * float(np.sum(op.gram * hess))
        + s2 / (2 * sigma_y**2) * float(np.sum(op.singulars**2))
    )


class LimitProbe(NamedTuple):
    full_shifted: float
    simplified_shifted: float
    target: float


def vml_limit_probe(prior, op, y, sigma_y, x, sigma) -> LimitProbe:
    """Shifted VML and simplified VML against their common small-sigma limit.

    full_shifted = VML + n log sigma, simplified_shifted = VML_S + n log sigma - n/2,
    both with the exact constant restored; target = -log p0(x | y) - n/2 - n/2 log 2pi.
    """
    x = _check(prior, op, y, x, sigma, sigma_y)
    n = prior.dim
    m = op.shape[0]
    bd = vml_full(prior, op, y, sigma_y, x, sigma)
    shift = vml_constant(prior, op, y, sigma_y, sigma) + n * math.log(sigma)
    resid = np.asarray(y, dtype=float) - ops.apply(op, x)
    log_lik = -float(resid @ resid) / (2 * sigma_y**2) - m * (math.log(sigma_y) + 0.5 * LOG_2PI)
    log_post = pr.marginal_logpdf(prior, x, 0.0) + log_lik - pr.log_evidence(prior, op, y, sigma_y)
    return LimitProbe(
        full_shifted=bd.total_full + shift,
        simplified_shifted=bd.total_simplified + shift - 0.5 * n,
        target=-log_post - 0.5 * n - 0.5 * n * LOG_2PI,
    )
