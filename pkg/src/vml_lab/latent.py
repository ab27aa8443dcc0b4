"""Latent-space variant: the measurement term is routed through a decoder.

The decoders here are synthetic stand-ins for an autoencoder's decoder with
closed-form Jacobians: an affine map ``x = A z + b`` and a smooth nonlinear map
``x = A (c tanh(z / c)) + b``.
"""

from __future__ import annotations

import numpy as np

from . import loss as ls
from . import operator as ops
from . import prior as pr
from .solver import SolverConfig, Trajectory, run_reverse_diffusion


class SyntheticDecoder:
    """Deterministic decoder ``z -> x`` with an exact Jacobian.

    Parameters
    ----------
    kind : {'affine', 'smooth_nonlinear'}
    matrix : array_like, shape (n_x, n_z)
    offset : array_like, shape (n_x,), optional
    scale : float
        Saturation level ``c`` of the elementwise ``c * tanh(z / c)`` squashing
        (smooth_nonlinear only).
    """

    def __init__(self, kind, matrix, offset=None, scale=1.0):
        if kind not in ("affine", "smooth_nonlinear"):
            raise ValueError(f"unknown decoder kind {kind!r}")
        a = np.atleast_2d(np.asarray(matrix, dtype=float))
        b = np.zeros(a.shape[0]) if offset is None else np.asarray(offset, dtype=float)
        if b.shape != (a.shape[0],):
            raise ValueError(f"offset has shape {b.shape}, expected ({a.shape[0]},)")
        if not scale > 0:
            raise ValueError(f"scale must be positive, got {scale}")
        if kind == "affine" and np.linalg.matrix_rank(a) < min(a.shape):
            raise ValueError("affine decoder matrix must have full rank")
        self.kind = kind
        self.matrix = a
        self.offset = b
        self.scale = float(scale)
        self._identity = False

    @classmethod
    def identity(cls, n: int) -> "SyntheticDecoder":
        dec = cls("affine", np.eye(n))
        dec._identity = True
        return dec

    @property
    def latent_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def output_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_identity(self) -> bool:
        return self._identity

    def _squash(self, z):
        return self.scale * np.tanh(z / self.scale)

    def decode(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self._identity:
            return z
        u = z if self.kind == "affine" else self._squash(z)
        return u @ self.matrix.T + self.offset

    def jacobian(self, z) -> np.ndarray:
        if self.kind == "affine":
            return self.matrix.copy()
        return self.matrix * (1.0 / np.cosh(np.asarray(z, dtype=float) / self.scale) ** 2)

    def vjp(self, z, v) -> np.ndarray:
        """``J(z)^T v``."""
        if self._identity:
            return v
        if self.kind == "affine":
            return self.matrix.T @ v
        return (self.matrix.T @ v) / np.cosh(np.asarray(z, dtype=float) / self.scale) ** 2

    def inverse(self, x) -> np.ndarray:
        """Exact inverse of the affine kind (least squares for tall matrices)."""
        if self.kind != "affine":
            raise ValueError("only the affine decoder has a closed-form inverse")
        return np.linalg.lstsq(self.matrix, np.asarray(x, dtype=float) - self.offset, rcond=None)[0]

    def __repr__(self):
        return f"SyntheticDecoder(kind={self.kind!r}, {self.latent_dim} -> {self.output_dim})"


def decoded_map(decoder: SyntheticDecoder, op: ops.LinearOperator) -> ls.MeasurementMap:
    """Forward model ``d -> H decoder(d)`` with its chain-rule pullback."""
    if op.shape[1] != decoder.output_dim:
        raise ValueError(
            f"operator acts on dimension {op.shape[1]}, decoder outputs {decoder.output_dim}"
        )
    return ls.MeasurementMap(
        lambda d: ops.apply(op, decoder.decode(d)),
        lambda d, r: decoder.vjp(d, ops.adjoint(op, r)),
    )


def composed_operator(decoder: SyntheticDecoder, op: ops.LinearOperator):
    """``(H A, y - H b)`` shift for the affine decoder; a plain pixel-space problem."""
    if decoder.kind != "affine":
        raise ValueError("composition is exact only for the affine decoder")
    return ops.LinearOperator.from_matrix(op.matrix @ decoder.matrix), ops.apply(op, decoder.offset)


def _check(prior_z, decoder, z, sigma, sigma_y):
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not sigma_y > 0:
        raise ValueError(f"sigma_y must be positive, got {sigma_y}")
    if decoder.latent_dim != prior_z.dim:
        raise ValueError(f"decoder takes dimension {decoder.latent_dim}, prior has {prior_z.dim}")
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape != (prior_z.dim,):
        raise ValueError(f"z has dimension {z.size}, prior has {prior_z.dim}")
    return z


def latent_vml_simplified(prior_z, decoder, op, y, sigma_y, z, sigma) -> ls.LossBreakdown:
    z = _check(prior_z, decoder, z, sigma, sigma_y)
    nlm, quad, mc, _ = ls.simplified_terms(prior_z, decoded_map(decoder, op), y, sigma_y, z, sigma)
    return ls._breakdown(nlm, quad, float("nan"), mc, float("nan"))


def grad_latent_vml_simplified(prior_z, decoder, op, y, sigma_y, z, sigma) -> ls.GradientParts:
    z = _check(prior_z, decoder, z, sigma, sigma_y)
    return ls.simplified_gradient(prior_z, decoded_map(decoder, op), y, sigma_y, z, sigma)


def latent_trace_meas(prior_z, decoder, op, sigma_y, z, sigma) -> float:
    """Linearized higher-order measurement term Tr{B Cov B^T} / (2 sy^2), B = H A.

    Exact only for the affine decoder, where the linearization is the map itself.
    """
    if decoder.kind != "affine":
        raise ValueError("the linearized trace term is implemented for the affine decoder only")
    z = _check(prior_z, decoder, z, sigma, sigma_y)
    b = op.matrix @ decoder.jacobian(pr.denoiser(prior_z, z, sigma))
    cov = pr.posterior_cov(prior_z, z, sigma)
    return float(np.trace(b @ cov @ b.T)) / (2 * sigma_y**2)


def paste_observed(x, op: ops.LinearOperator, y) -> np.ndarray:
    """Overwrite the observed coordinates of a mask operator with ``y``."""
    if op.kind != "mask" or not op.direct:
        raise ValueError("pasting measurements back needs a mask operator")
    out = np.array(x, dtype=float)
    out[op.params["keep"]] = y
    return out


def latent_solve(prior_z, decoder, op, y, config: SolverConfig, paste: bool = False):
    """Reverse diffusion in latent space; returns ``(trajectory_in_z, decoded_x)``."""
    y = np.asarray(y, dtype=float)
    if y.shape != (op.shape[0],):
        raise ValueError(f"y has shape {y.shape}, operator expects ({op.shape[0]},)")
    meas = decoded_map(decoder, op)
    sy = config.sigma_y
    traj: Trajectory = run_reverse_diffusion(
        prior_z,
        prior_z.dim,
        config,
        lambda z, s: ls.simplified_gradient(prior_z, meas, y, sy, z, s).total,
        lambda z, s: latent_vml_simplified(prior_z, decoder, op, y, sy, z, s),
    )
    x = decoder.decode(traj.final_x)
    if paste:
        x = paste_observed(x, op, y)
    return traj, x
