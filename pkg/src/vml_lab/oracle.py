"""Brute-force reference computations.

Nothing here imports the analytic modules it is used to check (prior, loss,
solver, latent): mixture densities are re-derived with ``scipy.stats``, the
conditional sampler draws from the exact joint, and integrals are plain
trapezoid sums on a grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, stats
from scipy.integrate import trapezoid
from scipy.special import logsumexp

MAX_POINTS = 2_000_000


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid over at most two dimensions."""

    lower: Sequence[float]
    upper: Sequence[float]
    points: Sequence[int]

    def __post_init__(self):
        lo, hi, pts = np.atleast_1d(self.lower), np.atleast_1d(self.upper), np.atleast_1d(self.points)
        if not (lo.shape == hi.shape == pts.shape) or lo.size > 2:
            raise ValueError("GridSpec supports one or two dimensions with matching bounds")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo < hi)):
            raise ValueError("grid bounds must be finite with lower < upper")
        if np.any(pts < 16) or np.prod(pts.astype(float)) > MAX_POINTS:
            raise ValueError(f"need >= 16 points per dimension and <= {MAX_POINTS} in total")
        object.__setattr__(self, "lower", tuple(float(v) for v in lo))
        object.__setattr__(self, "upper", tuple(float(v) for v in hi))
        object.__setattr__(self, "points", tuple(int(v) for v in pts))

    @property
    def dim(self) -> int:
        return len(self.points)

    def axes(self):
        return [np.linspace(a, b, p) for a, b, p in zip(self.lower, self.upper, self.points)]

    def mesh(self) -> np.ndarray:
        """All grid points, shape ``(P, dim)``, first axis varying slowest."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1).reshape(-1, self.dim)

    def integrate(self, values: np.ndarray) -> float:
        v = np.asarray(values).reshape(self.points)
        for ax in reversed(self.axes()):
            v = trapezoid(v, ax, axis=-1)
        return float(v)


def gmm_logpdf(weights, means, covariances, points) -> np.ndarray:
    """Mixture log-density evaluated with scipy's multivariate normal."""
    points = np.atleast_2d(points)
    parts = [
        np.log(w) + stats.multivariate_normal(mean=mu, cov=cov).logpdf(points).reshape(-1)
        for w, mu, cov in zip(weights, means, covariances)
        if w > 0
    ]
    return logsumexp(np.stack(parts), axis=0)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KLResult:
    value: float
    captured_mass: float


def kl_numeric(p_logpdf: Callable, q_logpdf: Callable, grid: GridSpec, mass_tol: float = 1e-6) -> KLResult:
    """Trapezoid estimate of KL(p || q) from vectorized log-density callbacks.

    Both callbacks take an array of shape ``(P, dim)``.  Raises if ``p`` has
    more than ``mass_tol`` of its mass outside the grid.
    """
    pts = grid.mesh()
    lp = np.asarray(p_logpdf(pts), dtype=float).reshape(-1)
    lq = np.asarray(q_logpdf(pts), dtype=float).reshape(-1)
    p = np.exp(lp)
    mass = grid.integrate(p)
    if abs(1.0 - mass) > mass_tol:
        raise ValueError(f"grid captures mass {mass:.9f} of p; widen or refine the grid")
    integrand = np.where(p > 0, p * (lp - lq), 0.0)
    return KLResult(grid.integrate(integrand), mass)


def normalized_logpdf_on_grid(log_unnorm: Callable, grid: GridSpec) -> Callable:
    """Normalize an unnormalized log-density by its trapezoid integral on ``grid``."""
    pts = grid.mesh()
    lv = np.asarray(log_unnorm(pts), dtype=float).reshape(-1)
    top = np.max(lv)
    log_z = top + np.log(grid.integrate(np.exp(lv - top)))
    return lambda x: np.asarray(log_unnorm(x), dtype=float).reshape(-1) - log_z


# ---------------------------------------------------------------------------


def default_step(x) -> float:
    return 1e-4 * (1.0 + float(np.max(np.abs(x))))


def finite_diff_grad(f: Callable, x, h: float | None = None) -> np.ndarray:
    """Central differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    h = default_step(x) if h is None else h
    g = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        fp, fm = f(x + e.reshape(x.shape)), f(x - e.reshape(x.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite evaluation along coordinate {i}")
        g[i] = (fp - fm) / (2 * h)
    return g


def finite_diff_jacobian(f: Callable, x, h: float | None = None) -> np.ndarray:
    """Central-difference Jacobian ``J[i, j] = d f_i / d x_j``."""
    x = np.asarray(x, dtype=float)
    h = default_step(x) if h is None else h
    cols = []
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = h
        fp, fm = np.asarray(f(x + e)), np.asarray(f(x - e))
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise ValueError(f"non-finite evaluation along coordinate {j}")
        cols.append((fp - fm) / (2 * h))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------


@dataclass
class MCMoments:
    mean: np.ndarray
    cov: np.ndarray
    stderr: float  # largest per-coordinate standard error of the mean
    samples: np.ndarray


def sample_conditional(weights, means, covariances, x, sigma, num_samples, rng) -> np.ndarray:
    """Exact draws from p(x0 | x_t = x) for a mixture prior and N(x0, sigma^2 I) noise.

    Component ``k`` is picked with probability proportional to
    ``w_k N(x; mu_k, Sigma_k + sigma^2 I)``; given ``k`` the conditional is the
    Gaussian obtained by conditioning the joint of (x0, x_t).
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=float).reshape(-1)
    n = x.size
    logr, post_means, post_chols = [], [], []
    for w, mu, cov in zip(weights, means, covariances):
        mu = np.asarray(mu, dtype=float).reshape(n)
        cov = np.asarray(cov, dtype=float).reshape(n, n)
        marg = cov + sigma**2 * np.eye(n)
        logr.append(np.log(w) + stats.multivariate_normal(mean=mu, cov=marg).logpdf(x))
        gain = np.linalg.solve(marg, cov).T
        post_means.append(mu + gain @ (x - mu))
        pc = cov - gain @ cov
        post_chols.append(np.linalg.cholesky(0.5 * (pc + pc.T)))
    logr = np.array(logr)
    r = np.exp(logr - logsumexp(logr))
    comp = rng.choice(len(r), size=num_samples, p=r / r.sum())
    z = rng.standard_normal((num_samples, n))
    out = np.empty((num_samples, n))
    for k in range(len(r)):
        sel = comp == k
        out[sel] = post_means[k] + z[sel] @ post_chols[k].T
    return out


def mc_conditional_moments(weights, means, covariances, x, sigma, num_samples, rng) -> MCMoments:
    s = sample_conditional(weights, means, covariances, x, sigma, num_samples, rng)
    mean = s.mean(axis=0)
    cov = np.atleast_2d(np.cov(s, rowvar=False))
    stderr = float(np.max(s.std(axis=0, ddof=1)) / np.sqrt(num_samples))
    return MCMoments(mean, cov, stderr, s)


def mc_mean_with_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


# ---------------------------------------------------------------------------


def grid_argmax(f: Callable, grid: GridSpec, vectorized: bool = True) -> np.ndarray:
    """Maximizer of ``f`` over the grid, refined per axis with bounded Brent search.

    Ties go to the first grid point in row-major order; refinement only
    replaces the grid point when it strictly improves ``f``.
    """
    pts = grid.mesh()
    vals = np.asarray(f(pts), dtype=float).reshape(-1) if vectorized else np.array([f(p) for p in pts])
    best = int(np.argmax(vals))
    x = pts[best].copy()
    fx = vals[best]
    steps = [(b - a) / (p - 1) for a, b, p in zip(grid.lower, grid.upper, grid.points)]

    def f1(p):
        return float(np.asarray(f(p[None, :]) if vectorized else f(p)).reshape(-1)[0])

    for _ in range(3):
        for axis, h in enumerate(steps):
            def g(t, axis=axis):
                p = x.copy()
                p[axis] = t
                return -f1(p)

            res = optimize.minimize_scalar(
                g, bracket=None, bounds=(x[axis] - h, x[axis] + h), method="bounded",
                options={"xatol": 1e-13},
            )
            if -res.fun > fx:
                x[axis] = res.x
                fx = -res.fun
    return x
