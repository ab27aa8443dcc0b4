"""Analytic Gaussian-mixture prior and its exact diffusion quantities.

Every quantity here is closed form: the noisy marginal p(x_t) is the prior
convolved with N(0, sigma^2 I), which for a mixture of Gaussians is again a
mixture with covariances Sigma_k + sigma^2 I.  Covariances are kept as cached
eigendecompositions so that every sigma in [0, inf) is evaluated without
refactorizing and without cancellation at either end of the noise range.

Functions accept a single point of shape ``(n,)`` or a batch ``(B, n)``
where noted.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

LOG_2PI = float(np.log(2.0 * np.pi))

# dense analytics are cubic in n; every acceptance test stays far below this
MAX_DIM = 64


class GaussianMixture:
    """Mixture of ``K`` full-covariance Gaussians in ``n`` dimensions.

    Parameters
    ----------
    weights : array_like, shape (K,)
        Mixture weights; nonnegative, summing to one within 1e-12.
    means : array_like, shape (K, n)
    covariances : array_like, shape (K, n, n)
        Symmetric positive-definite matrices.
    """

    def __init__(self, weights, means, covariances):
        weights = np.atleast_1d(np.asarray(weights, dtype=float))
        means = np.asarray(means, dtype=float)
        covs = np.asarray(covariances, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        if covs.ndim == 1:
            covs = covs[:, None, None]
        k, n = means.shape
        if weights.shape != (k,):
            raise ValueError(f"weights has shape {weights.shape}, expected ({k},)")
        if covs.shape != (k, n, n):
            raise ValueError(f"covariances has shape {covs.shape}, expected ({k}, {n}, {n})")
        if n > MAX_DIM:
            raise ValueError(f"dimension {n} exceeds the dense-analytics cap of {MAX_DIM}")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if not np.all(np.isfinite(means)) or not np.all(np.isfinite(covs)):
            raise ValueError("means and covariances must be finite")
        asym = np.max(np.abs(covs - np.swapaxes(covs, 1, 2)))
        if asym > 1e-12:
            raise ValueError(f"covariances are not symmetric (max asymmetry {asym:.3g})")
        covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
        evals, evecs = np.linalg.eigh(covs)
        if np.any(evals <= 0):
            raise ValueError("covariances must be positive definite")
        self.weights = weights
        self.means = means
        self.covariances = covs
        self._evals = evals  # (K, n)
        self._evecs = evecs  # (K, n, n), columns are eigenvectors
        with np.errstate(divide="ignore"):
            self._log_weights = np.log(weights)
        for arr in (self.weights, self.means, self.covariances, self._evals, self._evecs):
            arr.flags.writeable = False

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def isotropic(cls, weights, means, variances):
        """Mixture with covariances ``variances[k] * I``."""
        means = np.asarray(means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        n = means.shape[1]
        variances = np.broadcast_to(np.asarray(variances, dtype=float), (means.shape[0],))
        return cls(weights, means, variances[:, None, None] * np.eye(n))

    def sample(self, num: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.n_components, size=num, p=self.weights)
        z = rng.standard_normal((num, self.dim))
        scale = self._evecs * np.sqrt(self._evals)[:, None, :]
        return self.means[comp] + np.einsum("bij,bj->bi", scale[comp], z)

    def __repr__(self):
        return f"GaussianMixture(n_components={self.n_components}, dim={self.dim})"


class PosteriorGMM(GaussianMixture):
    """Exact measurement posterior p(x0 | y); a mixture carrying its evidence."""

    def __init__(self, weights, means, covariances, log_evidence: float):
        super().__init__(weights, means, covariances)
        self.log_evidence = float(log_evidence)


# ---------------------------------------------------------------------------
# per-component statistics of the noisy marginal


@dataclass
class _Stats:
    log_component: np.ndarray  # (B, K) log w_k N(x; mu_k, Sigma_k + s^2 I)
    resp: np.ndarray  # (B, K)
    coords: np.ndarray  # (B, K, n) eigen-coordinates of x - mu_k
    inv_var: np.ndarray  # (K, n) 1 / (lambda + s^2)
    log_marginal: np.ndarray = field(default=None)  # (B,)


def _as_batch(prior: GaussianMixture, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    if prior.dim == 1 and x.ndim == 1 and x.shape[0] != 1:
        # a 1-D prior accepts a flat array of scalar points
        x = x[:, None]
        single = False
    xb = np.atleast_2d(x) if x.ndim <= 1 else x
    if x.ndim == 0:
        xb = x.reshape(1, 1)
    if xb.shape[-1] != prior.dim:
        raise ValueError(f"point has dimension {xb.shape[-1]}, prior has dimension {prior.dim}")
    return xb, single


def _stats(prior: GaussianMixture, xb: np.ndarray, sigma: float) -> _Stats:
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    var = prior._evals + sigma**2  # (K, n)
    diff = xb[:, None, :] - prior.means[None, :, :]  # (B, K, n)
    coords = np.einsum("kji,bkj->bki", prior._evecs, diff)
    maha = np.sum(coords**2 / var[None], axis=-1)
    logdet = np.sum(np.log(var), axis=-1)
    log_comp = prior._log_weights[None] - 0.5 * (maha + logdet[None] + prior.dim * LOG_2PI)
    log_marg = logsumexp(log_comp, axis=1)
    # max-subtracted normalization keeps tiny-sigma responsibilities finite
    resp = np.exp(log_comp - log_marg[:, None])
    return _Stats(log_comp, resp, coords, 1.0 / var, log_marg)


def _component_scores(prior, st: _Stats) -> np.ndarray:
    """-(Sigma_k + s^2 I)^{-1} (x - mu_k), shape (B, K, n)."""
    return -np.einsum("kij,bkj->bki", prior._evecs, st.coords * st.inv_var[None])


def _out(arr, single):
    return arr[0] if single else arr


def marginal_logpdf(prior: GaussianMixture, x, sigma: float):
    """log p_sigma(x) = log sum_k w_k N(x; mu_k, Sigma_k + sigma^2 I)."""
    xb, single = _as_batch(prior, x)
    st = _stats(prior, xb, sigma)
    return float(st.log_marginal[0]) if single else st.log_marginal


def responsibilities(prior: GaussianMixture, x, sigma: float):
    xb, single = _as_batch(prior, x)
    return _out(_stats(prior, xb, sigma).resp, single)


def score(prior: GaussianMixture, x, sigma: float):
    """Gradient of :func:`marginal_logpdf` in ``x``."""
    xb, single = _as_batch(prior, x)
    st = _stats(prior, xb, sigma)
    s = np.einsum("bk,bki->bi", st.resp, _component_scores(prior, st))
    return _out(s, single)


def _component_means(prior, st: _Stats, sigma: float) -> np.ndarray:
    # mu_k + Sigma_k (Sigma_k + s^2 I)^{-1} (x - mu_k), evaluated in eigen-coordinates
    shrink = prior._evals * st.inv_var  # (K, n)
    return prior.means[None] + np.einsum("kij,bkj->bki", prior._evecs, st.coords * shrink[None])


def denoiser(prior: GaussianMixture, x, sigma: float):
    """Posterior mean E[x0 | x_t = x]; exactly ``x`` when ``sigma == 0``."""
    xb, single = _as_batch(prior, x)
    if sigma == 0:
        return _out(xb.copy(), single)
    st = _stats(prior, xb, sigma)
    d = np.einsum("bk,bki->bi", st.resp, _component_means(prior, st, sigma))
    return _out(d, single)


def _single_point(prior, x, sigma, what):
    if sigma <= 0:
        raise ValueError(
            f"{what} needs sigma > 0 (at sigma = 0 the conditional covariance is the zero matrix)"
        )
    xb, single = _as_batch(prior, x)
    if not single:
        raise ValueError(f"{what} takes a single point")
    return _stats(prior, xb, sigma)


def denoiser_jacobian(prior: GaussianMixture, x, sigma: float) -> np.ndarray:
    """dD/dx = Cov[x0 | x_t] / sigma^2, symmetric ``(n, n)``.

    Assembled as sum_k r_k Sigma_k (Sigma_k + s^2 I)^{-1}
    + s^2 sum_k r_k (s_k - s)(s_k - s)^T with s_k the component scores.
    """
    st = _single_point(prior, x, sigma, "denoiser_jacobian")
    r = st.resp[0]
    shrink = prior._evals * st.inv_var
    within = np.einsum("k,kij,kj,klj->il", r, prior._evecs, shrink, prior._evecs)
    sk = _component_scores(prior, st)[0]
    dev = sk - r @ sk
    between = np.einsum("k,ki,kj->ij", r, dev, dev)
    jac = within + sigma**2 * between
    return 0.5 * (jac + jac.T)


def posterior_cov(prior: GaussianMixture, x, sigma: float) -> np.ndarray:
    """Cov[x0 | x_t = x]: within-component plus between-component spread."""
    st = _single_point(prior, x, sigma, "posterior_cov")
    r = st.resp[0]
    post_var = sigma**2 * prior._evals * st.inv_var  # eigenvalues of each conditional covariance
    within = np.einsum("k,kij,kj,klj->il", r, prior._evecs, post_var, prior._evecs)
    mk = _component_means(prior, st, sigma)[0]
    dev = mk - r @ mk
    cov = within + np.einsum("k,ki,kj->ij", r, dev, dev)
    return 0.5 * (cov + cov.T)


def logpdf_hessian(prior: GaussianMixture, x, sigma: float) -> np.ndarray:
    """Exact Hessian of log p_sigma at ``x``.

    Uses the mixture identity -sum_k r_k A_k^{-1} + sum_k r_k (s_k - s)(s_k - s)^T,
    which stays accurate as sigma -> 0 (unlike (J - I) / sigma^2).
    """
    xb, single = _as_batch(prior, x)
    if not single:
        raise ValueError("logpdf_hessian takes a single point")
    st = _stats(prior, xb, sigma)
    r = st.resp[0]
    prec = np.einsum("k,kij,kj,klj->il", r, prior._evecs, st.inv_var, prior._evecs)
    sk = _component_scores(prior, st)[0]
    dev = sk - r @ sk
    hess = -prec + np.einsum("k,ki,kj->ij", r, dev, dev)
    return 0.5 * (hess + hess.T)


def conditional_mixture(prior: GaussianMixture, x, sigma: float) -> GaussianMixture:
    """p(x0 | x_t = x) as an explicit mixture (responsibility-weighted components)."""
    st = _single_point(prior, x, sigma, "conditional_mixture")
    r = st.resp[0]
    mk = _component_means(prior, st, sigma)[0]
    post_var = sigma**2 * prior._evals * st.inv_var
    covs = np.einsum("kij,kj,klj->kil", prior._evecs, post_var, prior._evecs)
    covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
    r = r / r.sum()
    return GaussianMixture(r, mk, covs)


# ---------------------------------------------------------------------------
# measurement posterior


def _observed_frame(op, y, sigma_y):
    """Rotate ``y = Hx + noise`` into the right-singular frame of H.

    Returns the rank-r observation ``G x + e`` with ``G = V_r^T`` orthonormal,
    per-row noise variances ``sigma_y^2 / s_i^2``, the whitened data, and the
    x-independent log-likelihood contribution of the rows H cannot see.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (op.shape[0],):
        raise ValueError(f"y has shape {y.shape}, operator expects ({op.shape[0]},)")
    s = op.singulars
    nz = s > 0
    r = int(np.count_nonzero(nz))
    yu = op.U.T @ y
    g = op.V[:, : len(s)][:, nz].T  # (r, n)
    data = yu[: len(s)][nz] / s[nz]
    noise_var = sigma_y**2 / s[nz] ** 2
    null = np.concatenate([yu[: len(s)][~nz], yu[len(s):]])
    log_null = float(
        -0.5 * np.sum(null**2) / sigma_y**2 - null.size * (np.log(sigma_y) + 0.5 * LOG_2PI)
    )
    log_jac = -float(np.sum(np.log(s[nz])))
    return g, data, noise_var, log_null + log_jac, r


def _component_evidence(prior, g, data, noise_var):
    """Per-component log N(data; G mu_k, G Sigma_k G^T + diag(noise_var)) and gains."""
    k = prior.n_components
    logev = np.empty(k)
    gains = []
    innovations = []
    for c in range(k):
        cov = prior.covariances[c]
        s_mat = g @ cov @ g.T + np.diag(noise_var)
        chol = np.linalg.cholesky(s_mat)
        innov = data - g @ prior.means[c]
        w = np.linalg.solve(chol, innov)
        logev[c] = -0.5 * (w @ w) - np.sum(np.log(np.diag(chol))) - 0.5 * len(data) * LOG_2PI
        gain = np.linalg.solve(chol.T, np.linalg.solve(chol, g @ cov)).T  # Sigma G^T S^{-1}
        gains.append(gain)
        innovations.append(innov)
    return logev, gains, innovations


def log_evidence(prior: GaussianMixture, op, y, sigma_y: float) -> float:
    """log p(y) with p(y | x0) = N(H x0, sigma_y^2 I)."""
    if not sigma_y > 0:
        raise ValueError(f"sigma_y must be positive, got {sigma_y}")
    if op.shape[1] != prior.dim:
        raise ValueError(f"operator acts on dimension {op.shape[1]}, prior has {prior.dim}")
    g, data, noise_var, const, _ = _observed_frame(op, y, sigma_y)
    if len(data) == 0:
        return const
    logev, _, _ = _component_evidence(prior, g, data, noise_var)
    return float(logsumexp(prior._log_weights + logev) + const)


def measurement_posterior(prior: GaussianMixture, op, y, sigma_y: float) -> PosteriorGMM:
    """Exact p(x0 | y) for a mixture prior and a linear-Gaussian likelihood.

    Each component is conditioned with the Joseph-form covariance update
    (positive semidefinite by construction) and reweighted by its evidence.
    Tiny ``sigma_y`` makes the observed directions nearly degenerate; if they
    fall below eigenvalue resolution a ``ValueError`` is raised.
    """
    if not sigma_y > 0:
        raise ValueError(f"sigma_y must be positive, got {sigma_y}")
    if op.shape[1] != prior.dim:
        raise ValueError(f"operator acts on dimension {op.shape[1]}, prior has {prior.dim}")
    g, data, noise_var, const, r = _observed_frame(op, y, sigma_y)
    if r == 0:
        return PosteriorGMM(prior.weights, prior.means, prior.covariances, const)
    logev, gains, innovations = _component_evidence(prior, g, data, noise_var)
    logw = prior._log_weights + logev
    total = logsumexp(logw)
    weights = np.exp(logw - total)
    weights = weights / weights.sum()
    n = prior.dim
    means = np.empty_like(prior.means)
    covs = np.empty_like(prior.covariances)
    for c in range(prior.n_components):
        kg = gains[c]
        means[c] = prior.means[c] + kg @ innovations[c]
        a = np.eye(n) - kg @ g
        cov = a @ prior.covariances[c] @ a.T + (kg * noise_var) @ kg.T
        covs[c] = 0.5 * (cov + cov.T)
    try:
        return PosteriorGMM(weights, means, covs, float(total + const))
    except ValueError as exc:
        raise ValueError(
            f"posterior covariance is numerically singular at sigma_y={sigma_y:g}; "
            "use a larger sigma_y for exact posterior analytics"
        ) from exc


# ---------------------------------------------------------------------------
# mode search


@dataclass
class MapEstimate:
    x: np.ndarray
    log_density: float
    converged: bool
    starts_tried: int


def _fixed_point_mode(prior, x, max_iter=2000, tol=1e-13):
    # x <- (sum r_k P_k)^{-1} sum r_k P_k mu_k never decreases the mixture density
    prec = np.einsum("kij,kj,klj->kil", prior._evecs, 1.0 / prior._evals, prior._evecs)
    pm = np.einsum("kij,kj->ki", prec, prior.means)
    for it in range(max_iter):
        r = responsibilities(prior, x, 0.0)
        x_new = np.linalg.solve(np.einsum("k,kij->ij", r, prec), r @ pm)
        if np.max(np.abs(x_new - x)) <= tol * (1 + np.max(np.abs(x))):
            return x_new, True
        x = x_new
    return x, False


def _newton_polish(prior, x, max_iter=50):
    f = marginal_logpdf(prior, x, 0.0)
    for _ in range(max_iter):
        g = score(prior, x, 0.0)
        h = logpdf_hessian(prior, x, 0.0)
        try:
            step = -np.linalg.solve(h, g)
            if g @ step <= 0:  # not an ascent direction
                step = g
        except np.linalg.LinAlgError:
            step = g
        t = 1.0
        while t > 1e-12:
            cand = x + t * step
            fc = marginal_logpdf(prior, cand, 0.0)
            if fc >= f:
                break
            t *= 0.5
        else:
            return x, True
        moved = np.max(np.abs(cand - x))
        x, f = cand, fc
        if moved <= 1e-14 * (1 + np.max(np.abs(x))):
            return x, True
    return x, np.linalg.norm(score(prior, x, 0.0)) < 1e-8


def _grid_candidates(prior, points_per_dim):
    std = np.sqrt(np.max(prior._evals, axis=1))
    lo = np.min(prior.means - 6 * std[:, None], axis=0)
    hi = np.max(prior.means + 6 * std[:, None], axis=0)
    axes = [np.linspace(a, b, points_per_dim) for a, b in zip(lo, hi)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, prior.dim)
    vals = marginal_logpdf(prior, mesh, 0.0)
    # local maxima of the scan seed the ascent alongside the component means
    shape = tuple(len(a) for a in axes)
    v = vals.reshape(shape)
    padded = np.pad(v, 1, constant_values=-np.inf)
    is_max = np.ones(shape, dtype=bool)
    for axis in range(prior.dim):
        for shift in (-1, 1):
            neighbour = np.roll(padded, shift, axis=axis)[tuple(slice(1, -1) for _ in shape)]
            is_max &= v >= neighbour
    return mesh[is_max.ravel()]


def map_estimate(posterior: GaussianMixture, starts=None) -> MapEstimate:
    """Highest mode of a mixture density found by multi-start ascent.

    Starts are the supplied points plus every component mean (the only
    candidate modes up to merging).  Each start runs the monotone fixed-point
    iteration, then Newton steps with backtracking.  In one or two dimensions a
    dense scan contributes its local maxima as extra starts.
    """
    cand = [np.asarray(s, dtype=float).reshape(posterior.dim) for s in (starts or [])]
    cand.extend(posterior.means)
    if posterior.dim <= 2:
        cand.extend(_grid_candidates(posterior, 4001 if posterior.dim == 1 else 301))
    best = None
    for s in cand:
        x, ok1 = _fixed_point_mode(posterior, s.copy())
        x, ok2 = _newton_polish(posterior, x)
        f = marginal_logpdf(posterior, x, 0.0)
        if best is None or f > best.log_density:
            best = MapEstimate(x, f, ok1 and ok2, len(cand))
    if not best.converged:
        warnings.warn("map_estimate: best mode did not meet the convergence tolerance")
    return best
