"""Named verification checks grouped into suites.

Each check builds its own seeded problem instances, compares an analytic
quantity with a brute-force reference from :mod:`vml_lab.oracle`, and reports
the worst measured error against a fixed tolerance.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import latent as lt
from . import loss as ls
from . import operator as ops
from . import oracle as orc
from . import prior as pr
from .schedule import NoiseSchedule
from .solver import SolverConfig, solve


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    passed: bool
    seconds: float = 0.0
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: error={self.error:.3e} tol={self.tolerance:.1e} ({self.seconds:.1f}s) {self.detail}".rstrip()


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


# ---------------------------------------------------------------------------
# instance generators


def random_gmm(rng: np.random.Generator, n: int, k: int | None = None) -> pr.GaussianMixture:
    k = int(rng.integers(1, 4)) if k is None else k
    weights = rng.dirichlet(np.full(k, 2.0))
    means = rng.normal(0.0, 2.0, size=(k, n))
    covs = []
    for _ in range(k):
        a = rng.normal(size=(n, n)) / np.sqrt(n)
        covs.append(0.5 * a @ a.T + rng.uniform(0.2, 1.0) * np.eye(n))
    return pr.GaussianMixture(weights, means, np.array(covs))


def random_point(rng, prior: pr.GaussianMixture, sigma: float) -> np.ndarray:
    return prior.sample(1, rng)[0] + sigma * rng.standard_normal(prior.dim)


def random_sigma(rng) -> float:
    return float(np.exp(rng.uniform(np.log(0.1), np.log(5.0))))


def random_operator(rng, n: int) -> ops.LinearOperator:
    m = int(rng.integers(1, n + 1))
    return ops.LinearOperator.from_matrix(rng.normal(size=(m, n)) / np.sqrt(n))


def identity_instances(count=200, seed=0, dims=(1, 2, 8)):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n = dims[i % len(dims)]
        prior = random_gmm(rng, n)
        sigma = random_sigma(rng)
        out.append((prior, random_point(rng, prior, sigma), sigma))
    return out


# ---------------------------------------------------------------------------
# identities


def check_tweedie(count=200, seed=0) -> list[CheckResult]:
    t0 = time.perf_counter()
    worst_id, worst_fd = 0.0, 0.0
    for prior, x, sigma in identity_instances(count, seed):
        d = pr.denoiser(prior, x, sigma)
        sc = pr.score(prior, x, sigma)
        worst_id = max(worst_id, float(np.linalg.norm(d - (x + sigma**2 * sc))))
        fd = orc.finite_diff_grad(lambda z: pr.marginal_logpdf(prior, z, sigma), x)
        worst_fd = max(worst_fd, rel_err(sc, fd))
    dt = time.perf_counter() - t0
    return [
        CheckResult("tweedie_identity", worst_id, 1e-10, worst_id < 1e-10, dt, f"{count} instances"),
        CheckResult("score_finite_difference", worst_fd, 1e-6, worst_fd < 1e-6, dt, f"{count} instances"),
    ]


def check_covariance(count=200, seed=0) -> list[CheckResult]:
    t0 = time.perf_counter()
    worst, min_eig = 0.0, math.inf
    for prior, x, sigma in identity_instances(count, seed):
        cov = pr.posterior_cov(prior, x, sigma)
        jac = orc.finite_diff_jacobian(lambda z: pr.denoiser(prior, z, sigma), x)
        worst = max(worst, rel_err(cov, sigma**2 * jac))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(cov)[0]))
    dt = time.perf_counter() - t0
    return [
        CheckResult("covariance_identity", worst, 1e-5, worst < 1e-5, dt, f"{count} instances"),
        CheckResult("covariance_psd", max(0.0, -min_eig), 1e-10, min_eig >= -1e-10, dt),
    ]


def check_second_moments(count=20, num_samples=100_000, seed=1, n_sigma=3.0) -> list[CheckResult]:
    """Monte-Carlo second moments against the trace formulas, in standard errors."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst1, worst2 = 0.0, 0.0
    for i in range(count):
        n = (1, 2, 4, 8)[i % 4]
        prior = random_gmm(rng, n)
        sigma = random_sigma(rng)
        x = random_point(rng, prior, sigma)
        h = rng.normal(size=(int(rng.integers(1, n + 1)), n))
        samples = orc.sample_conditional(
            prior.weights, prior.means, prior.covariances, x, sigma, num_samples, rng
        )
        cov = pr.posterior_cov(prior, x, sigma)
        d = pr.denoiser(prior, x, sigma)
        m1, se1 = orc.mc_mean_with_stderr(np.sum(samples**2, axis=1))
        worst1 = max(worst1, abs(m1 - (np.trace(cov) + d @ d)) / se1)
        hs = samples @ h.T
        hd = h @ d
        m2, se2 = orc.mc_mean_with_stderr(np.sum(hs**2, axis=1))
        worst2 = max(worst2, abs(m2 - (np.trace(h @ cov @ h.T) + hd @ hd)) / se2)
    dt = time.perf_counter() - t0
    return [
        CheckResult("second_moment_trace", worst1, n_sigma, worst1 < n_sigma, dt, "in standard errors"),
        CheckResult("projected_second_moment_trace", worst2, n_sigma, worst2 < n_sigma, dt, "in standard errors"),
    ]


def kl_problem(rng):
    """A random 1-D mixture problem with a scalar operator and two query points."""
    prior = random_gmm(rng, 1, k=int(rng.integers(2, 4)))
    op = ops.LinearOperator.from_matrix([[rng.uniform(0.5, 2.0) * rng.choice([-1, 1])]])
    x_true = prior.sample(1, rng)[0]
    sigma_y = rng.uniform(0.3, 1.0)
    y = ops.apply(op, x_true) + sigma_y * rng.standard_normal(1)
    sigma = rng.uniform(0.3, 1.5)
    xa, xb = random_point(rng, prior, sigma), random_point(rng, prior, sigma)
    return prior, op, y, sigma_y, sigma, xa, xb


def numeric_vml(prior, op, y, sigma_y, x, sigma, grid: orc.GridSpec) -> float:
    """KL(p(x0|x_t) || p(x0|y)) by brute-force normalization and trapezoid integration."""
    w, mu, cov = prior.weights, prior.means, prior.covariances
    h = op.matrix
    x = np.asarray(x, dtype=float)

    def log_prior(z):
        return orc.gmm_logpdf(w, mu, cov, z)

    def log_p(z):
        return log_prior(z) - 0.5 * np.sum((z - x) ** 2, axis=1) / sigma**2

    def log_q(z):
        r = y[None, :] - z @ h.T
        return log_prior(z) - 0.5 * np.sum(r**2, axis=1) / sigma_y**2

    return orc.kl_numeric(
        orc.normalized_logpdf_on_grid(log_p, grid), orc.normalized_logpdf_on_grid(log_q, grid), grid
    ).value


def check_kl_closed_form(count=10, seed=2, tol=1e-4) -> list[CheckResult]:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_diff, worst_abs = 0.0, 0.0
    for _ in range(count):
        prior, op, y, sy, sigma, xa, xb = kl_problem(rng)
        lo = float(np.min(prior.means) - 12)
        hi = float(np.max(prior.means) + 12)
        grid = orc.GridSpec([min(lo, xa[0] - 12, xb[0] - 12)], [max(hi, xa[0] + 12, xb[0] + 12)], [40001])
        ka = numeric_vml(prior, op, y, sy, xa, sigma, grid)
        kb = numeric_vml(prior, op, y, sy, xb, sigma, grid)
        fa = ls.vml_full(prior, op, y, sy, xa, sigma).total_full
        fb = ls.vml_full(prior, op, y, sy, xb, sigma).total_full
        worst_diff = max(worst_diff, abs((fa - fb) - (ka - kb)))
        c = ls.vml_constant(prior, op, y, sy, sigma)
        worst_abs = max(worst_abs, abs(fa + c - ka), abs(fb + c - kb))
    dt = time.perf_counter() - t0
    return [
        CheckResult("vml_full_kl_difference", worst_diff, tol, worst_diff < tol, dt, f"{count} 1-D problems"),
        CheckResult("vml_full_kl_absolute", worst_abs, tol, worst_abs < tol, dt, "constant restored"),
    ]


# ---------------------------------------------------------------------------
# gradients


def gradient_instances(count=200, seed=3, dims=(1, 2, 4, 8)):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n = dims[i % len(dims)]
        prior = random_gmm(rng, n)
        op = random_operator(rng, n)
        sigma = random_sigma(rng)
        sigma_y = float(np.exp(rng.uniform(np.log(0.1), np.log(2.0))))
        x = random_point(rng, prior, sigma)
        y = ops.apply(op, prior.sample(1, rng)[0]) + sigma_y * rng.standard_normal(op.shape[0])
        out.append((prior, op, y, sigma_y, x, sigma))
    return out


def check_gradient(count=200, seed=3) -> list[CheckResult]:
    t0 = time.perf_counter()
    worst = 0.0
    for prior, op, y, sy, x, sigma in gradient_instances(count, seed):
        g = ls.grad_vml_simplified(prior, op, y, sy, x, sigma).total
        fd = orc.finite_diff_grad(lambda z: ls.vml_simplified(prior, op, y, sy, z, sigma).total_simplified, x)
        worst = max(worst, rel_err(g, fd))
    dt = time.perf_counter() - t0
    return [CheckResult("simplified_gradient_fd", worst, 1e-5, worst < 1e-5, dt, f"{count} instances")]


def check_preconditioning(count=50, seed=4) -> list[CheckResult]:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    mask_equal = True
    for i in range(count):
        n = (2, 4, 8, 16)[i % 4]
        prior = random_gmm(rng, n)
        keep = np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
        op = ops.LinearOperator.mask(n, keep)
        sigma = random_sigma(rng)
        x = random_point(rng, prior, sigma)
        y = rng.normal(size=len(keep))
        a = ls.grad_vml_simplified(prior, op, y, 0.3, x, sigma).total
        b = ls.grad_vml_preconditioned(prior, op, y, 0.3, x, sigma).total
        mask_equal &= bool(np.array_equal(a, b))
    worst = 0.0
    for i in range(count):
        n = (2, 4, 8, 16, 32)[i % 5]
        prior = random_gmm(rng, n)
        op = random_operator(rng, n)
        sigma = random_sigma(rng)
        sy = 0.5
        x = random_point(rng, prior, sigma)
        y = rng.normal(size=op.shape[0])
        jac = pr.denoiser_jacobian(prior, x, sigma)
        m_inv = np.linalg.inv(ops.preconditioner_matrix(op))
        p = jac @ m_inv @ np.linalg.inv(jac)
        expected = p @ ls.grad_vml_simplified(prior, op, y, sy, x, sigma).total
        got = ls.grad_vml_preconditioned(prior, op, y, sy, x, sigma).total
        worst = max(worst, rel_err(got, expected))
    dt = time.perf_counter() - t0
    return [
        CheckResult("preconditioned_mask_bitwise", 0.0 if mask_equal else 1.0, 0.0, mask_equal, dt),
        CheckResult("preconditioned_explicit_P", worst, 1e-8, worst < 1e-8, dt, "dense n <= 32"),
    ]


def latent_instances(count=60, seed=5):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        nz = (1, 2, 3)[i % 3]
        nx = nz + int(rng.integers(0, 3))
        prior = random_gmm(rng, nz)
        kind = "affine" if i % 2 == 0 else "smooth_nonlinear"
        a = rng.normal(size=(nx, nz))
        dec = lt.SyntheticDecoder(kind, a, rng.normal(size=nx), scale=float(rng.uniform(1.0, 3.0)))
        op = random_operator(rng, nx)
        sigma = random_sigma(rng)
        sy = float(rng.uniform(0.3, 1.5))
        z = random_point(rng, prior, sigma)
        y = rng.normal(size=op.shape[0])
        out.append((prior, dec, op, y, sy, z, sigma))
    return out


def check_latent_gradient(count=60, seed=5) -> list[CheckResult]:
    t0 = time.perf_counter()
    worst = 0.0
    for prior, dec, op, y, sy, z, sigma in latent_instances(count, seed):
        g = lt.grad_latent_vml_simplified(prior, dec, op, y, sy, z, sigma).total
        fd = orc.finite_diff_grad(
            lambda v: lt.latent_vml_simplified(prior, dec, op, y, sy, v, sigma).total_simplified, z
        )
        worst = max(worst, rel_err(g, fd))
    dt = time.perf_counter() - t0
    return [CheckResult("latent_gradient_fd", worst, 1e-5, worst < 1e-5, dt, f"{count} instances")]


# ---------------------------------------------------------------------------
# limits

LIMIT_SIGMAS = (1.0, 0.3, 0.1, 0.03, 0.01, 0.003)


def limit_problem(seed=6):
    """Fixed 1-D bimodal problem with a bounded sample of query points."""
    prior = pr.GaussianMixture.isotropic([0.4, 0.6], [[-2.5], [2.5]], [0.8, 1.0])
    op = ops.LinearOperator.from_matrix([[1.0]])
    points = np.linspace(-3.0, 3.0, 13)[:, None]
    return prior, op, np.array([2.0]), 0.5, points


def check_remainder_decay(sigmas=LIMIT_SIGMAS) -> list[CheckResult]:
    t0 = time.perf_counter()
    prior, op, _, sy, points = limit_problem()
    sups = [max(abs(ls.vml_high_remainder(prior, op, sy, x, s)) for x in points) for s in sigmas]
    monotone = all(b < a for a, b in zip(sups, sups[1:]))
    dt = time.perf_counter() - t0
    return [
        CheckResult("remainder_monotone_decay", 0.0 if monotone else 1.0, 0.0, monotone, dt,
                    "sup |VML_High - C_High| = " + ", ".join(f"{v:.2e}" for v in sups)),
        CheckResult("remainder_final_level", sups[-1], 1e-3, sups[-1] < 1e-3, dt),
    ]


def check_limit_convergence(sigma=1e-3) -> list[CheckResult]:
    t0 = time.perf_counter()
    prior, op, y, sy, points = limit_problem()
    full = simp = mutual = 0.0
    for x in points:
        probe = ls.vml_limit_probe(prior, op, y, sy, x, sigma)
        full = max(full, abs(probe.full_shifted - probe.target))
        simp = max(simp, abs(probe.simplified_shifted - probe.target))
        mutual = max(mutual, abs(probe.full_shifted - probe.simplified_shifted))
    dt = time.perf_counter() - t0
    return [
        CheckResult("full_vml_limit", full, 1e-2, full < 1e-2, dt),
        CheckResult("simplified_vml_limit", simp, 1e-2, simp < 1e-2, dt),
        CheckResult("full_minus_simplified", mutual, 1e-3, mutual < 1e-3, dt),
    ]


# ---------------------------------------------------------------------------
# end to end


def conjugate_problem():
    mu, s2, sigma_y, y = 1.0, 1.0, 0.5, 2.0
    prior = pr.GaussianMixture([1.0], [[mu]], [[[s2]]])
    op = ops.LinearOperator.identity(1)
    expected = (s2 * y + sigma_y**2 * mu) / (s2 + sigma_y**2)
    return prior, op, np.array([y]), sigma_y, expected


def bimodal_problem():
    prior = pr.GaussianMixture.isotropic([0.5, 0.5], [[-2.5], [2.5]], [1.0, 1.0])
    return prior, ops.LinearOperator.identity(1), np.array([2.5]), 1e-3


def check_solver(num_seeds=100) -> list[CheckResult]:
    t0 = time.perf_counter()
    prior, op, y, sy, expected = conjugate_problem()
    cfg = SolverConfig(NoiseSchedule(0.002, 140.0, 7.0, 20), num_inner=50, gamma0=1.0, sigma_y=sy, seed=0)
    err = abs(solve(prior, op, y, cfg).final_x[0] - expected)
    prior, op, y, sy = bimodal_problem()
    mode = pr.map_estimate(pr.measurement_posterior(prior, op, y, sy)).x
    hits = 0
    for seed in range(num_seeds):
        c = SolverConfig(NoiseSchedule(), num_inner=50, gamma0=1.0, sigma_y=sy, seed=seed)
        hits += abs(solve(prior, op, y, c).final_x[0] - mode[0]) < 0.05
    need = math.ceil(0.95 * num_seeds)
    dt = time.perf_counter() - t0
    return [
        CheckResult("solver_conjugate_map", float(err), 1e-3, err < 1e-3, dt),
        CheckResult("solver_bimodal_mode_rate", float(num_seeds - hits), float(num_seeds - need),
                    hits >= need, dt, f"{hits}/{num_seeds} seeds within 0.05"),
    ]


def affine_latent_problem():
    a = np.array([[1.5, 0.3], [-0.4, 0.8]])
    b = np.array([0.5, -1.0])
    dec = lt.SyntheticDecoder("affine", a, b)
    mu_z = np.array([0.3, -0.2])
    cov_z = np.array([[1.0, 0.3], [0.3, 0.6]])
    prior = pr.GaussianMixture([1.0], [mu_z], [cov_z])
    op = ops.LinearOperator.identity(2)
    y = np.array([1.2, -0.4])
    sigma_y = 0.4
    # pushforward prior N(A mu + b, A Sigma A^T) conditioned on y = x + noise
    mu_x = a @ mu_z + b
    cov_x = a @ cov_z @ a.T
    expected = mu_x + cov_x @ np.linalg.solve(cov_x + sigma_y**2 * np.eye(2), y - mu_x)
    return prior, dec, op, y, sigma_y, expected


def check_latent_solver() -> list[CheckResult]:
    t0 = time.perf_counter()
    prior, op, y, sy, _ = conjugate_problem()
    cfg = SolverConfig(NoiseSchedule(), num_inner=50, gamma0=1.0, sigma_y=sy, seed=7)
    plain = solve(prior, op, y, cfg)
    traj, x = lt.latent_solve(prior, lt.SyntheticDecoder.identity(1), op, y, cfg)
    same = np.array_equal(plain.final_x, traj.final_x) and all(
        np.array_equal(a.x_after_opt, b.x_after_opt) for a, b in zip(plain.steps, traj.steps)
    )
    prior, dec, op, y, sy, expected = affine_latent_problem()
    # the step gamma0 * sy^2 is stable only for gamma0 * ||H A||^2 < 2
    cfg = SolverConfig(NoiseSchedule(), num_inner=50, gamma0=0.5, sigma_y=sy, seed=0)
    _, x = lt.latent_solve(prior, dec, op, y, cfg)
    err = float(np.max(np.abs(x - expected)))
    dt = time.perf_counter() - t0
    return [
        CheckResult("latent_identity_bitwise", 0.0 if same else 1.0, 0.0, same, dt),
        CheckResult("latent_affine_pushforward_map", err, 1e-2, err < 1e-2, dt),
    ]


SUITES: dict[str, list[Callable[[], list[CheckResult]]]] = {
    "identities": [check_tweedie, check_covariance, check_second_moments, check_kl_closed_form],
    "gradients": [check_gradient, check_preconditioning, check_latent_gradient],
    "limits": [check_remainder_decay, check_limit_convergence],
    "endtoend": [check_solver, check_latent_solver],
}


def suite_checks(suite: str) -> list[Callable[[], list[CheckResult]]]:
    if suite == "all":
        return [c for name in ("identities", "gradients", "limits", "endtoend") for c in SUITES[name]]
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {sorted(SUITES) + ['all']}")
    return list(SUITES[suite])


def _run_one(check):
    return check()


def run_suite(suite: str, workers: int = 1) -> list[CheckResult]:
    checks = suite_checks(suite)
    if workers <= 1:
        results = [_run_one(c) for c in checks]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, checks))
    return [r for group in results for r in group]
