import numpy as np
import pytest

from vml_lab import prior as pr
from vml_lab.operator import LinearOperator
from vml_lab.schedule import NoiseSchedule
from vml_lab.solver import DivergenceError, SolverConfig, renoise, solve


def conj():
    return pr.GaussianMixture([1.0], [[1.0]], [[[1.0]]]), LinearOperator.identity(1), np.array([2.0])


def test_config_floors_sigma_y_and_validates():
    cfg = SolverConfig(sigma_y=0.0)
    assert cfg.sigma_y == 1e-9
    assert cfg.learning_rate == pytest.approx(1e-18)
    for bad in (dict(num_inner=0), dict(gamma0=-1.0), dict(variant="nope"), dict(sigma_y=-1.0)):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


def test_conjugate_map_recovered():
    prior, op, y = conj()
    traj = solve(prior, op, y, SolverConfig(sigma_y=0.5))
    assert traj.final_x[0] == pytest.approx(1.8, abs=1e-3)
    assert len(traj.steps) == 20
    assert traj.steps[0].sigma == 140.0


def test_same_seed_is_bitwise_reproducible():
    prior, op, y = conj()
    a = solve(prior, op, y, SolverConfig(sigma_y=0.5, seed=3))
    b = solve(prior, op, y, SolverConfig(sigma_y=0.5, seed=3))
    assert np.array_equal(a.final_x, b.final_x)


def test_zero_operator_gives_seed_diversity():
    prior = pr.GaussianMixture.isotropic([0.5, 0.5], [[-3.0], [3.0]], [1.0, 1.0])
    op = LinearOperator.zero(1, 1)
    finals = [solve(prior, op, np.zeros(1), SolverConfig(sigma_y=1.0, seed=s)).final_x[0] for s in range(20)]
    assert min(finals) < 0 < max(finals)


def test_record_every_thins_but_keeps_last():
    prior, op, y = conj()
    traj = solve(prior, op, y, SolverConfig(sigma_y=0.5, record_every=7))
    assert [r.step for r in traj.steps] == [0, 7, 14, 19]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_location():
    prior, op, y = conj()
    with pytest.raises(DivergenceError) as info:
        solve(prior, op, y, SolverConfig(sigma_y=1.0, gamma0=1e200))
    assert info.value.step == 0


def test_renoise_last_step_returns_denoiser(rng):
    prior, _, _ = conj()
    x = np.array([0.4])
    assert np.array_equal(renoise(x, 0.0, prior, 0.1, rng), pr.denoiser(prior, x, 0.1))
    with pytest.raises(ValueError):
        renoise(x, 1.0, prior, 0.5, rng)


def test_preconditioned_variant_on_dense_operator():
    prior = pr.GaussianMixture([1.0], [[0.0, 0.0]], [np.eye(2)])
    op = LinearOperator.from_matrix([[1.0, 0.0], [0.0, 0.5]])
    y = np.array([1.0, 1.0])
    sy = 0.5
    post = pr.measurement_posterior(prior, op, y, sy)
    cfg = SolverConfig(NoiseSchedule(), sigma_y=sy, variant="preconditioned", gamma0=0.5)
    assert np.allclose(solve(prior, op, y, cfg).final_x, post.means[0], atol=1e-3)


def test_solve_rejects_mismatched_inputs():
    prior, op, _ = conj()
    with pytest.raises(ValueError):
        solve(prior, op, np.zeros(2), SolverConfig())
    with pytest.raises(ValueError):
        solve(prior, LinearOperator.identity(2), np.zeros(2), SolverConfig())
