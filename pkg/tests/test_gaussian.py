import math

import numpy as np
import pytest

from catcma.gaussian import (
    GaussianState,
    RankedSteps,
    StateCorruptionError,
    check_gaussian_state,
    clamp_step_size,
    expected_norm,
    inv_sqrt,
    sample_continuous,
    update_covariance,
    update_evolution_paths,
    update_mean,
    update_step_size,
)
from catcma.hyperparams import ProblemDims, default_hyperparameters


def _hp(**overrides):
    hp = default_hyperparameters(ProblemDims.uniform(2, 2, 3))
    return type(hp)(**{**hp.__dict__, **overrides})


def test_sampling_mean_within_standard_error():
    rng = np.random.default_rng(3)
    state = GaussianState.initial(np.zeros(3))
    _, xs = sample_continuous(state, 100_000, rng)
    assert np.all(np.abs(xs.mean(axis=0)) <= 4 * math.sqrt(1 / 100_000))


def test_sampling_affine_identity():
    state = GaussianState.initial([5.0, 5.0], sigma=2.0)
    ys, xs = sample_continuous(state, 50, np.random.default_rng(0))
    np.testing.assert_array_equal(xs, state.mean + 2.0 * ys)


def test_sampling_deterministic():
    state = GaussianState.initial(np.zeros(4))
    a = sample_continuous(state, 10, np.random.default_rng(9))[1]
    b = sample_continuous(state, 10, np.random.default_rng(9))[1]
    np.testing.assert_array_equal(a, b)


def test_sampling_covariance():
    cov = np.array([[4.0, 1.2], [1.2, 1.0]])
    state = GaussianState.initial(np.zeros(2), cov=cov)
    ys, _ = sample_continuous(state, 200_000, np.random.default_rng(1))
    np.testing.assert_allclose(np.cov(ys.T), cov, atol=0.05)


def test_update_mean_examples():
    hp = _hp()
    state = GaussianState.initial([0.0, 0.0])
    ranked = RankedSteps(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0.75, 0.25]))
    np.testing.assert_allclose(update_mean(state, ranked, hp), [0.75, 0.25])
    zero = RankedSteps(np.zeros((2, 2)), np.array([0.75, 0.25]))
    np.testing.assert_array_equal(update_mean(state, zero, hp), state.mean)


def test_update_mean_moves_to_common_point():
    hp = _hp()
    state = GaussianState.initial([1.0, -1.0], sigma=0.5)
    target = np.array([2.0, 3.0])
    steps = np.tile((target - state.mean) / state.sigma, (3, 1))
    ranked = RankedSteps(steps, np.array([0.5, 0.3, 0.2]))
    np.testing.assert_allclose(update_mean(state, ranked, hp), target)


def test_paths_zero_step():
    hp = _hp()
    state = GaussianState.initial(np.zeros(2))
    state.path_sigma = np.array([1.0, 2.0])
    state.path_cov = np.array([-1.0, 0.5])
    ps, pc, _ = update_evolution_paths(state, RankedSteps(np.zeros((2, 2)), np.array([0.5, 0.5])), hp)
    np.testing.assert_allclose(ps, (1 - hp.c_sigma) * state.path_sigma)
    np.testing.assert_allclose(pc, (1 - hp.c_c) * state.path_cov)


def test_paths_worked_example():
    hp = _hp(c_sigma=0.4, mu_eff=3.0)
    state = GaussianState.initial(np.zeros(2))
    state.path_sigma = np.array([1.0, 0.0])
    ranked = RankedSteps(np.array([[0.0, 1.0]]), np.array([1.0]))
    ps, _, _ = update_evolution_paths(state, ranked, hp)
    np.testing.assert_allclose(ps, [0.6, 1.3856406460551], atol=1e-12)


def test_h_sigma_switches_off_for_long_path():
    hp = _hp()
    state = GaussianState.initial(np.zeros(2))
    ranked = RankedSteps(np.array([[100.0, 0.0]]), np.array([1.0]))
    ps, pc, h = update_evolution_paths(state, ranked, hp)
    assert h == 0.0
    np.testing.assert_array_equal(pc, np.zeros(2))
    _, _, h = update_evolution_paths(state, RankedSteps(np.array([[0.1, 0.0]]), np.array([1.0])), hp)
    assert h == 1.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_paths_reject_nonfinite():
    hp = _hp()
    state = GaussianState.initial(np.zeros(2))
    with pytest.raises(StateCorruptionError):
        update_evolution_paths(state, RankedSteps(np.array([[np.inf, 0.0]]), np.array([1.0])), hp)


def test_expected_norm_values():
    assert expected_norm(1) == pytest.approx(0.797619047619, abs=1e-12)
    assert expected_norm(5) == pytest.approx(2.12852375572, abs=1e-10)
    assert expected_norm(10**6) / 1e3 == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        expected_norm(0)


def test_covariance_fixed_points():
    c = np.array([[2.0, 0.5], [0.5, 1.0]])
    state = GaussianState.initial(np.zeros(2), cov=c)
    root = np.linalg.cholesky(c)
    # rank-mu term vanishes in expectation form when y y^T averages to C
    ys = np.array([root[:, 0], root[:, 1], -root[:, 0], -root[:, 1]]) * math.sqrt(2)
    w = np.full(4, 0.25)
    assert np.allclose((ys.T * w) @ ys, c)
    pc = root @ np.array([1.0, 1.0])
    hp = _hp(c_1=0.0, c_mu=0.3)
    np.testing.assert_allclose(update_covariance(state, RankedSteps(ys, w), pc, 1.0, hp), c, atol=1e-14)
    hp0 = _hp(c_1=0.0, c_mu=0.0)
    np.testing.assert_allclose(update_covariance(state, RankedSteps(ys, w), pc, 1.0, hp0), c)


def test_covariance_one_dimensional_example():
    hp = _hp(c_1=0.1, c_mu=0.2)
    state = GaussianState.initial([0.0])
    new = update_covariance(state, RankedSteps(np.array([[3.0]]), np.array([1.0])), np.array([2.0]), 1.0, hp)
    assert new[0, 0] == pytest.approx(2.9, abs=1e-14)


def test_covariance_stall_factor():
    hp = _hp(c_1=0.1, c_mu=0.0, c_c=0.5)
    state = GaussianState.initial([0.0])
    new = update_covariance(state, RankedSteps(np.array([[0.0]]), np.array([1.0])), np.array([0.0]), 0.0, hp)
    assert new[0, 0] == pytest.approx(1 + 0.1 * 0.5 * 1.5 - 0.1)


def test_covariance_symmetric_output():
    rng = np.random.default_rng(4)
    hp = _hp()
    a = rng.normal(size=(5, 5))
    state = GaussianState.initial(np.zeros(5), cov=a @ a.T + np.eye(5))
    ys = rng.normal(size=(hp.lam, 5))
    new = update_covariance(state, RankedSteps(ys, hp.weights), rng.normal(size=5), 1.0, hp)
    np.testing.assert_array_equal(new, new.T)


def test_step_size_examples():
    hp = _hp(c_sigma=0.3, d_sigma=1.0)
    state = GaussianState.initial(np.zeros(2))
    on_target = np.array([expected_norm(2), 0.0])
    assert update_step_size(state, on_target, hp) == pytest.approx(1.0)
    assert update_step_size(state, np.zeros(2), hp) == pytest.approx(math.exp(-0.3))
    state1 = GaussianState.initial(np.zeros(1))
    ps = np.array([1.5 * expected_norm(1)])
    assert update_step_size(state1, ps, hp) == pytest.approx(1.161834242728, abs=1e-12)


def test_step_size_exponent_capped():
    hp = _hp(c_sigma=0.5, d_sigma=1.0)
    state = GaussianState.initial(np.zeros(2))
    assert update_step_size(state, np.array([1e300, 0.0]), hp) == pytest.approx(1e10)


def test_clamp_examples():
    state = GaussianState.initial(np.zeros(2), sigma=1e-20)
    assert clamp_step_size(state, 1e-30) == pytest.approx(1e-15)
    assert clamp_step_size(GaussianState.initial(np.zeros(2)), 1e-30) == 1.0
    tiny = GaussianState.initial(np.zeros(1), sigma=0.5, cov=[[1e-30]])
    assert clamp_step_size(tiny, 1e-30) == pytest.approx(1.0)


def test_inv_sqrt_random_spd():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(2, 12))
        q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        eig = np.exp(rng.uniform(0, math.log(1e6), n))
        eig[0], eig[-1] = 1.0, 1e6
        c = (q * eig) @ q.T
        r = inv_sqrt(c)
        err = np.max(np.abs(r @ r @ c - np.eye(n)))
        assert err <= 1e-8


def test_state_validation():
    with pytest.raises(ValueError):
        GaussianState.initial(np.zeros(2), sigma=0.0)
    with pytest.raises(ValueError):
        GaussianState.initial(np.zeros(2), cov=np.eye(3))
    with pytest.raises(StateCorruptionError):
        GaussianState.initial(np.zeros(2), cov=[[1.0, 2.0], [2.0, 1.0]])
    state = GaussianState.initial(np.zeros(2))
    state.cov = np.array([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(StateCorruptionError):
        check_gaussian_state(state)
    state = GaussianState.initial(np.zeros(2))
    state.mean[0] = np.nan
    with pytest.raises(StateCorruptionError):
        check_gaussian_state(state)
