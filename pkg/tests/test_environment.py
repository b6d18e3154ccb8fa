import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from busylab.environment import MarkovEnv, constant_env, two_state_symmetric

RING3 = MarkovEnv(
    generator=[[-2.0, 1.5, 0.5],
               [0.3, -1.0, 0.7],
               [1.1, 0.4, -1.5]],
    p=[-1.0, 0.0, 2.0])


def test_constructor_validation():
    with pytest.raises(ValueError):
        MarkovEnv([[0.0, 1.0]], [0.0, 1.0])          # not square
    with pytest.raises(ValueError):
        MarkovEnv([[-1.0, 1.0], [1.0, -1.0]], [0.0])  # p length
    with pytest.raises(ValueError):
        MarkovEnv([[-1.0, -1.0], [1.0, -1.0]], [0.0, 1.0])  # negative rate
    with pytest.raises(ValueError):
        MarkovEnv([[-2.0, 1.0], [1.0, -1.0]], [0.0, 1.0])  # rows must sum to 0
    with pytest.raises(ValueError):
        MarkovEnv([[-1.0, 1.0], [1.0, -1.0]], [0.0, 1.0], alpha=-0.5)


def test_two_state_basics():
    env = two_state_symmetric(1.0, (0.0, 2.0), alpha=0.5)
    assert env.n_states == 2
    np.testing.assert_allclose(env.stationary, [0.5, 0.5])
    m = env.p_moments()
    assert m["mean"] == pytest.approx(1.0)
    assert m["mean_sq"] == pytest.approx(2.0)
    assert m["var"] == pytest.approx(1.0)
    assert m["mean_down"] == pytest.approx(0.0)
    assert m["max_up"] == pytest.approx(2.0)
    assert m["sup_abs"] == pytest.approx(2.0)
    np.testing.assert_allclose(env.p_plus, [0.0, 2.0])
    np.testing.assert_allclose(env.p_minus, [0.0, 0.0])


def test_down_profile_moments():
    env = two_state_symmetric(1.0, (-1.0, 0.0), alpha=1.0)
    m = env.p_moments()
    assert m["mean"] == pytest.approx(-0.5)
    assert m["var"] == pytest.approx(0.25)
    assert m["mean_down"] == pytest.approx(0.5)
    assert m["max_up"] == 0.0
    np.testing.assert_allclose(env.p_minus, [1.0, 0.0])


def test_constant_env():
    env = constant_env(1.5)
    assert env.n_states == 1
    assert env.stationary[0] == 1.0
    m = env.p_moments()
    assert m["mean"] == pytest.approx(1.5)
    assert m["var"] == pytest.approx(0.0)


def test_symmetric_covariance_single_exponential():
    q, alpha = 0.7, 1.3
    env = two_state_symmetric(q, (-1.0, 1.0), alpha=alpha)
    for u in (0.0, 0.2, 1.0, 3.0):
        expect = math.exp(-2.0 * q * alpha * u)
        assert env.covariance(u) == pytest.approx(expect, abs=1e-12)
    # pair correlation of p with itself = covariance here (mean 0)
    assert env.pair_correlation(env.p, env.p, 0.7) == pytest.approx(
        env.covariance(0.7), abs=1e-12)


def test_pair_correlation_matches_matrix_exponential():
    # independent route: nu_i f_i [e^{Qu}]_ij g_j with scipy's expm
    env = RING3
    f = env.p
    g = env.p**2 - 1.0
    nu = env.stationary
    for u in (0.0, 0.31, 1.7, 6.0):
        tp = expm(env.alpha * np.asarray(env.generator) * u)
        expect = float(nu @ (f * (tp @ g)))
        assert env.pair_correlation(f, g, u) == pytest.approx(expect, abs=1e-10)


def test_correlation_modes_reconstruct():
    env = RING3
    rates, weights = env.correlation_modes(env.p, env.p)
    # generator eigenvalues: nothing grows, one mode per state
    assert np.all(rates.real <= 1e-12)
    assert rates.shape == weights.shape == (3,)
    for u in (0.0, 0.45, 2.2):
        val = np.sum(weights * np.exp(rates * u))
        assert val.imag == pytest.approx(0.0, abs=1e-10)
        assert val.real == pytest.approx(env.pair_correlation(env.p, env.p, u),
                                         abs=1e-9)


def test_correlation_modes_mean_mode():
    # the zero-rate mode carries nu(f) nu(g)
    env = two_state_symmetric(1.0, (0.0, 2.0), alpha=1.0)
    rates, weights = env.correlation_modes(env.p, env.p)
    zero = np.argmin(np.abs(rates))
    assert rates[zero] == pytest.approx(0.0, abs=1e-12)
    assert weights[zero].real == pytest.approx(1.0, abs=1e-12)  # (E p)^2


def test_stationary_three_state():
    nu = RING3.stationary
    assert nu.sum() == pytest.approx(1.0)
    resid = nu @ (RING3.alpha * np.asarray(RING3.generator))
    np.testing.assert_allclose(resid, 0.0, atol=1e-12)


def test_kernel_tables_shapes():
    env = RING3
    nu_cum, hold, jump_cum, p, p_plus, p_minus = env.kernel_tables()
    assert nu_cum[-1] == pytest.approx(1.0)
    assert np.all(np.diff(nu_cum) >= 0)
    assert hold.shape == (3,)
    assert np.all(hold > 0)
    assert jump_cum.shape == (3, 3)
    np.testing.assert_allclose(jump_cum[:, -1], 1.0)
    np.testing.assert_allclose(p, RING3.p)
    np.testing.assert_allclose(p_plus + (-p_minus), RING3.p)


def test_frozen_env_alpha_zero():
    env = MarkovEnv([[-1.0, 1.0], [1.0, -1.0]], [0.0, 2.0], alpha=0.0)
    # no transitions ever: covariance never decays
    assert env.covariance(5.0) == pytest.approx(env.covariance(0.0))
    rng = np.random.default_rng(3)
    traj = env.sample_path(50.0, rng)
    assert traj.state_at(0.0) == traj.state_at(49.9)


def test_sample_path_occupancy():
    env = two_state_symmetric(1.0, (0.0, 2.0), alpha=1.0)
    rng = np.random.default_rng(11)
    total = np.zeros(2)
    for _ in range(200):
        traj = env.sample_path(40.0, rng)
        times = np.append(traj.times, traj.horizon)
        for s, t0, t1 in zip(traj.states, times, times[1:]):
            total[s] += t1 - t0
    occ = total / total.sum()
    # stationary start + long horizon: occupancy near nu (loose MC bound)
    np.testing.assert_allclose(occ, [0.5, 0.5], atol=0.02)


def test_sample_path_determinism():
    env = RING3
    t1 = env.sample_path(25.0, np.random.default_rng(42))
    t2 = env.sample_path(25.0, np.random.default_rng(42))
    np.testing.assert_array_equal(t1.times, t2.times)
    np.testing.assert_array_equal(t1.states, t2.states)


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_sample_path_wellformed(seed):
    env = RING3
    traj = env.sample_path(10.0, np.random.default_rng(seed))
    assert traj.times[0] == 0.0
    assert np.all(np.diff(traj.times) > 0)
    assert np.all(traj.times <= 10.0)
    # no self-jumps
    assert np.all(np.diff(traj.states) != 0)


def test_trajectory_state_lookup():
    env = two_state_symmetric(2.0, (-1.0, 1.0), alpha=1.0)
    traj = env.sample_path(5.0, np.random.default_rng(8))
    for t in (0.0, 1.3, 4.999):
        idx = np.searchsorted(traj.times, t, side="right") - 1
        assert traj.state_at(t) == traj.states[idx]
    with pytest.raises(ValueError):
        traj.state_at(5.1)
    with pytest.raises(ValueError):
        traj.state_at(-0.1)
