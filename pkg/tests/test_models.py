import math

import numpy as np
import pytest
from scipy import stats

from smcstab.errors import DimensionError, InputError, ModelError
from smcstab.models import (
    Ar1Source,
    DiscreteHmm,
    HmmSource,
    LinearGaussianModel,
    ReplaySource,
    arch_model,
    gaussian_random_walk,
    local_likelihood,
    simulate_hmm,
    stationary_distribution,
    stationary_observation_stream,
)
from smcstab.seeding import Purpose, SeedStream, derive_seed


def test_discrete_validation():
    with pytest.raises(ModelError):
        DiscreteHmm(q=[[0.5, 0.4], [0.2, 0.8]], g=[[1.0], [1.0]], chi=[0.5, 0.5])
    with pytest.raises(ModelError):
        DiscreteHmm(q=[[1.1, -0.1], [0.2, 0.8]], g=[[1.0], [1.0]], chi=[0.5, 0.5])
    with pytest.raises(DimensionError):
        DiscreteHmm(q=[[1.0]], g=[[1.0], [1.0]], chi=[1.0])
    with pytest.raises(ModelError):
        DiscreteHmm(q=[[0.5, 0.5], [0.5, 0.5]], g=[[1.0, 0.0], [1.0, 0.0]], chi=[0.5, 0.5])


def test_observation_symbols_checked(two_state):
    with pytest.raises(ModelError):
        two_state.check_observations([0, 2])


def test_transition_sampling_frequencies(two_state):
    rng = derive_seed(SeedStream(0), Purpose.MISC)
    start = np.zeros(200_000, dtype=np.intp)
    moved = two_state.sample_transition(start, rng)
    counts = np.bincount(moved, minlength=2)
    p = stats.chisquare(counts, 200_000 * two_state.q[0]).pvalue
    assert p > 1e-3


def test_simulate_is_deterministic_and_sized(two_state):
    a = simulate_hmm(two_state, 50, 4)
    b = simulate_hmm(two_state, 50, 4)
    assert len(a) == 50 and a.observations.shape == (50,)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.observations, b.observations)
    assert not np.array_equal(a.observations, simulate_hmm(two_state, 50, 5).observations)


def test_simulated_state_frequencies_match_stationary_law(two_state):
    traj = simulate_hmm(two_state, 60_000, 1)
    assert np.mean(traj.states == 0) == pytest.approx(2 / 3, abs=0.02)


def test_stationary_distribution():
    pi = stationary_distribution([[0.9, 0.1], [0.2, 0.8]])
    np.testing.assert_allclose(pi, [2 / 3, 1 / 3], atol=1e-14)


def test_lgss_validation_and_shapes():
    with pytest.raises(DimensionError):
        LinearGaussianModel(a=np.eye(2), r=np.eye(3), b=[[1.0, 0.0]], s=[[1.0]], init_mean=[0, 0], init_cov=np.eye(2))
    with pytest.raises(ModelError):
        LinearGaussianModel(a=[[1.0]], r=[[1.0]], b=[[1.0]], s=[[1.0]], init_mean=[0.0], init_cov=[[-1.0]])
    m = LinearGaussianModel(a=np.eye(2), r=np.eye(2), b=[[1.0, 0.0]], s=[[0.5]], init_mean=[0, 0], init_cov=np.eye(2))
    assert (m.dx, m.du, m.dy) == (2, 2, 1)
    traj = simulate_hmm(m, 10, 0)
    assert traj.states.shape == (10, 2) and traj.observations.shape == (10, 1)


def test_lgss_without_noise_is_deterministic():
    m = LinearGaussianModel(a=[[1.0]], r=[[0.0]], b=[[1.0]], s=[[0.0]], init_mean=[3.0], init_cov=[[0.0]])
    traj = simulate_hmm(m, 4, 0)
    np.testing.assert_array_equal(traj.observations[:, 0], [3.0, 3.0, 3.0, 3.0])


def test_lgss_log_density_matches_scipy():
    m = LinearGaussianModel(a=[[0.5]], r=[[1.0]], b=[[2.0]], s=[[0.7]], init_mean=[0.0], init_cov=[[1.0]])
    x = np.array([[0.1], [-1.0], [2.0]])
    expected = stats.norm.logpdf(1.3, loc=2.0 * x[:, 0], scale=0.7)
    np.testing.assert_allclose(m.log_obs_density(x, [1.3]), expected, rtol=1e-12)


def test_generic_models_simulate():
    for model in (arch_model(), gaussian_random_walk()):
        traj = simulate_hmm(model, 30, 2)
        assert traj.observations.shape == (30, 1)
        assert np.all(np.isfinite(traj.observations))


def test_local_likelihood(two_state):
    assert local_likelihood(two_state, 1, 0) == pytest.approx(0.3)
    zero = DiscreteHmm(q=[[0.5, 0.5], [0.5, 0.5]], g=[[1.0, 0.0], [0.5, 0.5]], chi=[0.5, 0.5])
    with pytest.raises(ModelError):
        local_likelihood(zero, 0, 1)


def test_ar1_source_is_stationary():
    z = stationary_observation_stream(Ar1Source(0.8, 1.0, seed=3), 200_000)[:, 0]
    assert np.var(z) == pytest.approx(1 / (1 - 0.64), rel=0.03)
    assert np.corrcoef(z[:-1], z[1:])[0, 1] == pytest.approx(0.8, abs=0.01)


def test_ar1_thresholds_map_to_symbols():
    raw = stationary_observation_stream(Ar1Source(0.5, seed=2), 100)[:, 0]
    sym = stationary_observation_stream(Ar1Source(0.5, thresholds=(0.0,), seed=2), 100)
    np.testing.assert_array_equal(sym, (raw >= 0).astype(int))
    with pytest.raises(ModelError):
        Ar1Source(1.0)


def test_hmm_source_matches_simulation(two_state):
    y = stationary_observation_stream(HmmSource(two_state, 7), 20)
    np.testing.assert_array_equal(y, simulate_hmm(two_state, 20, 7).observations)


def test_replay_source(tmp_path):
    path = tmp_path / "obs.txt"
    path.write_text("0\n1\n1\n")
    np.testing.assert_array_equal(stationary_observation_stream(ReplaySource(str(path)), 3), [0, 1, 1])
    with pytest.raises(InputError):
        stationary_observation_stream(ReplaySource(str(path)), 4)
    with pytest.raises(InputError):
        stationary_observation_stream(ReplaySource(str(tmp_path / "missing.txt")), 1)
    vec = tmp_path / "vec.txt"
    vec.write_text("0.5,1.5\n-1,2\n")
    assert stationary_observation_stream(ReplaySource(str(vec)), 2).shape == (2, 2)


def test_fixed_record_source():
    np.testing.assert_array_equal(stationary_observation_stream(np.array([1, 0, 1]), 2), [1, 0])
    with pytest.raises(InputError):
        stationary_observation_stream(np.array([1]), 2)
