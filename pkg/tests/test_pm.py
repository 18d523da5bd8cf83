import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from monitored_fermions import Lattice
from monitored_fermions.checkpoint import CheckpointPolicy
from monitored_fermions.exceptions import ConfigurationError, DomainError, TrajectoryInterrupted
from monitored_fermions.gaussian import correlation_diagnostics, correlation_from_state, neel_state
from monitored_fermions.pm import (
    PmConfig,
    SpectralPropagator,
    measure_site,
    run_pm_trajectory,
    sample_waiting_time,
    unitary_step,
    waiting_time_from_uniform,
)
from monitored_fermions.validation import pm_lockstep


def test_waiting_time_examples():
    assert waiting_time_from_uniform(1.0, 1.0, 3) == 0.0
    assert waiting_time_from_uniform(math.exp(-1), 0.5, 4) == pytest.approx(0.5, abs=1e-15)


def test_waiting_time_mean():
    rng = np.random.default_rng(0)
    u = 1.0 - rng.random(10**6)
    tau = -np.log(u) / 2.0
    assert tau.mean() == pytest.approx(0.5, abs=0.002)


def test_waiting_time_ks():
    rng = np.random.default_rng(1)
    tau = [sample_waiting_time(1.5, 3, rng) for _ in range(10**4)]
    res = stats.kstest(tau, "expon", args=(0, 1 / 4.5))
    # 1% critical value of the one-sample KS statistic for n = 10^4
    assert res.statistic < 1.628 / math.sqrt(10**4)
    assert min(tau) >= 0


def test_waiting_time_domain():
    with pytest.raises(DomainError):
        sample_waiting_time(0.0, 2, np.random.default_rng())


def test_unitary_step_examples():
    lat = Lattice.ring(8)
    H = lat.hopping_matrix()
    D = correlation_from_state(neel_state(lat))
    np.testing.assert_array_equal(unitary_step(D, H, 0.0), D)
    k = 2
    phi = np.exp(2j * np.pi * k * np.arange(8) / 8) / np.sqrt(8)
    Dk = np.outer(phi, phi.conj())
    np.testing.assert_allclose(unitary_step(Dk, H, 3.7), Dk, atol=1e-13)
    with pytest.raises(DomainError):
        unitary_step(D, H, -0.1)


def test_propagator_rejects_asymmetric():
    with pytest.raises(DomainError):
        SpectralPropagator(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_measure_eigenstate():
    D = np.diag([0.0, 1.0])
    post, ev = measure_site(D, 1, np.random.default_rng(0))
    assert ev.occupied and ev.born_probability == 1.0
    np.testing.assert_array_equal(post, D)


def test_measure_collapses_superposition():
    D = np.full((2, 2), 0.5, dtype=complex)
    post, ev = measure_site(D, 0, p_c=0.3)
    assert ev.occupied
    np.testing.assert_allclose(post, np.diag([1.0, 0.0]), atol=1e-15)
    post, ev = measure_site(D, 0, p_c=0.7)
    assert not ev.occupied
    np.testing.assert_allclose(post, np.diag([0.0, 1.0]), atol=1e-15)


def test_measure_site_out_of_range():
    with pytest.raises(DomainError):
        measure_site(np.eye(2), 2, p_c=0.5)


def test_born_statistics(orbitals):
    D = correlation_from_state(orbitals(6, 3, seed=2))
    p = D[3, 3].real
    rng = np.random.default_rng(5)
    n = 10**5
    occ = sum(measure_site(D, 3, rng)[1].occupied for _ in range(n))
    assert abs(occ / n - p) < 3 * math.sqrt(p * (1 - p) / n)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.integers(2, 10))
def test_measurement_keeps_projector(seed, half):
    L = 2 * half
    rng = np.random.default_rng(seed)
    U = np.linalg.qr(rng.normal(size=(L, half)) + 1j * rng.normal(size=(L, half)))[0]
    D = correlation_from_state(U)
    for _ in range(5):
        D, _ = measure_site(D, int(rng.integers(L)), rng)
        d = correlation_diagnostics(D, half)
        assert d["trace"] < 1e-8 and d["idempotency"] < 1e-8 and d["hermiticity"] < 1e-10


def test_config_validation():
    with pytest.raises(ConfigurationError):
        PmConfig(gamma=0.0, t_max=1.0)
    with pytest.raises(ConfigurationError):
        PmConfig(gamma=1.0, t_max=1.0, sample_times=[2.0])
    with pytest.raises(ConfigurationError):
        PmConfig(gamma=1.0, t_max=1.0, rate="bond")
    cfg = PmConfig(gamma=1.0, t_max=8.0)
    assert cfg.sample_times == [4.0, 4 + 4 / 3, 4 + 8 / 3, 8.0]


def test_event_rate_normalizations():
    lat = Lattice.ring(8)
    assert PmConfig(gamma=2.0, t_max=1.0).event_rate(lat) == 8.0
    assert PmConfig(gamma=2.0, t_max=1.0, rate="site").event_rate(lat) == 16.0


def test_no_events_equals_unitary():
    lat = Lattice.ring(8)
    cfg = PmConfig(gamma=1e-12, t_max=3.0, sample_times=[1.0, 3.0])
    rec = run_pm_trajectory(cfg, lat, 4, keep_states=True)
    assert rec.n_events == 0
    D0 = correlation_from_state(neel_state(lat))
    for t, D in zip(rec.times, rec.states):
        np.testing.assert_allclose(D, unitary_step(D0, lat.hopping_matrix(), t), atol=1e-12)


@pytest.mark.parametrize("representation", ["orbital", "correlation"])
def test_same_seed_bitwise_identical(representation):
    lat = Lattice.ring(16)
    cfg = PmConfig(gamma=1.0, t_max=6.0, representation=representation)
    a = run_pm_trajectory(cfg, lat, 99).arrays()
    b = run_pm_trajectory(cfg, lat, 99).arrays()
    for k in a:
        assert a[k].tobytes() == b[k].tobytes()


def test_backends_agree():
    lat = Lattice.ring(12)
    times = [1.0, 2.5, 4.0]
    recs = [
        run_pm_trajectory(PmConfig(gamma=1.0, t_max=4.0, sample_times=times, representation=r), lat, 3, keep_states=True)
        for r in ("orbital", "correlation")
    ]
    assert recs[0].n_events == recs[1].n_events > 0
    for A, B in zip(recs[0].states, recs[1].states):
        np.testing.assert_allclose(A, B, atol=1e-10)


@pytest.mark.parametrize("representation", ["orbital", "correlation"])
def test_lockstep_with_oracle(representation):
    res = pm_lockstep(L=8, gamma=1.0, t_max=20.0, seed=3, representation=representation)
    assert res["matched"] and res["n_events"] > 20
    assert res["max_dev"] < 1e-8
    assert res["max_ee_dev"] < 1e-8


def test_checkpoint_resume_matches_uninterrupted(tmp_path):
    lat = Lattice.ring(16)
    cfg = PmConfig(gamma=1.0, t_max=16.0)
    full = run_pm_trajectory(cfg, lat, 7).arrays()
    policy = CheckpointPolicy(tmp_path / "ck.bin", CheckpointPolicy.cadence(cfg.t_max), halt_after=4)
    with pytest.raises(TrajectoryInterrupted):
        run_pm_trajectory(cfg, lat, 7, checkpoint=policy)
    resumed = run_pm_trajectory(cfg, lat, 7, checkpoint=CheckpointPolicy(tmp_path / "ck.bin", 1.6))
    assert resumed.resumed
    for k, v in resumed.arrays().items():
        np.testing.assert_array_equal(v, full[k])


def test_entropy_grows_early_on_average():
    lat = Lattice.ring(32)
    times = [0.5, 1.0, 2.0, 3.0]
    cfg = PmConfig(gamma=0.1, t_max=3.0, sample_times=times)
    ee = np.mean([run_pm_trajectory(cfg, lat, s).entropy for s in range(20)], axis=0)
    assert np.all(np.diff(ee) > 0)


def test_event_hook_sees_every_measurement():
    lat = Lattice.ring(8)
    seen = []
    rec = run_pm_trajectory(PmConfig(gamma=1.0, t_max=5.0), lat, 0, on_event=lambda b, e: seen.append(e))
    assert len(seen) == rec.n_events
    assert all(0 <= e.born_probability <= 1 + 1e-12 for e in seen)
    assert all(e.time <= 5.0 for e in seen)
