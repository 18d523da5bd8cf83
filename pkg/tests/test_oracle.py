import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monitored_fermions import Lattice, oracle
from monitored_fermions.exceptions import DomainError
from monitored_fermions.gaussian import correlation_from_state, entanglement_entropy, neel_state
from monitored_fermions.observables import BlockGeometry, covariance_blocks, particle_number_variance
from monitored_fermions.pm import project_occupation, unitary_step


def _ring_setup(L):
    lat = Lattice.ring(L)
    basis = oracle.FockBasis(L, L // 2)
    return lat, basis, oracle.ExactHamiltonian(basis, lat.hopping_matrix())


def test_three_site_sign_example():
    # c_2^dag c_0 |011> = -|110>
    basis = oracle.FockBasis(3, 2)
    a = oracle.basis_state(basis, [0, 1]).amplitudes
    out = basis.hop(2, 0) @ a
    k = basis.index[0b110]
    assert out[k] == -1.0
    assert np.count_nonzero(out) == 1


def test_hop_matches_anticommutation():
    basis = oracle.FockBasis(4, 2)
    for i in range(4):
        for j in range(4):
            if i == j:
                continue
            # {c_i^dag c_j, c_j^dag c_i} = n_i + n_j - 2 n_i n_j in a fixed-N sector
            lhs = (basis.hop(i, j) @ basis.hop(j, i) + basis.hop(j, i) @ basis.hop(i, j)).toarray()
            ni, nj = basis.occupations[:, i], basis.occupations[:, j]
            np.testing.assert_allclose(lhs, np.diag(ni + nj - 2 * ni * nj))


def test_dimension_cap():
    with pytest.raises(DomainError):
        oracle.FockBasis(30, 15)


def test_unitary_identity_at_zero():
    _, basis, H = _ring_setup(6)
    s = oracle.basis_state(basis, [1, 3, 5])
    np.testing.assert_array_equal(oracle.exact_unitary(s, H, 0.0).amplitudes, s.amplitudes)
    with pytest.raises(DomainError):
        oracle.exact_unitary(s, H, -1.0)


def test_single_particle_sector_is_one_body_propagator():
    lat = Lattice.ring(4)
    h = lat.hopping_matrix()
    basis = oracle.FockBasis(4, 1)
    H = oracle.ExactHamiltonian(basis, h)
    s = oracle.exact_unitary(oracle.basis_state(basis, [0]), H, 0.7)
    # single-particle amplitudes are exp(-i h t) e_0 with bitmask order = site order
    w, V = np.linalg.eigh(h)
    psi = V @ (np.exp(-1j * w * 0.7) * V[0])
    np.testing.assert_allclose(s.amplitudes, psi, atol=1e-13)


def test_neel_unitary_matches_gaussian():
    lat, basis, H = _ring_setup(8)
    s = oracle.exact_unitary(oracle.basis_state(basis, [1, 3, 5, 7]), H, 1.0)
    D = unitary_step(correlation_from_state(neel_state(lat)), lat.hopping_matrix(), 1.0)
    np.testing.assert_allclose(oracle.two_point(s), D, atol=1e-10)


def test_measure_basis_state_unchanged():
    basis = oracle.FockBasis(4, 2)
    s = oracle.basis_state(basis, [1, 3])
    post, occ = oracle.exact_measure(s, 1, 0.99)
    assert occ
    np.testing.assert_array_equal(post.amplitudes, s.amplitudes)


def test_measure_superposition_collapses():
    basis = oracle.FockBasis(2, 1)
    amp = np.zeros(2, dtype=complex)
    amp[basis.index[0b01]] = amp[basis.index[0b10]] = 1 / np.sqrt(2)
    post, occ = oracle.exact_measure(oracle.FockState(basis, amp), 0, 0.4)
    assert occ
    assert abs(post.amplitudes[basis.index[0b01]]) == pytest.approx(1.0)


def test_measure_zero_probability_branch_is_guarded():
    basis = oracle.FockBasis(4, 2)
    s = oracle.basis_state(basis, [1, 3])
    # site 0 is empty, p_c = 0 asks for "occupied"; the guard applies the certain outcome
    post, occ = oracle.exact_measure(s, 0, 0.0)
    assert not occ and post.norm() == pytest.approx(1.0)


def test_generic_measurement_matches_projection_update(orbitals):
    U = orbitals(6, 3, seed=21)
    basis = oracle.FockBasis(6, 3)
    s = oracle.slater_state(basis, U)
    D = correlation_from_state(U)
    np.testing.assert_allclose(oracle.two_point(s), D, atol=1e-12)
    p = D[4, 4].real
    for p_c, branch in ((0.0, True), (1.0, False)):
        post, occ = oracle.exact_measure(s, 4, p_c)
        assert occ is branch
        assert occ == (p >= p_c)
        np.testing.assert_allclose(oracle.two_point(post), project_occupation(D, 4, occ), atol=1e-10)


def test_qsd_step_reduces_to_unitary():
    _, basis, H = _ring_setup(6)
    s = oracle.basis_state(basis, [1, 3, 5])
    a = oracle.exact_qsd_step(s, H, np.zeros(6), 0.0, 0.01)
    b = oracle.exact_unitary(s, H, 0.01)
    np.testing.assert_allclose(a.amplitudes, b.amplitudes, atol=1e-13)


def test_qsd_step_diagonal_without_hopping():
    basis = oracle.FockBasis(4, 1)
    H = oracle.ExactHamiltonian(basis, np.zeros((4, 4)))
    s = oracle.basis_state(basis, [2])
    post = oracle.exact_qsd_step(s, H, np.array([0.3, -0.2, 0.5, 0.1]), 0.5, 0.01)
    np.testing.assert_allclose(np.abs(post.amplitudes), np.abs(s.amplitudes), atol=1e-14)
    np.testing.assert_allclose(oracle.occupation(post), [0, 0, 1, 0], atol=1e-14)


@settings(max_examples=15)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_entropy_and_counting_identities(L, seed):
    N = L // 2
    rng = np.random.default_rng(seed)
    U = np.linalg.qr(rng.normal(size=(L, N)) + 1j * rng.normal(size=(L, N)))[0]
    basis = oracle.FockBasis(L, N)
    s = oracle.slater_state(basis, U)
    D = correlation_from_state(U)
    region = [int(x) for x in rng.choice(L, size=rng.integers(1, L), replace=False)]
    assert oracle.entanglement_entropy(s, region) == pytest.approx(entanglement_entropy(D, region), abs=1e-8)
    var, _ = oracle.number_moments(s, region)
    assert particle_number_variance(D, region) == pytest.approx(var, abs=1e-9)
    if L >= 4:
        geom = BlockGeometry((0,), tuple(range(L // 2, L)))
        _, cov = oracle.number_moments(s, geom.A, geom.B)
        assert covariance_blocks(D, geom) == pytest.approx(abs(cov), abs=1e-9)
        assert cov <= 1e-12


def test_support_stays_in_sector():
    lat, basis, H = _ring_setup(6)
    rng = np.random.default_rng(0)
    s = oracle.basis_state(basis, [1, 3, 5])
    for _ in range(10):
        s = oracle.exact_qsd_step(s, H, rng.normal(0, 0.1, 6), 0.5, 0.01)
        s, _ = oracle.exact_measure(s, int(rng.integers(6)), rng.random())
    assert oracle.occupation(s).sum() == pytest.approx(3, abs=1e-12)
    assert s.norm() == pytest.approx(1, abs=1e-12)
