"""Exact many-body reference in the fixed-particle-number Fock space.

Basis states are occupation bitmasks with ``N`` set bits, sorted as
integers (bit ``i`` is site ``i``). Operators are ordered by ascending
site index, ``|n> = (c_0^dag)^{n_0} (c_1^dag)^{n_1} ... |vac>``, so

    c_j^dag |n> = (-1)^{n_0 + ... + n_{j-1}} |n + e_j>   if n_j = 0.

Worked 3-site example: ``c_2^dag c_0 |011> `` (sites 0 and 1 occupied,
bitmask ``0b011``): ``c_0`` removes site 0 with sign ``+1``, leaving
``|010>``; ``c_2^dag`` then passes the particle on site 1, sign ``-1``,
giving ``-|110>``.

Two-point functions are returned in the convention of
:func:`monitored_fermions.gaussian.correlation_from_state`:
``G_ij = <c_j^dag c_i>``.

Random numbers are consumed in the same order as the Gaussian simulators
(see :mod:`monitored_fermions.pm`), so both can run in lockstep from one
seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .exceptions import DomainError

MAX_DIMENSION = 10**6


def _popcount_below(n: int, j: int) -> int:
    return bin(n & ((1 << j) - 1)).count("1")


class FockBasis:
    def __init__(self, L: int, N: int):
        dim = math.comb(L, N)
        if dim > MAX_DIMENSION:
            raise DomainError(f"Fock dimension C({L},{N})={dim} exceeds {MAX_DIMENSION}")
        self.L, self.N = L, N
        self.states = np.array(
            sorted(sum(1 << s for s in occ) for occ in combinations(range(L), N)), dtype=np.int64
        )
        self.index = {int(s): k for k, s in enumerate(self.states)}
        self.occupations = ((self.states[:, None] >> np.arange(L)[None, :]) & 1).astype(float)

    @property
    def dim(self) -> int:
        return len(self.states)

    def hop(self, i: int, j: int) -> sp.csr_matrix:
        """Sparse matrix of ``c_i^dag c_j``."""
        rows, cols, vals = [], [], []
        for k, n in enumerate(self.states):
            n = int(n)
            if i == j:
                if (n >> i) & 1:
                    rows.append(k), cols.append(k), vals.append(1.0)
                continue
            if not (n >> j) & 1 or ((n >> i) & 1):
                continue
            m = n ^ (1 << j)
            sign = (-1) ** (_popcount_below(n, j) + _popcount_below(m, i))
            rows.append(self.index[m | (1 << i)]), cols.append(k), vals.append(sign)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim))

    def one_body(self, h: np.ndarray) -> np.ndarray:
        """Dense many-body matrix of ``sum_ij h_ij c_i^dag c_j``."""
        M = sp.csr_matrix((self.dim, self.dim), dtype=np.result_type(h, float))
        for i, j in zip(*np.nonzero(h)):
            M = M + h[i, j] * self.hop(int(i), int(j))
        return M.toarray()


@dataclass
class FockState:
    basis: FockBasis
    amplitudes: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "FockState":
        return FockState(self.basis, self.amplitudes / self.norm())

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


def basis_state(basis: FockBasis, occupied) -> FockState:
    amp = np.zeros(basis.dim, dtype=complex)
    amp[basis.index[sum(1 << int(s) for s in occupied)]] = 1.0
    return FockState(basis, amp)


def slater_state(basis: FockBasis, U: np.ndarray) -> FockState:
    """Amplitudes ``det U[occupied rows, :]`` of ``prod_k (sum_j U_jk c_j^dag)|vac>``."""
    amp = np.empty(basis.dim, dtype=complex)
    for k, n in enumerate(basis.states):
        rows = [s for s in range(basis.L) if (int(n) >> s) & 1]
        amp[k] = np.linalg.det(U[rows, :])
    return FockState(basis, amp)


class ExactHamiltonian:
    """Many-body hopping Hamiltonian with a cached eigendecomposition."""

    def __init__(self, basis: FockBasis, h: np.ndarray):
        self.basis = basis
        self.matrix = basis.one_body(np.asarray(h))
        self.energies, self.vectors = np.linalg.eigh(self.matrix)

    def propagate(self, amp: np.ndarray, t: float) -> np.ndarray:
        V = self.vectors
        return V @ (np.exp(-1j * self.energies * t) * (V.conj().T @ amp))


def exact_unitary(state: FockState, H: ExactHamiltonian, t: float) -> FockState:
    if t < 0:
        raise DomainError(f"t must be non-negative, got {t}")
    if t == 0:
        return FockState(state.basis, state.amplitudes.copy())
    return FockState(state.basis, H.propagate(state.amplitudes, t))


def occupation(state: FockState) -> np.ndarray:
    return state.probabilities() @ state.basis.occupations


def exact_measure(state: FockState, j: int, p_c: float) -> tuple[FockState, bool]:
    """Project onto ``n_j = 1`` iff ``<n_j> >= p_c``, else onto ``n_j = 0``; renormalize."""
    nj = state.basis.occupations[:, j]
    p = float(state.probabilities() @ nj)
    occupied = p >= p_c
    # same tie-breaking as the Gaussian simulator for numerically impossible branches
    if occupied and p < 1e-12:
        occupied = False
    elif not occupied and 1.0 - p < 1e-12:
        occupied = True
    mask = nj if occupied else 1.0 - nj
    amp = state.amplitudes * mask
    norm = np.linalg.norm(amp)
    if norm == 0:
        raise DomainError(f"projection of site {j} onto a zero-probability branch")
    return FockState(state.basis, amp / norm), occupied


def exact_qsd_step(state: FockState, H: ExactHamiltonian, dW, gamma: float, dt: float) -> FockState:
    """Apply ``exp(-i H dt + sum_i [dW_i + gamma dt (2<n_i> - 1)] n_i)`` and renormalize."""
    n = occupation(state)
    occ = state.basis.occupations
    diag = occ @ (np.asarray(dW) + gamma * dt * (2.0 * n - 1.0))
    K = -1j * dt * H.matrix + np.diag(diag)
    amp = sla.expm(K) @ state.amplitudes
    return FockState(state.basis, amp / np.linalg.norm(amp))


def two_point(state: FockState) -> np.ndarray:
    """``G_ij = <c_j^dag c_i>`` (equal to ``U U^dag`` for a Slater determinant)."""
    b = state.basis
    a = state.amplitudes
    G = np.empty((b.L, b.L), dtype=complex)
    for i in range(b.L):
        for j in range(b.L):
            G[i, j] = np.vdot(a, b.hop(j, i) @ a)
    return G


class TwoPoint:
    """Cached hop matrices for repeated two-point evaluations."""

    def __init__(self, basis: FockBasis):
        self.basis = basis
        L = basis.L
        self.ops = [[basis.hop(j, i) for j in range(L)] for i in range(L)]

    def __call__(self, state: FockState) -> np.ndarray:
        L = self.basis.L
        a = state.amplitudes
        G = np.empty((L, L), dtype=complex)
        for i in range(L):
            for j in range(L):
                G[i, j] = np.vdot(a, self.ops[i][j] @ a)
        return G


def _reorder_sign(n: int, region: set[int], L: int) -> int:
    """Sign from moving the creators of ``region`` to the left of the rest."""
    swaps = 0
    seen_outside = 0
    for s in range(L):
        if not (n >> s) & 1:
            continue
        if s in region:
            swaps += seen_outside
        else:
            seen_outside += 1
    return -1 if swaps % 2 else 1


def entanglement_entropy(state: FockState, region) -> float:
    """Von Neumann entropy (nats) of ``region`` by an explicit partial trace."""
    b = state.basis
    region = set(int(s) for s in region)
    rest = [s for s in range(b.L) if s not in region]
    reg = sorted(region)
    rows, cols = {}, {}
    entries = []
    for k, n in enumerate(b.states):
        n = int(n)
        a_key = tuple((n >> s) & 1 for s in reg)
        b_key = tuple((n >> s) & 1 for s in rest)
        r = rows.setdefault(a_key, len(rows))
        c = cols.setdefault(b_key, len(cols))
        entries.append((r, c, _reorder_sign(n, region, b.L) * state.amplitudes[k]))
    M = np.zeros((len(rows), len(cols)), dtype=complex)
    for r, c, v in entries:
        M[r, c] = v
    s = np.linalg.svd(M, compute_uv=False) ** 2
    s = s[s > 1e-300]
    return float(-(s * np.log(s)).sum())


def number_moments(state: FockState, A, B=None) -> tuple[float, float]:
    """``Var(N_A)`` and, if ``B`` is given, ``Cov(N_A, N_B)``."""
    P = state.probabilities()
    occ = state.basis.occupations
    NA = occ[:, list(A)].sum(axis=1)
    var = float(P @ NA**2 - (P @ NA) ** 2)
    if B is None:
        return var, float("nan")
    NB = occ[:, list(B)].sum(axis=1)
    cov = float(P @ (NA * NB) - (P @ NA) * (P @ NB))
    return var, cov


def run_pm_oracle(lat, cfg, seed: int) -> list[tuple[float, np.ndarray, FockState]]:
    """Exact projective-measurement trajectory with the simulator's random stream.

    Returns ``(time, G, state)`` at each sample time of ``cfg``.
    """
    L, N = lat.n_sites, lat.n_particles
    basis = FockBasis(L, N)
    H = ExactHamiltonian(basis, lat.hopping_matrix(cfg.J))
    tp = TwoPoint(basis)
    if lat.dimension == 1:
        occ = range(1, L, 2)
    else:
        Lx = lat.extents[0]
        occ = [s for s in range(L) if ((s % Lx) + (s // Lx)) % 2 == 1]
    state = basis_state(basis, occ)
    rng = np.random.Generator(np.random.PCG64(seed))
    rate = cfg.event_rate(lat)
    out = []
    t = 0.0
    k = 0
    next_event = -math.log(1.0 - rng.random()) / rate
    samples = cfg.sample_times
    while True:
        while k < len(samples) and samples[k] <= min(next_event, cfg.t_max):
            state = exact_unitary(state, H, samples[k] - t)
            t = samples[k]
            out.append((t, tp(state), state))
            k += 1
        if next_event > cfg.t_max:
            break
        state = exact_unitary(state, H, next_event - t)
        t = next_event
        j = int(rng.integers(L))
        state, _ = exact_measure(state, j, rng.random())
        next_event = t + (-math.log(1.0 - rng.random()) / rate)
    return out


def run_qsd_oracle(lat, gamma: float, dt: float, increments, J: float = 1.0, callback=None) -> FockState:
    """Exact diffusive trajectory driven by the given noise vectors."""
    L, N = lat.n_sites, lat.n_particles
    basis = FockBasis(L, N)
    H = ExactHamiltonian(basis, lat.hopping_matrix(J))
    occ = range(1, L, 2) if lat.dimension == 1 else [
        s for s in range(L) if ((s % lat.extents[0]) + (s // lat.extents[0])) % 2 == 1
    ]
    state = basis_state(basis, occ)
    for s, dW in enumerate(increments, start=1):
        state = exact_qsd_step(state, H, dW, gamma, dt)
        if callback is not None:
            callback(s, state)
    return state
