"""Periodic rings and square tori: site indexing, bonds and distances.

Two-dimensional lattices use row-major indexing, ``site = y * Lx + x``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigurationError, DomainError


@dataclass(frozen=True)
class Lattice:
    """A periodic lattice with extents ``(L,)`` or ``(Lx, Ly)``.

    Extents smaller than 3 are allowed for testing; the two bonds that
    wrap around then coincide and the hopping matrix accumulates ``J``
    once per bond (entry ``2J`` for ``L = 2``).
    """

    extents: tuple[int, ...]

    def __post_init__(self):
        ext = tuple(int(e) for e in self.extents)
        object.__setattr__(self, "extents", ext)
        if len(ext) not in (1, 2):
            raise ConfigurationError(f"dimension must be 1 or 2, got {len(ext)}")
        if any(e < 1 for e in ext):
            raise ConfigurationError(f"extents must be positive, got {ext}")

    @classmethod
    def ring(cls, L: int) -> "Lattice":
        return cls((L,))

    @classmethod
    def torus(cls, Lx: int, Ly: int | None = None) -> "Lattice":
        return cls((Lx, Lx if Ly is None else Ly))

    @property
    def dimension(self) -> int:
        return len(self.extents)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.extents))

    @property
    def n_particles(self) -> int:
        """Particle number at half filling (``n_sites // 2``)."""
        return self.n_sites // 2

    def coords(self, site: int) -> tuple[int, ...]:
        self._check_site(site)
        if self.dimension == 1:
            return (site,)
        Lx = self.extents[0]
        return (site % Lx, site // Lx)

    def index(self, *coords: int) -> int:
        if self.dimension == 1:
            return coords[0] % self.extents[0]
        Lx, Ly = self.extents
        return (coords[1] % Ly) * Lx + coords[0] % Lx

    def _check_site(self, site):
        if not 0 <= site < self.n_sites:
            raise DomainError(f"site {site} outside [0, {self.n_sites})")

    @cached_property
    def bonds(self) -> tuple[tuple[int, int], ...]:
        """One forward bond per site and direction, wrap-around included."""
        out = []
        if self.dimension == 1:
            L = self.extents[0]
            out = [(i, (i + 1) % L) for i in range(L)]
        else:
            Lx, Ly = self.extents
            for y in range(Ly):
                for x in range(Lx):
                    s = self.index(x, y)
                    out.append((s, self.index(x + 1, y)))
                    out.append((s, self.index(x, y + 1)))
        # a 1-wide direction produces self-bonds; they carry no hopping
        return tuple((a, b) for a, b in out if a != b)

    def neighbors(self, site: int) -> list[int]:
        """Periodic nearest neighbours of ``site``, sorted and deduplicated."""
        self._check_site(site)
        if self.dimension == 1:
            L = self.extents[0]
            cand = {(site - 1) % L, (site + 1) % L}
        else:
            x, y = self.coords(site)
            cand = {self.index(x + dx, y + dy) for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1))}
        cand.discard(site)
        return sorted(cand)

    def hopping_matrix(self, J: float = 1.0) -> np.ndarray:
        """Dense single-particle hopping matrix ``H_ij = J`` on every bond."""
        if not np.isfinite(J):
            raise ConfigurationError(f"hopping J must be finite, got {J}")
        n = self.n_sites
        H = np.zeros((n, n))
        for a, b in self.bonds:
            H[a, b] += J
            H[b, a] += J
        return H

    def hopping_operator(self, J: float = 1.0) -> sp.csr_matrix:
        """Sparse version of :meth:`hopping_matrix` for matrix-vector work."""
        return sp.csr_matrix(self.hopping_matrix(J))

    def distance(self, i: int, j: int) -> float:
        """Ring distance in 1d; Euclidean minimum-image distance in 2d."""
        if self.dimension == 1:
            L = self.extents[0]
            d = abs(i - j) % L
            return float(min(d, L - d))
        (xi, yi), (xj, yj) = self.coords(i), self.coords(j)
        Lx, Ly = self.extents
        dx = abs(xi - xj) % Lx
        dy = abs(yi - yj) % Ly
        return float(np.hypot(min(dx, Lx - dx), min(dy, Ly - dy)))

    def distance_matrix(self) -> np.ndarray:
        n = self.n_sites
        if self.dimension == 1:
            idx = np.arange(n)
            d = np.abs(idx[:, None] - idx[None, :]) % n
            return np.minimum(d, n - d).astype(float)
        Lx, Ly = self.extents
        sites = np.arange(n)
        x, y = sites % Lx, sites // Lx
        dx = np.abs(x[:, None] - x[None, :]) % Lx
        dy = np.abs(y[:, None] - y[None, :]) % Ly
        return np.hypot(np.minimum(dx, Lx - dx), np.minimum(dy, Ly - dy))

    def half_system(self) -> np.ndarray:
        """Sites of the left half: ``[0, L/2)`` in 1d, columns ``x < Lx/2`` in 2d."""
        if self.dimension == 1:
            return np.arange(self.extents[0] // 2)
        Lx, _ = self.extents
        sites = np.arange(self.n_sites)
        return sites[(sites % Lx) < Lx // 2]


def chord_distance(L, r):
    """Chord length ``(L/pi) sin(pi r / L)`` replacing ``r`` on a ring of ``L`` sites."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r > L):
        raise DomainError(f"distance must lie in [0, {L}]")
    out = (L / np.pi) * np.sin(np.pi * r / L)
    return float(out) if out.ndim == 0 else out
