"""
Fixed-Excitation Manifold Bases
励起数固定多様体の基底と演算子作用

Configurations are m_ex-subsets of the atoms, stored as sorted 0-based site
tuples in lexicographic order (the order of itertools.combinations). Positions
are computed through the combinatorial number system, so lookups are O(m_ex)
without a dictionary. For N <= 62 each configuration also has a bitmask
(bit n-1 set for atom n) that doubles as its index in the full 2^N space.
"""

import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.special import comb

from .coupling import CouplingMatrices
from .errors import DimensionMismatchError, ManifoldError

logger = logging.getLogger(__name__)

MAX_BITMASK_ATOMS = 62


@dataclass(frozen=True, eq=False)
class ManifoldBasis:
    """励起数 m_ex の配置基底"""
    n_atoms: int
    m_ex: int
    occupied: np.ndarray
    _binom: np.ndarray

    @property
    def size(self) -> int:
        return int(self.occupied.shape[0])

    def __len__(self) -> int:
        return self.size

    @property
    def configs(self) -> List[Tuple[int, ...]]:
        """1-based site tuples, e.g. (1, 2), (1, 3), (2, 3)."""
        return [tuple(int(s) + 1 for s in row) for row in self.occupied]

    @property
    def membership(self) -> np.ndarray:
        member = np.zeros((self.size, self.n_atoms), dtype=bool)
        if self.m_ex:
            rows = np.repeat(np.arange(self.size), self.m_ex)
            member[rows, self.occupied.ravel()] = True
        return member

    @property
    def masks(self) -> np.ndarray:
        if self.n_atoms > MAX_BITMASK_ATOMS:
            raise ManifoldError(f"bitmask view limited to N <= {MAX_BITMASK_ATOMS}, got N={self.n_atoms}")
        if self.m_ex == 0:
            return np.zeros(1, dtype=np.int64)
        return np.sum(np.left_shift(np.int64(1), self.occupied.astype(np.int64)), axis=1)

    def rank(self, occupied_rows: np.ndarray) -> np.ndarray:
        """Lexicographic positions of sorted 0-based site rows."""
        rows = np.atleast_2d(np.asarray(occupied_rows, dtype=np.int64))
        if self.m_ex == 0:
            return np.zeros(rows.shape[0], dtype=np.int64)
        if rows.shape[1] != self.m_ex:
            raise DimensionMismatchError(f"expected rows of length {self.m_ex}, got {rows.shape[1]}")
        k = self.m_ex - np.arange(self.m_ex)
        terms = self._binom[self.n_atoms - 1 - rows, k]
        return self.size - 1 - np.sum(terms, axis=1)

    def index_of(self, config: Sequence[int]) -> int:
        """Position of a 1-based configuration."""
        sites = sorted(int(s) - 1 for s in config)
        if len(sites) != self.m_ex or len(set(sites)) != self.m_ex:
            raise ManifoldError(f"configuration {tuple(config)} is not an {self.m_ex}-subset")
        if sites and (sites[0] < 0 or sites[-1] >= self.n_atoms):
            raise ManifoldError(f"configuration {tuple(config)} out of range for N={self.n_atoms}")
        return int(self.rank(np.array([sites]))[0])


@dataclass
class ManifoldVector:
    """多様体内の状態ベクトル"""
    basis: ManifoldBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.basis.size,):
            raise DimensionMismatchError(
                f"amplitude length {self.amplitudes.shape} does not match basis size {self.basis.size}"
            )

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "ManifoldVector":
        norm = self.norm()
        if norm == 0.0:
            raise ManifoldError("cannot normalize a zero vector")
        return ManifoldVector(self.basis, self.amplitudes / norm)

    def overlap(self, other: "ManifoldVector") -> complex:
        """<self|other>"""
        if other.basis.n_atoms != self.basis.n_atoms or other.basis.m_ex != self.basis.m_ex:
            raise DimensionMismatchError("overlap between different manifolds")
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def to_full_space(self) -> np.ndarray:
        """Embed into the 2^N computational basis (bit n-1 = atom n excited)."""
        psi = np.zeros(2**self.basis.n_atoms, dtype=complex)
        psi[self.basis.masks] = self.amplitudes
        return psi


def _pascal(n_atoms: int, max_k: int) -> np.ndarray:
    table = np.zeros((n_atoms + 1, max_k + 1), dtype=np.int64)
    for n in range(n_atoms + 1):
        for k in range(max_k + 1):
            table[n, k] = int(comb(n, k, exact=True))
    return table


@lru_cache(maxsize=128)
def enumerate_manifold(n_atoms: int, m_ex: int) -> ManifoldBasis:
    """m_ex励起配置の列挙"""
    if n_atoms < 1:
        raise ManifoldError(f"atom count must be positive, got {n_atoms}")
    if not 0 <= m_ex <= n_atoms:
        raise ManifoldError(f"m_ex={m_ex} out of range [0, {n_atoms}]")
    if m_ex == 0:
        occupied = np.zeros((1, 0), dtype=np.int64)
    else:
        occupied = np.array(list(itertools.combinations(range(n_atoms), m_ex)), dtype=np.int64)
    occupied.setflags(write=False)
    binom = _pascal(n_atoms, m_ex)
    binom.setflags(write=False)
    return ManifoldBasis(n_atoms=n_atoms, m_ex=m_ex, occupied=occupied, _binom=binom)


def _lowered_rows(basis: ManifoldBasis, site0: int) -> Tuple[np.ndarray, np.ndarray]:
    member = basis.membership[:, site0]
    src = np.flatnonzero(member)
    rows = basis.occupied[src]
    remaining = rows[rows != site0].reshape(len(src), basis.m_ex - 1)
    return src, remaining


def lowering_matrix(basis: ManifoldBasis, site: int) -> sparse.csr_matrix:
    """sigma_ge at 1-based site as a (dim_{m-1} x dim_m) sparse matrix."""
    if basis.m_ex < 1:
        raise ManifoldError("cannot lower the ground manifold")
    if not 1 <= site <= basis.n_atoms:
        raise ManifoldError(f"site {site} out of range [1, {basis.n_atoms}]")
    target = enumerate_manifold(basis.n_atoms, basis.m_ex - 1)
    src, remaining = _lowered_rows(basis, site - 1)
    tgt = target.rank(remaining) if len(src) else np.zeros(0, dtype=np.int64)
    data = np.ones(len(src), dtype=complex)
    return sparse.csr_matrix((data, (tgt, src)), shape=(target.size, basis.size))


@lru_cache(maxsize=64)
def _lowering_operators_cached(n_atoms: int, m_ex: int) -> Tuple[sparse.csr_matrix, ...]:
    basis = enumerate_manifold(n_atoms, m_ex)
    return tuple(lowering_matrix(basis, site) for site in range(1, n_atoms + 1))


def lowering_operators(basis: ManifoldBasis) -> Tuple[sparse.csr_matrix, ...]:
    """All N single-site lowering matrices out of this manifold."""
    return _lowering_operators_cached(basis.n_atoms, basis.m_ex)


def apply_lowering(site: int, v: ManifoldVector) -> ManifoldVector:
    """sigma_ge^site |v>"""
    op = lowering_matrix(v.basis, site)
    target = enumerate_manifold(v.basis.n_atoms, v.basis.m_ex - 1)
    return ManifoldVector(target, op @ v.amplitudes)


def project_heff(cm: CouplingMatrices, basis: ManifoldBasis) -> np.ndarray:
    """有効ハミルトニアンの多様体射影（密行列）"""
    h = np.asarray(cm.h_offdiag)
    if h.shape != (basis.n_atoms, basis.n_atoms):
        raise DimensionMismatchError(
            f"coupling dimension {h.shape[0]} does not match basis N={basis.n_atoms}"
        )
    dim = basis.size
    m_ex = basis.m_ex
    matrix = np.zeros((dim, dim), dtype=complex)
    if m_ex == 0:
        return matrix

    occ = basis.occupied
    matrix[np.diag_indices(dim)] = np.sum(np.diag(h)[occ], axis=1)
    if m_ex == basis.n_atoms:
        return matrix

    member = basis.membership
    all_cols = np.arange(dim)
    for slot in range(m_ex):
        src_sites = occ[:, slot]
        for n in range(basis.n_atoms):
            rows = ~member[:, n]
            if not np.any(rows):
                continue
            moved = occ[rows].copy()
            moved[:, slot] = n
            moved.sort(axis=1)
            targets = basis.rank(moved)
            matrix[targets, all_cols[rows]] += h[n, src_sites[rows]]
    return matrix


def excitation_hole_permutation(basis: ManifoldBasis) -> np.ndarray:
    """perm[i] = position in the N - m_ex manifold of the complement of config i."""
    target = enumerate_manifold(basis.n_atoms, basis.n_atoms - basis.m_ex)
    if target.m_ex == 0:
        return np.zeros(basis.size, dtype=np.int64)
    member = basis.membership
    complement = np.nonzero(~member)[1].reshape(basis.size, target.m_ex)
    return target.rank(complement)


def excitation_hole_vector(v: ManifoldVector) -> ManifoldVector:
    """g <-> e exchange of configuration amplitudes."""
    target = enumerate_manifold(v.basis.n_atoms, v.basis.n_atoms - v.basis.m_ex)
    amplitudes = np.zeros(target.size, dtype=complex)
    amplitudes[excitation_hole_permutation(v.basis)] = v.amplitudes
    return ManifoldVector(target, amplitudes)


def restrict_full_state(psi: np.ndarray, basis: ManifoldBasis) -> np.ndarray:
    """Amplitudes of a 2^N state inside one manifold."""
    return np.asarray(psi)[basis.masks]


@lru_cache(maxsize=32)
def excitation_numbers(n_atoms: int) -> np.ndarray:
    """Popcount of every computational basis index."""
    idx = np.arange(2**n_atoms, dtype=np.int64)
    counts = np.zeros(idx.shape, dtype=np.int64)
    for site in range(n_atoms):
        counts += (idx >> site) & 1
    counts.setflags(write=False)
    return counts
