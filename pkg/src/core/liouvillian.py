"""
Liouvillian Spectral Tools
小規模系のLiouvillian：密行列・固有値定理・再帰的固有演算子・初期状態分解

Conventions. rho is vectorized row-major, vec(A rho B) = (A kron B^T) vec(rho).
Sectors are labelled (m_ex, l_ex, xi1, xi2) for
U = |psi_xi1^(m_ex + l_ex)><psi_xi2^(m_ex)| with 1-based xi. The eigenvalue of
the coherent part on U is Lambda = -i (lambda_xi1 - conj(lambda_xi2)).

Operators are stored block-wise in eigen-coordinates: a right eigenoperator
is a dict n -> C with Z = sum_n Psi^(n+l) C Psi^(n)^dagger, an adjoint one is
a dict n -> D with X = sum_n Phi^(n+l)^dagger D Phi^(n), where Phi holds the
left eigenvectors as rows. Tr(X^dagger Z) then reduces to sum_n <D, C>.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb, factorial
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.optimize import linear_sum_assignment

from .coupling import ArrayGeometry, CouplingMatrices, CouplingModel, build_coupling_matrices
from .errors import DegeneracyError, DimensionMismatchError, EigensolverError, ManifoldError
from .manifold_basis import lowering_operators
from .master_equation import MAX_SUPEROPERATOR_ATOMS, n_excited_diagonal, superoperator
from .spectrum import ManifoldSpectrum, compute_spectra

logger = logging.getLogger(__name__)

TRACE_TOLERANCE = 1e-10
DEGENERACY_GAP = 1e-10
MAX_RECURSIVE_ATOMS = 13
MAX_RBODY_ATOMS = 6

Sector = Tuple[int, int, int, int]


@dataclass(frozen=True)
class LiouvillianMatrix:
    """密なLiouvillian超演算子"""
    n_atoms: int
    matrix: np.ndarray

    @property
    def dimension(self) -> int:
        return int(self.matrix.shape[0])

    def trace_defect(self) -> float:
        """max |vec(1)^T L|: zero when L preserves the trace."""
        identity = np.eye(2**self.n_atoms).reshape(-1)
        return float(np.max(np.abs(identity @ self.matrix)))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        dim = 2**self.n_atoms
        return (self.matrix @ np.asarray(rho, dtype=complex).reshape(-1)).reshape(dim, dim)

    def eigenvalues(self) -> np.ndarray:
        return scipy.linalg.eigvals(self.matrix)


def build_liouvillian_matrix(geometry: ArrayGeometry, detuning: float = 0.0,
                             cm: Optional[CouplingMatrices] = None) -> LiouvillianMatrix:
    """Dense 4^N Liouvillian with a trace-preservation check."""
    n_atoms = geometry.atom_count
    if n_atoms > MAX_SUPEROPERATOR_ATOMS:
        raise DimensionMismatchError(
            f"dense Liouvillian limited to N <= {MAX_SUPEROPERATOR_ATOMS}, got N={n_atoms}"
        )
    cm = cm or build_coupling_matrices(geometry)
    result = LiouvillianMatrix(n_atoms, superoperator(cm, detuning))
    defect = result.trace_defect()
    if defect > TRACE_TOLERANCE:
        raise EigensolverError(f"Liouvillian does not preserve the trace: defect {defect:.3e}")
    logger.debug(f"🧮 Dense Liouvillian built: N={n_atoms}, dim={result.dimension}")
    return result


def heff_difference_spectrum(spectra: Dict[int, ManifoldSpectrum]) -> np.ndarray:
    """All -i (lambda_a - conj(lambda_b)) over pairs of H_eff eigenvalues from every manifold."""
    values = np.concatenate([spectra[m].eigenvalues for m in sorted(spectra)])
    return (-1j * (values[:, None] - np.conj(values)[None, :])).ravel()


def multiset_distance(a: Sequence[complex], b: Sequence[complex]) -> float:
    """Largest deviation of the optimal one-to-one matching between two equal-size multisets."""
    a = np.asarray(a, dtype=complex).ravel()
    b = np.asarray(b, dtype=complex).ravel()
    if a.shape != b.shape:
        raise DimensionMismatchError(f"multisets differ in size: {a.size} vs {b.size}")
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(np.max(cost[rows, cols])) if a.size else 0.0


@dataclass
class LiouvillianEigenpair:
    """Liouvillian固有対（右固有演算子 Z と随伴固有演算子 X）"""
    eigenvalue: complex
    sector: Sector
    right: Dict[int, np.ndarray]
    adjoint: Dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def m_ex(self) -> int:
        return self.sector[0]

    @property
    def l_ex(self) -> int:
        return self.sector[1]


class SpectralLiouvillian:
    """Manifold spectra plus projected jump maps; builds eigenoperators sector by sector."""

    def __init__(self, cm: CouplingMatrices, spectra: Dict[int, ManifoldSpectrum]):
        self.cm = cm
        self.spectra = spectra
        self.n_atoms = cm.atom_count
        rates, vectors = cm.channel_rates, cm.channel_vectors
        active = np.flatnonzero(rates > 0.0)
        self._rates = np.asarray(rates)[active]
        self._vectors = np.asarray(vectors)[:, active]
        self._transfer: Dict[int, List[np.ndarray]] = {}
        self._gram: Dict[int, np.ndarray] = {}

    @classmethod
    def from_geometry(cls, geometry: ArrayGeometry, max_manifold: Optional[int] = None,
                      max_workers: int = 1) -> "SpectralLiouvillian":
        n_atoms = geometry.atom_count
        if n_atoms > MAX_RECURSIVE_ATOMS:
            raise DimensionMismatchError(
                f"recursive construction limited to N <= {MAX_RECURSIVE_ATOMS}, got N={n_atoms}"
            )
        top = n_atoms if max_manifold is None else min(max_manifold, n_atoms)
        cm = build_coupling_matrices(geometry)
        spectra = compute_spectra(cm, range(top + 1), geometry, max_workers=max_workers)
        return cls(cm, spectra)

    def _spectrum(self, m: int) -> ManifoldSpectrum:
        if m not in self.spectra:
            raise ManifoldError(f"manifold m_ex={m} was not diagonalized")
        return self.spectra[m]

    def transfer(self, m: int) -> List[np.ndarray]:
        """T_c = Phi^(m-1) L_c Psi^(m) for every active decay channel."""
        if m not in self._transfer:
            upper, lower = self._spectrum(m), self._spectrum(m - 1)
            lowering = lowering_operators(upper.basis)
            blocks = []
            for c in range(self._rates.size):
                op = sparse.csr_matrix(lowering[0].shape, dtype=complex)
                for site, weight in enumerate(self._vectors[:, c]):
                    if weight != 0.0:
                        op = op + weight * lowering[site]
                blocks.append(lower.left @ (op @ upper.right))
            self._transfer[m] = blocks
        return self._transfer[m]

    def gram(self, m: int) -> np.ndarray:
        """G[b, a] = <psi_b|psi_a>."""
        if m not in self._gram:
            right = self._spectrum(m).right
            self._gram[m] = right.conj().T @ right
        return self._gram[m]

    def coherent_block(self, n: int, l_ex: int) -> np.ndarray:
        ket = self._spectrum(n + l_ex).eigenvalues
        bra = self._spectrum(n).eigenvalues
        return -1j * (ket[:, None] - np.conj(bra)[None, :])

    def apply_jump(self, block: np.ndarray, n: int, l_ex: int) -> np.ndarray:
        """Maps the (n, l) coefficient block to the (n-1, l) block."""
        out = np.zeros((len(self._spectrum(n + l_ex - 1)), len(self._spectrum(n - 1))), dtype=complex)
        for rate, ket, bra in zip(self._rates, self.transfer(n + l_ex), self.transfer(n)):
            out += rate * (ket @ block @ bra.conj().T)
        return out

    def apply_jump_adjoint(self, block: np.ndarray, n: int, l_ex: int) -> np.ndarray:
        """Maps the (n, l) adjoint block to the (n+1, l) block."""
        out = np.zeros((len(self._spectrum(n + l_ex + 1)), len(self._spectrum(n + 1))), dtype=complex)
        for rate, ket, bra in zip(self._rates, self.transfer(n + l_ex + 1), self.transfer(n + 1)):
            out += rate * (ket.conj().T @ block @ bra)
        return out

    def _check_sector(self, sector: Sector) -> None:
        m_ex, l_ex, xi1, xi2 = sector
        if m_ex < 0 or m_ex + l_ex < 0 or max(m_ex, m_ex + l_ex) > self.n_atoms:
            raise ManifoldError(f"sector {sector} outside 0..{self.n_atoms} excitations")
        if not 1 <= xi1 <= len(self._spectrum(m_ex + l_ex)) or not 1 <= xi2 <= len(self._spectrum(m_ex)):
            raise ManifoldError(f"sector {sector} has an eigenstate index out of range")

    def _divide(self, rhs: np.ndarray, target: complex, n: int, l_ex: int, conjugate: bool) -> np.ndarray:
        block = self.coherent_block(n, l_ex)
        gap = (np.conj(target) - np.conj(block)) if conjugate else (target - block)
        threshold = DEGENERACY_GAP * max(1.0, abs(target))
        hits = np.argwhere(np.abs(gap) < threshold)
        if hits.size:
            sectors = [(n, l_ex, int(a) + 1, int(b) + 1) for a, b in hits]
            raise DegeneracyError(f"coherent eigenvalue {target:.6g} is not separated", sectors)
        return rhs / gap

    def construct(self, sector: Sector, with_adjoint: bool = True) -> LiouvillianEigenpair:
        """Right eigenoperator by downward recursion, adjoint by upward recursion."""
        self._check_sector(sector)
        m_ex, l_ex, xi1, xi2 = sector
        target = complex(self.coherent_block(m_ex, l_ex)[xi1 - 1, xi2 - 1])

        seed = np.zeros((len(self._spectrum(m_ex + l_ex)), len(self._spectrum(m_ex))), dtype=complex)
        seed[xi1 - 1, xi2 - 1] = 1.0
        right = {m_ex: seed}
        floor = max(0, -l_ex)
        for n in range(m_ex, floor, -1):
            right[n - 1] = self._divide(self.apply_jump(right[n], n, l_ex), target, n - 1, l_ex, False)

        adjoint: Dict[int, np.ndarray] = {}
        if with_adjoint:
            adjoint[m_ex] = seed.copy()
            ceiling = self.n_atoms - max(0, l_ex)
            for n in range(m_ex, ceiling):
                if n + 1 + l_ex not in self.spectra or n + 1 not in self.spectra:
                    raise ManifoldError(f"adjoint of {sector} needs manifolds up to {self.n_atoms}")
                adjoint[n + 1] = self._divide(
                    self.apply_jump_adjoint(adjoint[n], n, l_ex), target, n + 1, l_ex, True
                )
        return LiouvillianEigenpair(target, sector, right, adjoint)

    def sectors(self, l_ex: int = 0, max_manifold: Optional[int] = None) -> List[Sector]:
        top = self.n_atoms if max_manifold is None else max_manifold
        out = []
        for m in range(max(0, -l_ex), top + 1):
            if m + l_ex > self.n_atoms or m not in self.spectra or m + l_ex not in self.spectra:
                continue
            for a in range(len(self.spectra[m + l_ex])):
                for b in range(len(self.spectra[m])):
                    out.append((m, l_ex, a + 1, b + 1))
        return out

    def construct_all(self, l_ex: int = 0, max_manifold: Optional[int] = None,
                      with_adjoint: bool = True, max_workers: int = 1) -> List[LiouvillianEigenpair]:
        sectors = self.sectors(l_ex, max_manifold)
        # warm the transfer cache before threads share it
        for m in range(1, self.n_atoms + 1):
            if m in self.spectra and m - 1 in self.spectra:
                self.transfer(m)
        if max_workers > 1 and len(sectors) > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                return list(pool.map(lambda s: self.construct(s, with_adjoint), sectors))
        return [self.construct(s, with_adjoint) for s in sectors]

    # dense views

    def _embedding(self, m: int, vectors: np.ndarray) -> np.ndarray:
        basis = self._spectrum(m).basis
        full = np.zeros((2**self.n_atoms, vectors.shape[1]), dtype=complex)
        full[basis.masks] = vectors
        return full

    def to_dense(self, pair: LiouvillianEigenpair) -> np.ndarray:
        """Right eigenoperator Z as a 2^N x 2^N matrix."""
        dim = 2**self.n_atoms
        out = np.zeros((dim, dim), dtype=complex)
        l_ex = pair.l_ex
        for n, block in pair.right.items():
            ket = self._embedding(n + l_ex, self._spectrum(n + l_ex).right)
            bra = self._embedding(n, self._spectrum(n).right)
            out += ket @ block @ bra.conj().T
        return out

    def adjoint_to_dense(self, pair: LiouvillianEigenpair) -> np.ndarray:
        dim = 2**self.n_atoms
        out = np.zeros((dim, dim), dtype=complex)
        l_ex = pair.l_ex
        for n, block in pair.adjoint.items():
            ket = self._embedding(n + l_ex, self._spectrum(n + l_ex).left.T)
            bra = self._embedding(n, self._spectrum(n).left.T)
            out += ket.conj() @ block @ bra.T
        return out

    def density_block(self, rho: np.ndarray, n: int, l_ex: int) -> np.ndarray:
        """<phi_a^(n+l)| rho |phi_b^(n)> from a dense density matrix."""
        rows = self._spectrum(n + l_ex).basis.masks
        cols = self._spectrum(n).basis.masks
        sub = np.asarray(rho)[np.ix_(rows, cols)]
        return self._spectrum(n + l_ex).left @ sub @ self._spectrum(n).left.conj().T

    def overlap(self, adjoint_of: LiouvillianEigenpair, right_of: LiouvillianEigenpair) -> complex:
        """Tr(X^dagger Z') in eigen-coordinates."""
        if adjoint_of.l_ex != right_of.l_ex:
            return 0.0j
        total = 0.0j
        for n, d in adjoint_of.adjoint.items():
            c = right_of.right.get(n)
            if c is not None:
                total += complex(np.vdot(d, c))
        return total

    def diagonal_weight(self, pair: LiouvillianEigenpair, weights: Dict[int, float]) -> complex:
        """Tr(A Z) for A = sum_n w_n P_n, a function of the excitation number."""
        if pair.l_ex != 0:
            return 0.0j
        total = 0.0j
        for n, block in pair.right.items():
            w = weights.get(n, 0.0)
            if w:
                total += w * complex(np.trace(block @ self.gram(n)))
        return total


def construct_eigenstate_recursive(spectra: Dict[int, ManifoldSpectrum], sector: Sector,
                                   cm: CouplingMatrices, with_adjoint: bool = True) -> LiouvillianEigenpair:
    """再帰的固有演算子構築"""
    return SpectralLiouvillian(cm, spectra).construct(sector, with_adjoint)


@dataclass(frozen=True)
class Decomposition:
    """初期状態の固有演算子展開"""
    eigenvalues: np.ndarray
    sectors: List[Sector]
    alphas: np.ndarray
    weights: np.ndarray

    def predict(self, times: Iterable[float]) -> np.ndarray:
        """sum alpha e^{Lambda t} Tr(A Z) on a grid."""
        t = np.asarray(list(times), dtype=float)
        series = np.exp(np.multiply.outer(t, self.eigenvalues)) @ (self.alphas * self.weights)
        return np.real(series)

    def single_excitation_prediction(self, times: Iterable[float]) -> np.ndarray:
        """Reduced sum_xi alpha_xi e^{-Gamma_xi t} over diagonal single-excitation sectors."""
        t = np.asarray(list(times), dtype=float)
        keep = np.array([s[0] == 1 and s[1] == 0 and s[2] == s[3] for s in self.sectors], dtype=bool)
        if not np.any(keep):
            return np.zeros_like(t)
        rates = -np.real(self.eigenvalues[keep])
        return np.real(np.exp(-np.multiply.outer(t, rates)) @ self.alphas[keep])

    def single_excitation_alphas(self) -> np.ndarray:
        keep = [i for i, s in enumerate(self.sectors) if s[0] == 1 and s[1] == 0 and s[2] == s[3]]
        return self.alphas[keep]

    def contributions(self, t: float) -> Dict[int, complex]:
        """Summed alpha e^{Lambda t} Tr(A Z) grouped by the sector's m_ex."""
        terms = self.alphas * self.weights * np.exp(self.eigenvalues * t)
        out: Dict[int, complex] = {}
        for sector, term in zip(self.sectors, terms):
            out[sector[0]] = out.get(sector[0], 0.0j) + complex(term)
        return out


def _populated_manifolds(rho: np.ndarray, n_atoms: int, floor: float = 1e-14) -> List[int]:
    counts = n_excited_diagonal(n_atoms).real.astype(int)
    populations = np.real(np.diag(rho))
    return sorted({int(c) for c, p in zip(counts, populations) if abs(p) > floor})


def decompose_initial_state(rho0: np.ndarray, eigenpairs: Sequence[LiouvillianEigenpair],
                            model: SpectralLiouvillian,
                            weights: Optional[Dict[int, float]] = None) -> Decomposition:
    """alpha_Lambda = Tr(X^dagger rho0) for population-type observables (l_ex = 0 sectors).

    weights maps excitation number to the observable's value on that manifold;
    the default is n_e itself.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    n_atoms = model.n_atoms
    if rho0.shape != (2**n_atoms, 2**n_atoms):
        raise DimensionMismatchError(f"rho0 shape {rho0.shape} does not match N={n_atoms}")
    weights = weights if weights is not None else {n: float(n) for n in range(n_atoms + 1)}

    present = {p.sector for p in eigenpairs if p.l_ex == 0}
    top = max(_populated_manifolds(rho0, n_atoms), default=0)
    missing = [s for s in model.sectors(0, top) if s not in present]
    if missing:
        raise EigensolverError(
            f"incomplete eigenpair set: {len(missing)} l_ex=0 sectors up to m_ex={top} missing, e.g. {missing[0]}"
        )

    selected = [p for p in eigenpairs if p.l_ex == 0 and p.m_ex <= top]
    if any(not p.adjoint for p in selected):
        raise EigensolverError("decomposition needs adjoint eigenoperators")

    blocks = {n: model.density_block(rho0, n, 0) for n in range(top + 1)}
    alphas = np.array([
        sum(complex(np.vdot(d, blocks[n])) for n, d in p.adjoint.items() if n in blocks)
        for p in selected
    ], dtype=complex)
    values = np.array([model.diagonal_weight(p, weights) for p in selected], dtype=complex)
    logger.debug(f"📐 Decomposed rho0 over {len(selected)} eigenpairs (N={n_atoms}, top manifold {top})")
    return Decomposition(
        eigenvalues=np.array([p.eigenvalue for p in selected], dtype=complex),
        sectors=[p.sector for p in selected],
        alphas=alphas,
        weights=values,
    )


def decompose_fully_inverted(geometry: ArrayGeometry, max_workers: int = 1) -> Tuple[Decomposition, SpectralLiouvillian]:
    n_atoms = geometry.atom_count
    model = SpectralLiouvillian.from_geometry(geometry, max_workers=max_workers)
    pairs = model.construct_all(0, with_adjoint=True, max_workers=max_workers)
    rho0 = np.zeros((2**n_atoms, 2**n_atoms), dtype=complex)
    rho0[-1, -1] = 1.0
    return decompose_initial_state(rho0, pairs, model), model


@dataclass(frozen=True)
class RBodyCheck:
    """r体観測量に対する多様体別寄与"""
    r: int
    times: np.ndarray
    full: np.ndarray
    restricted: np.ndarray
    by_manifold: Dict[int, np.ndarray]

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.full - self.restricted)))

    def late_time_deviation(self, fraction: float = 0.5) -> float:
        start = int(len(self.times) * (1.0 - fraction))
        scale = max(float(np.max(np.abs(self.full[start:]))), 1e-300)
        return float(np.max(np.abs(self.full[start:] - self.restricted[start:]))) / scale


def r_body_weights(n_atoms: int, r: int) -> Dict[int, float]:
    """sum over distinct ordered sites of sigma_eg...sigma_ge equals r! C(n, r) on manifold n."""
    return {n: float(factorial(r) * comb(n, r)) for n in range(n_atoms + 1)}


def r_body_observable_check(geometry: ArrayGeometry, r: int, times: Sequence[float],
                            max_workers: int = 1) -> RBodyCheck:
    """Numerical check of how much the r-excitation eigenoperators alone carry the r-body observable."""
    n_atoms = geometry.atom_count
    if n_atoms > MAX_RBODY_ATOMS:
        raise DimensionMismatchError(f"r-body check limited to N <= {MAX_RBODY_ATOMS}, got N={n_atoms}")
    if not 1 <= r <= n_atoms:
        raise ManifoldError(f"r must lie in 1..{n_atoms}, got {r}")

    model = SpectralLiouvillian.from_geometry(geometry, max_workers=max_workers)
    pairs = model.construct_all(0, with_adjoint=True, max_workers=max_workers)
    rho0 = np.zeros((2**n_atoms, 2**n_atoms), dtype=complex)
    rho0[-1, -1] = 1.0
    decomposition = decompose_initial_state(rho0, pairs, model, r_body_weights(n_atoms, r))

    t = np.asarray(times, dtype=float)
    phases = np.exp(np.multiply.outer(t, decomposition.eigenvalues))
    terms = phases * (decomposition.alphas * decomposition.weights)[None, :]
    m_of = np.array([s[0] for s in decomposition.sectors])
    by_manifold = {int(m): np.real(terms[:, m_of == m].sum(axis=1)) for m in np.unique(m_of)}
    full = np.real(terms.sum(axis=1))
    restricted = by_manifold.get(r, np.zeros_like(t))
    result = RBodyCheck(r, t, full, restricted, by_manifold)
    logger.info(
        f"🔍 r-body check N={n_atoms}, r={r}: late-time relative deviation {result.late_time_deviation():.3e}"
    )
    return result


def eigenstate_transition_rates(pair: LiouvillianEigenpair, model: SpectralLiouvillian) -> np.ndarray:
    """gamma_{xi, xi'} = -alpha_{xi' xi'} (Gamma^(2)_xi - Gamma^(1)_xi') from a diagonal two-excitation Z."""
    m_ex, l_ex, xi1, xi2 = pair.sector
    if m_ex != 2 or l_ex != 0 or xi1 != xi2:
        raise ManifoldError(f"transition rates need a diagonal two-excitation sector, got {pair.sector}")
    gamma_two = float(model.spectra[2].rates[xi1 - 1])
    gamma_one = model.spectra[1].rates
    alpha = np.real(np.diag(pair.right[1]))
    return -alpha * (gamma_two - gamma_one)


def gap_from_dense(matrix: LiouvillianMatrix, floor: float = 1e-9) -> float:
    """Smallest nonzero |Re Lambda| of the dense spectrum."""
    re = np.abs(np.real(matrix.eigenvalues()))
    nonzero = re[re > floor]
    return float(nonzero.min()) if nonzero.size else 0.0


def is_waveguide(geometry: ArrayGeometry) -> bool:
    return geometry.model is CouplingModel.WAVEGUIDE
