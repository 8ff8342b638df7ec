"""
Collective Decay Spectra
多様体ごとの有効ハミルトニアン対角化・分類・スケーリング解析
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .coupling import ArrayGeometry, CouplingMatrices, build_coupling_matrices, cube_geometry
from .errors import (
    DimensionMismatchError,
    EigensolverError,
    FitError,
    ManifoldError,
    UnsupportedGeometryError,
)
from .manifold_basis import (
    ManifoldBasis,
    ManifoldVector,
    enumerate_manifold,
    excitation_hole_permutation,
    project_heff,
)

logger = logging.getLogger(__name__)

RESIDUAL_TOLERANCE = 1e-8
RATE_TIE_DECIMALS = 10
FOURIER_PADDING = 4


@dataclass(frozen=True)
class EigenMode:
    """有効ハミルトニアンの固有モード"""
    m_ex: int
    xi: int
    omega: float
    gamma: float
    right: ManifoldVector
    left: ManifoldVector
    k: Optional[float] = None

    @property
    def eigenvalue(self) -> complex:
        return complex(self.omega, -0.5 * self.gamma)


class ManifoldSpectrum(Sequence):
    """Modes of one manifold sorted by rate, with the dense eigenvector matrices.

    right[:, i] is |psi_{i+1}>, left[i, :] is <phi_{i+1}| as a row (left @ right = 1).
    """

    def __init__(self, basis: ManifoldBasis, eigenvalues: np.ndarray, right: np.ndarray,
                 left: np.ndarray, wavevectors: Optional[np.ndarray] = None):
        self.basis = basis
        self.eigenvalues = eigenvalues
        self.right = right
        self.left = left
        self.wavevectors = wavevectors
        self._modes: Optional[List[EigenMode]] = None

    @property
    def m_ex(self) -> int:
        return self.basis.m_ex

    @property
    def rates(self) -> np.ndarray:
        return -2.0 * np.imag(self.eigenvalues)

    @property
    def shifts(self) -> np.ndarray:
        return np.real(self.eigenvalues)

    @property
    def modes(self) -> List[EigenMode]:
        if self._modes is None:
            self._modes = [self._mode(i) for i in range(len(self.eigenvalues))]
        return self._modes

    def _mode(self, i: int) -> EigenMode:
        k = None if self.wavevectors is None else float(self.wavevectors[i])
        return EigenMode(
            m_ex=self.basis.m_ex,
            xi=i + 1,
            omega=float(self.shifts[i]),
            gamma=float(self.rates[i]),
            right=ManifoldVector(self.basis, self.right[:, i]),
            left=ManifoldVector(self.basis, np.conj(self.left[i, :])),
            k=k,
        )

    def __getitem__(self, index):
        return self.modes[index]

    def __len__(self) -> int:
        return len(self.eigenvalues)

    def __iter__(self) -> Iterator[EigenMode]:
        return iter(self.modes)

    def completeness_error(self) -> float:
        """Frobenius distance of sum |psi><phi| from the identity."""
        dim = self.right.shape[0]
        return float(np.linalg.norm(self.right @ self.left - np.eye(dim)))

    def biorthogonality_error(self) -> float:
        dim = self.right.shape[0]
        return float(np.max(np.abs(self.left @ self.right - np.eye(dim)))) if dim else 0.0


def _check_complex_symmetric(matrix: np.ndarray, m_ex: Optional[int]) -> None:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {matrix.shape}")
    scale = max(1.0, float(np.max(np.abs(matrix)))) if matrix.size else 1.0
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-12 * scale):
        raise EigensolverError("input matrix is not complex symmetric", manifold=m_ex)


def _sort_order(eigenvalues: np.ndarray) -> np.ndarray:
    rates = np.round(-2.0 * np.imag(eigenvalues), RATE_TIE_DECIMALS)
    shifts = np.round(np.real(eigenvalues), RATE_TIE_DECIMALS)
    index = np.arange(len(eigenvalues))
    return np.lexsort((index, shifts, rates))


def diagonalize_manifold(matrix: np.ndarray, basis: ManifoldBasis,
                         geometry: Optional[ArrayGeometry] = None) -> ManifoldSpectrum:
    """多様体行列の完全対角化（双直交規格化）"""
    matrix = np.asarray(matrix, dtype=complex)
    m_ex = basis.m_ex
    _check_complex_symmetric(matrix, m_ex)
    if matrix.shape[0] != basis.size:
        raise DimensionMismatchError(
            f"matrix dimension {matrix.shape[0]} does not match basis size {basis.size}"
        )

    try:
        eigenvalues, right = scipy.linalg.eig(matrix, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigensolverError(f"eigensolver did not converge: {e}", manifold=m_ex) from e

    order = _sort_order(eigenvalues)
    eigenvalues = eigenvalues[order]
    right = right[:, order]
    right = right / np.linalg.norm(right, axis=0, keepdims=True)

    try:
        left = scipy.linalg.inv(right)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigensolverError(f"eigenvector matrix is singular: {e}", manifold=m_ex) from e

    norm = max(float(np.linalg.norm(matrix, ord=1)), 1e-300)
    residual = np.linalg.norm(matrix @ right - right * eigenvalues[None, :], axis=0)
    worst = float(np.max(residual)) if residual.size else 0.0
    if worst > RESIDUAL_TOLERANCE * max(norm, 1.0):
        raise EigensolverError(f"eigenpair residual {worst:.3e} exceeds tolerance", manifold=m_ex)

    rates = -2.0 * np.imag(eigenvalues)
    if rates.size and rates.min() < -1e-8:
        logger.warning(f"⚠️ Negative decay rate {rates.min():.3e} in m_ex={m_ex}")

    wavevectors = None
    if geometry is not None and m_ex == 1 and geometry.model.is_chain:
        wavevectors = np.array([_dominant_k(right[:, i]) for i in range(right.shape[1])])

    logger.debug(f"✅ Manifold m_ex={m_ex} diagonalized: dim={basis.size}, min rate={rates.min() if rates.size else 0:.3e}")
    return ManifoldSpectrum(basis, eigenvalues, right, left, wavevectors)


def diagonalize(cm: CouplingMatrices, m_ex: int, geometry: Optional[ArrayGeometry] = None) -> ManifoldSpectrum:
    basis = enumerate_manifold(cm.atom_count, m_ex)
    return diagonalize_manifold(project_heff(cm, basis), basis, geometry)


def compute_spectra(cm: CouplingMatrices, manifolds: Iterable[int],
                    geometry: Optional[ArrayGeometry] = None,
                    max_workers: int = 1) -> Dict[int, ManifoldSpectrum]:
    """Independent per-manifold diagonalizations, optionally in parallel."""
    manifolds = list(manifolds)
    if max_workers <= 1 or len(manifolds) <= 1:
        return {m: diagonalize(cm, m, geometry) for m in manifolds}
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(lambda m: diagonalize(cm, m, geometry), manifolds))
    return dict(zip(manifolds, results))


def _dominant_k(amplitudes: np.ndarray) -> float:
    n = len(amplitudes)
    size = FOURIER_PADDING * n
    spectrum = np.abs(np.fft.fft(amplitudes, n=size))
    grid = 2.0 * np.pi * np.arange(size) / size
    grid = np.where(grid > np.pi, grid - 2.0 * np.pi, grid)
    peak = int(np.argmax(spectrum))
    k = float(grid[peak])
    mirror = (size - peak) % size
    if spectrum[mirror] >= spectrum[peak] * (1.0 - 1e-6):
        k = abs(k)
    if np.isclose(k, -np.pi):
        k = np.pi
    return k


def dominant_wavevector(mode: EigenMode, geometry: ArrayGeometry) -> float:
    """主要波数 k*d（第1ブリルアンゾーン内）"""
    if not geometry.model.is_chain:
        raise UnsupportedGeometryError("dominant wavevector is defined for chains only")
    if mode.m_ex != 1:
        raise UnsupportedGeometryError(f"dominant wavevector needs a single-excitation mode, got m_ex={mode.m_ex}")
    return _dominant_k(mode.right.amplitudes)


def fermionic_ansatz(mode_k1: EigenMode, mode_k2: EigenMode) -> ManifoldVector:
    """反対称（フェルミオン的）2励起試行状態"""
    if mode_k1.m_ex != 1 or mode_k2.m_ex != 1:
        raise ManifoldError("fermionic ansatz needs two single-excitation modes")
    n_atoms = mode_k1.right.basis.n_atoms
    if mode_k2.right.basis.n_atoms != n_atoms:
        raise DimensionMismatchError("modes belong to different chains")
    c1 = mode_k1.right.amplitudes
    c2 = mode_k2.right.amplitudes
    return antisymmetric_pair(c1, c2)


def antisymmetric_pair(c1: np.ndarray, c2: np.ndarray) -> ManifoldVector:
    n_atoms = len(c1)
    basis = enumerate_manifold(n_atoms, 2)
    m, n = basis.occupied[:, 0], basis.occupied[:, 1]
    amplitudes = c1[m] * c2[n] - c2[m] * c1[n]
    norm = np.linalg.norm(amplitudes)
    if norm < 1e-12:
        raise ManifoldError("identical modes give a vanishing antisymmetric state (Pauli exclusion)")
    return ManifoldVector(basis, amplitudes / norm)


def pair_population_map(v: ManifoldVector) -> np.ndarray:
    """|<e_m e_n|psi>|^2 as a symmetric N x N map with zero diagonal."""
    if v.basis.m_ex != 2:
        raise ManifoldError("pair population map needs a two-excitation vector")
    n_atoms = v.basis.n_atoms
    pop = np.zeros((n_atoms, n_atoms))
    m, n = v.basis.occupied[:, 0], v.basis.occupied[:, 1]
    weights = np.abs(v.amplitudes) ** 2
    pop[m, n] = weights
    pop[n, m] = weights
    return pop


def excitation_hole_map(mode: EigenMode, n_atoms: int) -> EigenMode:
    """励起-ホール交換による N - m_ex 多様体の固有モード予測"""
    basis = mode.right.basis
    if basis.n_atoms != n_atoms:
        raise DimensionMismatchError(f"mode belongs to N={basis.n_atoms}, not N={n_atoms}")
    target = enumerate_manifold(n_atoms, n_atoms - mode.m_ex)
    perm = excitation_hole_permutation(basis)
    right = np.zeros(target.size, dtype=complex)
    left = np.zeros(target.size, dtype=complex)
    right[perm] = mode.right.amplitudes
    left[perm] = mode.left.amplitudes
    return EigenMode(
        m_ex=target.m_ex,
        xi=mode.xi,
        omega=mode.omega,
        gamma=mode.gamma + (n_atoms - 2 * mode.m_ex),
        right=ManifoldVector(target, right),
        left=ManifoldVector(target, left),
        k=mode.k,
    )


def degenerate_groups(spectrum: ManifoldSpectrum, tolerance: float = 1e-10) -> List[List[int]]:
    """Groups of 0-based mode indices with coinciding eigenvalues."""
    groups: List[List[int]] = []
    values = spectrum.eigenvalues
    used = np.zeros(len(values), dtype=bool)
    for i in range(len(values)):
        if used[i]:
            continue
        close = np.flatnonzero(np.abs(values - values[i]) <= tolerance * max(1.0, abs(values[i])))
        used[close] = True
        groups.append([int(j) for j in close])
    return groups


class ScalingModel(Enum):
    """スケーリング則の種類"""
    XI_SQUARED = "xi-squared"
    N_CUBED = "N-cubed"
    ALPHA_3D = "3D-alpha"
    BETA_3D = "3D-beta"
    POWER_LAW_ETA = "power-law-eta"
    DENSITY_KAPPA = "density-kappa"


# Gamma_1 ~ N^(-alpha): the reported exponent is the negated log-log slope
NEGATED_SLOPE_MODELS = frozenset({ScalingModel.ALPHA_3D})


@dataclass(frozen=True)
class ScalingFit:
    """べき則フィット結果"""
    model: ScalingModel
    exponent: float
    window: Tuple[float, float]
    residual: float
    prefactor: float
    n_points: int


def fit_scaling(data: Sequence[Tuple[float, float]], model, window: Optional[Tuple[float, float]] = None) -> ScalingFit:
    """log-log 最小二乗フィット"""
    model = ScalingModel(model) if not isinstance(model, ScalingModel) else model
    pts = np.asarray(data, dtype=float).reshape(-1, 2)
    if window is not None:
        lo, hi = window
        if lo > hi:
            raise FitError(f"empty fit window {window}")
        pts = pts[(pts[:, 0] >= lo) & (pts[:, 0] <= hi)]
    else:
        window = (float(pts[:, 0].min()), float(pts[:, 0].max())) if len(pts) else (np.nan, np.nan)
    if len(pts) < 3:
        raise FitError(f"need at least 3 points in window {window}, got {len(pts)}")
    if np.any(pts <= 0.0) or not np.all(np.isfinite(pts)):
        raise FitError("scaling fit needs strictly positive finite data")
    logx, logy = np.log(pts[:, 0]), np.log(pts[:, 1])
    slope, intercept = np.polyfit(logx, logy, 1)
    residual = float(np.sqrt(np.mean((logy - (slope * logx + intercept)) ** 2)))
    exponent = -float(slope) if model in NEGATED_SLOPE_MODELS else float(slope)
    return ScalingFit(model, exponent, (float(window[0]), float(window[1])), residual, float(np.exp(intercept)), len(pts))


def density_of_states_exponent(rates: Sequence[float], xi_window: Tuple[int, int]) -> ScalingFit:
    """kappa from the cumulative count of subradiant rates: xi ~ Gamma^(1 + kappa)."""
    rates = np.sort(np.asarray(rates, dtype=float))
    xi = np.arange(1, len(rates) + 1, dtype=float)
    lo, hi = xi_window
    sel = (xi >= lo) & (xi <= hi)
    fit = fit_scaling(np.column_stack([rates[sel], xi[sel]]), ScalingModel.DENSITY_KAPPA)
    return ScalingFit(ScalingModel.DENSITY_KAPPA, fit.exponent - 1.0, (float(lo), float(hi)),
                      fit.residual, fit.prefactor, fit.n_points)


def liouvillian_gap(spectra: Dict[int, ManifoldSpectrum], floor: float = 1e-12) -> float:
    """Smallest nonzero (Gamma_a + Gamma_b)/2 with the ground state included: min rate / 2."""
    rates = np.concatenate([s.rates for m, s in spectra.items() if m > 0])
    nonzero = rates[rates > floor]
    if nonzero.size == 0:
        raise EigensolverError("no decaying mode available for the gap")
    return float(nonzero.min() / 2.0)


@dataclass(frozen=True)
class CubeSpectrum:
    """3D立方格子の単一励起スペクトル"""
    side: int
    k0d: float
    rates: np.ndarray
    shifts: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.side**3


def cube_spectrum(side: int, k0d: float) -> CubeSpectrum:
    """Eigenvalues only; no eigenvectors are formed."""
    cm = build_coupling_matrices(cube_geometry(side, k0d))
    try:
        eigenvalues = scipy.linalg.eigvals(np.asarray(cm.h_offdiag))
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigensolverError(f"cube eigensolve failed for side={side}: {e}", manifold=1) from e
    eigenvalues = eigenvalues[_sort_order(eigenvalues)]
    logger.info(f"🧊 Cube spectrum side={side} (N={side**3}) k0d={k0d:.4f}: min rate {(-2*eigenvalues.imag).min():.3e}")
    return CubeSpectrum(side, k0d, -2.0 * np.imag(eigenvalues), np.real(eigenvalues))


def dispersion_relation(geometry: ArrayGeometry) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(k*d, omega, Gamma) of the single-excitation modes, sorted by k."""
    if not geometry.model.is_chain:
        raise UnsupportedGeometryError("dispersion relation is defined for chains only")
    spectrum = diagonalize(build_coupling_matrices(geometry), 1, geometry)
    k = spectrum.wavevectors
    order = np.argsort(k, kind="stable")
    return k[order], spectrum.shifts[order], spectrum.rates[order]


def band_flatness(geometry: ArrayGeometry) -> float:
    """Spread of shifts over guided modes (|k| > k0); smaller means flatter."""
    k, omega, _ = dispersion_relation(geometry)
    guided = np.abs(k) > geometry.lattice_constant_k0d
    if not np.any(guided):
        raise UnsupportedGeometryError("no guided modes: lattice constant must be below half a wavelength")
    return float(np.std(omega[guided]))
