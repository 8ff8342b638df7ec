"""
Photon-Mediated Coupling Kernels
双極子間結合カーネルと結合行列の構築

Units: hbar = 1, Gamma0 = 1, lengths are dimensionless k0*r.
Element convention: h[m, n] = J_mn - i*Gamma_mn/2 with
h = -(Gamma0/2) * g, where g is the dipole-projected Green's function
normalized so that Im g(0) = 1. The coherent sign therefore follows the
printed kernels directly.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np

from .errors import CouplingMatrixError, GeometryError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

GAMMA0 = 1.0
PSD_TOLERANCE = 1e-10


class CouplingModel(Enum):
    """結合モデル選択"""
    FREE_SPACE_PARALLEL = "free_space_parallel"
    FREE_SPACE_PERPENDICULAR = "free_space_perpendicular"
    WAVEGUIDE = "waveguide"
    CUBE_3D = "cube_3d"
    INDEPENDENT = "independent"

    @property
    def is_chain(self) -> bool:
        return self is not CouplingModel.CUBE_3D


def _check_positive(x: ArrayLike, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0):
        raise GeometryError(f"{name} must be > 0 (self-coupling lives on the diagonal), got {x}")
    return arr


def _as_output(value: np.ndarray, like: ArrayLike):
    return complex(value) if np.ndim(like) == 0 else value


def green_parallel(x: ArrayLike):
    """Dipoles parallel to the separation: -(3/2)(1 - ix)e^{ix}/x^3.

    Dissipative part Gamma(x) = 3(sin x - x cos x)/x^3.
    """
    arr = _check_positive(x)
    value = -1.5 * (1.0 - 1j * arr) * np.exp(1j * arr) / arr**3
    return _as_output(value, x)


def green_perpendicular(x: ArrayLike):
    """Dipoles perpendicular to the separation: -(3/4)(x^2 + ix - 1)e^{ix}/x^3.

    Dissipative part Gamma(x) = (3/2)(x^2 sin x + x cos x - sin x)/x^3.
    """
    arr = _check_positive(x)
    value = -0.75 * (arr**2 + 1j * arr - 1.0) * np.exp(1j * arr) / arr**3
    return _as_output(value, x)


def green_3d(delta_r) -> complex:
    """Dipoles along z at arbitrary separation delta_r (k0 units)."""
    delta = np.asarray(delta_r, dtype=float)
    if delta.shape[-1] != 3:
        raise GeometryError(f"delta_r must be a 3-vector, got shape {delta.shape}")
    x = np.linalg.norm(delta, axis=-1)
    _check_positive(x, "|delta_r|")
    value = _green_3d_kernel(x, delta[..., 2])
    return complex(value) if np.ndim(x) == 0 else value


def _green_3d_kernel(x: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    angular = x**2 + 1j * x - 1.0 + zeta**2 * (-1.0 - 3j / x + 3.0 / x**2)
    return -0.75 * angular * np.exp(1j * x) / x**3


def waveguide_element(x: ArrayLike):
    """Waveguide coupling -i(Gamma0/2)e^{ix}; x = 0 gives the diagonal value."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0.0):
        raise GeometryError(f"waveguide separation must be >= 0, got {x}")
    value = -0.5j * GAMMA0 * np.exp(1j * arr)
    return _as_output(value, x)


def dissipative_part(element: ArrayLike) -> ArrayLike:
    """Gamma = -2 Im(element)."""
    return -2.0 * np.imag(element)


def coherent_part(element: ArrayLike) -> ArrayLike:
    return np.real(element)


@dataclass(frozen=True)
class ArrayGeometry:
    """原子配置（k0単位）"""
    positions: np.ndarray
    model: CouplingModel
    lattice_constant_k0d: float

    @property
    def atom_count(self) -> int:
        return int(self.positions.shape[0])

    @property
    def z(self) -> np.ndarray:
        return self.positions[:, 2]

    def validate(self) -> None:
        """配置不変条件の検証"""
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise GeometryError(f"positions must be an (N, 3) array, got shape {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise GeometryError("positions must be finite")
        n = pos.shape[0]
        if n > 1:
            diff = pos[:, None, :] - pos[None, :, :]
            dist = np.linalg.norm(diff, axis=-1)
            off = dist[~np.eye(n, dtype=bool)]
            if np.min(off) <= 0.0:
                raise GeometryError("duplicate atom positions")

        if self.model.is_chain:
            if n > 1 and not np.allclose(pos[:, :2], 0.0):
                raise GeometryError("chain positions must lie on the z axis")
            if n > 1:
                steps = np.diff(pos[:, 2])
                if not np.allclose(steps, self.lattice_constant_k0d, rtol=1e-12, atol=1e-12):
                    raise GeometryError(
                        f"chain spacing must be uniform k0d={self.lattice_constant_k0d}"
                    )
        else:
            side = int(round(n ** (1.0 / 3.0)))
            if side**3 != n:
                raise GeometryError(f"Cube3D needs a perfect cube atom count, got N={n}")
            expected = _cube_positions(side, self.lattice_constant_k0d)
            if not np.allclose(np.sort(pos, axis=0), np.sort(expected + pos.min(axis=0), axis=0)):
                raise GeometryError("Cube3D positions must form a simple cubic lattice")


def _cube_positions(side: int, k0d: float) -> np.ndarray:
    grid = np.arange(side, dtype=float) * k0d
    xs, ys, zs = np.meshgrid(grid, grid, grid, indexing="ij")
    return np.column_stack([xs.ravel(), ys.ravel(), zs.ravel()])


def chain_geometry(n_atoms: int, k0d: float, model: CouplingModel = CouplingModel.FREE_SPACE_PARALLEL) -> ArrayGeometry:
    """Chain along z with z_n = n*d for n = 1..N."""
    if n_atoms < 1:
        raise GeometryError(f"atom count must be positive, got {n_atoms}")
    if model is CouplingModel.CUBE_3D:
        raise GeometryError("use cube_geometry for the 3D model")
    if k0d <= 0.0:
        raise GeometryError(f"lattice constant must be > 0, got {k0d}")
    positions = np.zeros((n_atoms, 3))
    positions[:, 2] = np.arange(1, n_atoms + 1) * k0d
    geometry = ArrayGeometry(positions=positions, model=model, lattice_constant_k0d=float(k0d))
    geometry.validate()
    return geometry


def cube_geometry(side: int, k0d: float) -> ArrayGeometry:
    """Simple cubic lattice of side**3 atoms, dipoles along z."""
    if side < 1:
        raise GeometryError(f"cube side must be positive, got {side}")
    if k0d <= 0.0:
        raise GeometryError(f"lattice constant must be > 0, got {k0d}")
    geometry = ArrayGeometry(
        positions=_cube_positions(side, k0d),
        model=CouplingModel.CUBE_3D,
        lattice_constant_k0d=float(k0d),
    )
    geometry.validate()
    return geometry


def spacing_from_wavelength_ratio(d_over_lambda: float) -> float:
    """k0*d for d given in units of the transition wavelength."""
    return 2.0 * np.pi * d_over_lambda


@dataclass(frozen=True)
class CouplingMatrices:
    """有効ハミルトニアン結合行列と散逸行列"""
    h_offdiag: np.ndarray
    gamma: np.ndarray
    channel_rates: np.ndarray
    channel_vectors: np.ndarray
    gamma0: float = GAMMA0

    @property
    def atom_count(self) -> int:
        return int(self.gamma.shape[0])

    def hermitian_part(self) -> np.ndarray:
        """Coefficients of (H + H^dagger)/2; for a complex symmetric h this is Re(h)."""
        return np.real(self.h_offdiag).astype(complex)

    def with_detuning(self, detuning: float, coherent_only: bool = False) -> np.ndarray:
        """Full single-particle coefficient matrix including -delta * sum sigma_ee."""
        h = self.hermitian_part() if coherent_only else self.h_offdiag.copy()
        h[np.diag_indices_from(h)] += -detuning
        return h


def _pair_elements(geometry: ArrayGeometry) -> np.ndarray:
    pos = np.asarray(geometry.positions, dtype=float)
    n = pos.shape[0]
    diff = pos[:, None, :] - pos[None, :, :]
    off = ~np.eye(n, dtype=bool)
    elements = np.zeros((n, n), dtype=complex)
    if n == 1:
        return elements

    model = geometry.model
    if model is CouplingModel.INDEPENDENT:
        return elements
    if model is CouplingModel.CUBE_3D:
        dist = np.linalg.norm(diff, axis=-1)
        elements[off] = _green_3d_kernel(dist[off], diff[..., 2][off])
        return elements

    sep = np.abs(diff[..., 2])
    if model is CouplingModel.FREE_SPACE_PARALLEL:
        elements[off] = green_parallel(sep[off])
    elif model is CouplingModel.FREE_SPACE_PERPENDICULAR:
        elements[off] = green_perpendicular(sep[off])
    elif model is CouplingModel.WAVEGUIDE:
        elements[off] = waveguide_element(sep[off])
    else:
        raise GeometryError(f"unknown coupling model {model}")
    return elements


def gamma_channels(gamma: np.ndarray, tolerance: float = PSD_TOLERANCE) -> Tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of the dissipation matrix into collective decay channels.

    Near-zero negative eigenvalues above -tolerance*scale are clamped to 0.
    """
    rates, vectors = np.linalg.eigh(gamma)
    scale = max(1.0, float(np.max(np.abs(rates)))) if rates.size else 1.0
    floor = -tolerance * scale
    if rates.size and rates.min() < floor:
        raise CouplingMatrixError(
            f"gamma matrix is not positive semidefinite: min eigenvalue {rates.min():.3e}"
        )
    rates = np.where(rates < 0.0, 0.0, rates)
    return rates, vectors


def build_coupling_matrices(geometry: ArrayGeometry) -> CouplingMatrices:
    """結合行列の構築"""
    geometry.validate()
    n = geometry.atom_count
    h = _pair_elements(geometry)
    h = 0.5 * (h + h.T)
    h[np.diag_indices(n)] = -0.5j * GAMMA0

    gamma = -2.0 * np.imag(h)
    gamma = 0.5 * (gamma + gamma.T)
    gamma[np.diag_indices(n)] = GAMMA0
    h = np.real(h) - 0.5j * gamma

    rates, vectors = gamma_channels(gamma)
    for arr in (h, gamma, rates, vectors):
        arr.setflags(write=False)

    logger.debug(
        f"🔧 Coupling matrices built: model={geometry.model.value}, N={n}, "
        f"k0d={geometry.lattice_constant_k0d:.4f}, active channels={int(np.sum(rates > 0))}"
    )
    return CouplingMatrices(h_offdiag=h, gamma=gamma, channel_rates=rates, channel_vectors=vectors)
