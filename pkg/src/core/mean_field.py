"""
Second-Order Cumulant Dynamics
二体相関までの平均場（キュムラント）方程式

The state is the set of one-site reduced density matrices rho_i[a, c] and
ordered-pair matrices rho_ij[a, b, c, d] = <a_i b_j|rho|c_i d_j>, local
index 0 = g, 1 = e. The Lindbladian splits into single-site pieces L_i and
unordered pair pieces L_ij; the exact reduced equations are

    d rho_i  = L_i rho_i + sum_k Tr_k L_ik rho_ik
    d rho_ij = (L_i + L_j + L_ij) rho_ij + sum_{k != i,j} Tr_k (L_ik + L_jk) rho_ijk

and rho_ijk is closed by dropping the three-body cumulant. The coefficient
tensors are built from the 4x4 and 16x16 superoperator matrices of the
master equation (row-major vectorization), so no equation is written by hand.
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .coupling import ArrayGeometry, CouplingMatrices, build_coupling_matrices
from .errors import DimensionMismatchError, InsufficientEnsembleError, IntegrationError

if TYPE_CHECKING:
    from .jump_dynamics import ReducedMoments

logger = logging.getLogger(__name__)

POPULATION_FLAG_TOLERANCE = 1e-3
RESTART_STDERR_CEILING = 1e-2

_LOWER = np.array([[0.0, 1.0], [0.0, 0.0]])
_RAISE = _LOWER.T
_EXCITED = np.array([[0.0, 0.0], [0.0, 1.0]])
_I2 = np.eye(2)
_I4 = np.eye(4)


def _single_site_tensors():
    """4x4 pieces of L_a multiplying h_aa, conj(h_aa) and Gamma_aa, as [x, y, a, c]."""
    h_part = -1j * np.kron(_EXCITED, _I2)
    hc_part = 1j * np.kron(_I2, _EXCITED.T)
    jump = np.kron(_LOWER, _LOWER)
    return tuple(m.reshape(2, 2, 2, 2) for m in (h_part, hc_part, jump))


def _pair_tensors():
    """16x16 pieces of L_ab multiplying h_ab, conj(h_ab) and Gamma_ab, as [x, w, y, z, a, b, c, d]."""
    exchange = np.kron(_RAISE, _LOWER) + np.kron(_LOWER, _RAISE)
    lower_a = np.kron(_LOWER, _I2)
    lower_b = np.kron(_I2, _LOWER)
    h_part = -1j * np.kron(exchange, _I4)
    hc_part = 1j * np.kron(_I4, exchange.T)
    jump = np.kron(lower_b, lower_a) + np.kron(lower_a, lower_b)
    return tuple(m.reshape((2,) * 8) for m in (h_part, hc_part, jump))


_SINGLE = _single_site_tensors()
_PAIR = _pair_tensors()
_PAIR_TRACED = tuple(np.einsum("xwywabcd->xyabcd", t) for t in _PAIR)


@dataclass
class CumulantState:
    """一体・二体縮約密度行列"""
    one_body: np.ndarray
    two_body: np.ndarray

    def __post_init__(self):
        self.one_body = np.asarray(self.one_body, dtype=complex)
        self.two_body = np.asarray(self.two_body, dtype=complex)
        n = self.one_body.shape[0]
        if self.one_body.shape != (n, 2, 2) or self.two_body.shape != (n, n, 2, 2, 2, 2):
            raise DimensionMismatchError(
                f"inconsistent cumulant shapes {self.one_body.shape} and {self.two_body.shape}"
            )

    @property
    def n_atoms(self) -> int:
        return int(self.one_body.shape[0])

    @classmethod
    def product(cls, site_matrices: np.ndarray) -> "CumulantState":
        rho = np.asarray(site_matrices, dtype=complex)
        pairs = np.einsum("iac,jbd->ijabcd", rho, rho)
        idx = np.arange(rho.shape[0])
        pairs[idx, idx] = 0.0
        return cls(rho, pairs)

    @classmethod
    def fully_inverted(cls, n_atoms: int) -> "CumulantState":
        return cls.product(np.broadcast_to(_EXCITED, (n_atoms, 2, 2)))

    @classmethod
    def clock(cls, n_atoms: int, phase_per_site: float) -> "CumulantState":
        """(|g> + e^{i k_L z_n}|e>)/sqrt(2) on every site, z_n = n*d."""
        phases = np.exp(1j * phase_per_site * np.arange(1, n_atoms + 1))
        rho = np.empty((n_atoms, 2, 2), dtype=complex)
        rho[:, 0, 0] = 0.5
        rho[:, 1, 1] = 0.5
        rho[:, 0, 1] = 0.5 * np.conj(phases)
        rho[:, 1, 0] = 0.5 * phases
        return cls.product(rho)

    def moment(self, site: int, a: int, b: int) -> complex:
        """<sigma_ab> = <b|rho|a> for 1-based site."""
        return complex(self.one_body[site - 1, b, a])

    def pair_moment(self, i: int, j: int, a: int, b: int, c: int, d: int) -> complex:
        """<sigma_ab^i sigma_cd^j> for 1-based sites i != j."""
        return complex(self.two_body[i - 1, j - 1, b, d, a, c])

    def n_excited(self) -> float:
        return float(np.sum(self.one_body[:, 1, 1].real))

    def cumulants(self) -> np.ndarray:
        c = self.two_body - np.einsum("iac,jbd->ijabcd", self.one_body, self.one_body)
        idx = np.arange(self.n_atoms)
        c[idx, idx] = 0.0
        return c

    def hermiticity_error(self) -> float:
        one = np.max(np.abs(self.one_body - np.conj(np.swapaxes(self.one_body, 1, 2))))
        two = np.max(np.abs(self.two_body - np.conj(self.two_body.transpose(0, 1, 4, 5, 2, 3))))
        return float(max(one, two))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.one_body.ravel(), self.two_body.ravel()])

    @classmethod
    def from_vector(cls, y: np.ndarray, n_atoms: int) -> "CumulantState":
        split = 4 * n_atoms
        return cls(y[:split].reshape(n_atoms, 2, 2), y[split:].reshape(n_atoms, n_atoms, 2, 2, 2, 2))


def coherence_sum(state: CumulantState, phase_per_site: float) -> complex:
    """sum_n e^{i k_L z_n} <sigma_eg^n> = sum_n e^{i k_L z_n} rho_n[g, e]."""
    phases = np.exp(1j * phase_per_site * np.arange(1, state.n_atoms + 1))
    return complex(np.sum(phases * state.one_body[:, 0, 1]))


class _CumulantGenerator:
    """Coefficient tensors for one coupling configuration."""

    def __init__(self, cm: CouplingMatrices, detuning: float):
        h = cm.with_detuning(detuning)
        gamma = np.asarray(cm.gamma, dtype=float)
        n = cm.atom_count
        diag = np.diag(h)
        self.single = (
            np.einsum("i,xyac->ixyac", diag, _SINGLE[0])
            + np.einsum("i,xyac->ixyac", np.conj(diag), _SINGLE[1])
            + np.einsum("i,xyac->ixyac", np.diag(gamma), _SINGLE[2])
        )
        off = ~np.eye(n, dtype=bool)
        h_off = np.where(off, h, 0.0)
        g_off = np.where(off, gamma, 0.0)
        self.pair = (
            np.einsum("ij,xwyzabcd->ijxwyzabcd", h_off, _PAIR[0])
            + np.einsum("ij,xwyzabcd->ijxwyzabcd", np.conj(h_off), _PAIR[1])
            + np.einsum("ij,xwyzabcd->ijxwyzabcd", g_off, _PAIR[2])
        )
        self.traced = (
            np.einsum("ij,xyapcq->ijxyapcq", h_off, _PAIR_TRACED[0])
            + np.einsum("ij,xyapcq->ijxyapcq", np.conj(h_off), _PAIR_TRACED[1])
            + np.einsum("ij,xyapcq->ijxyapcq", g_off, _PAIR_TRACED[2])
        )
        self.n_atoms = n

    def derivative(self, state: CumulantState) -> CumulantState:
        rho1, rho2 = state.one_body, state.two_body
        pt = self.traced
        idx = np.arange(self.n_atoms)

        exchange = np.einsum("ikxyapcq,ikapcq->ikxy", pt, rho2)
        d1 = np.einsum("ixyac,iac->ixy", self.single, rho1) + exchange.sum(axis=1)

        cum = state.cumulants()
        bath = np.einsum("ikxyapcq,kpq->ikxyac", pt, rho1)
        spectator = np.einsum("ikxyapcq,iac->ikxypq", pt, rho1)
        exchange_rest = exchange.sum(axis=1)[:, None] - exchange
        bath_rest = bath.sum(axis=1)[:, None] - bath
        one_sided = (
            np.einsum("ijxy,jbd->ijxbyd", exchange_rest, rho1)
            + np.einsum("ijxyac,ijabcd->ijxbyd", bath_rest, cum)
            + np.einsum("ikxypq,jkbpdq->ijxbyd", spectator, cum)
        )
        three_body = one_sided + one_sided.transpose(1, 0, 3, 2, 5, 4)

        local = (
            np.einsum("ixyac,ijabcd->ijxbyd", self.single, rho2)
            + np.einsum("jwzbd,ijabcd->ijawcz", self.single, rho2)
            + np.einsum("ijxwyzabcd,ijabcd->ijxwyz", self.pair, rho2)
        )
        d2 = local + three_body
        d2[idx, idx] = 0.0
        return CumulantState(d1, d2)


def time_derivative(cm: CouplingMatrices, state: CumulantState, detuning: float = 0.0) -> CumulantState:
    """Right-hand side of the cumulant equations at one state."""
    if state.n_atoms != cm.atom_count:
        raise DimensionMismatchError(f"state has N={state.n_atoms}, couplings N={cm.atom_count}")
    return _CumulantGenerator(cm, detuning).derivative(state)


@dataclass
class MeanFieldSeries:
    """平均場時系列"""
    times: np.ndarray
    n_excited: np.ndarray
    coherence: np.ndarray
    states: List[CumulantState] = field(default_factory=list)
    flagged_times: List[float] = field(default_factory=list)


def evolve_cumulant(geometry: ArrayGeometry, initial: CumulantState, times: Sequence[float],
                    detuning: float = 0.0, phase_per_site: float = 0.0, method: str = "DOP853",
                    rtol: float = 1e-8, atol: float = 1e-10, keep_states: bool = False,
                    cm: Optional[CouplingMatrices] = None) -> MeanFieldSeries:
    """二次キュムラント方程式の時間発展"""
    cm = cm if cm is not None else build_coupling_matrices(geometry)
    n_atoms = cm.atom_count
    if initial.n_atoms != n_atoms:
        raise DimensionMismatchError(f"initial state has N={initial.n_atoms}, geometry N={n_atoms}")
    if initial.hermiticity_error() > 1e-10:
        raise ValueError(f"initial moments violate Hermiticity pairing by {initial.hermiticity_error():.2e}")

    times = np.asarray(times, dtype=float)
    generator = _CumulantGenerator(cm, detuning)

    def rhs(_t: float, y: np.ndarray) -> np.ndarray:
        return generator.derivative(CumulantState.from_vector(y, n_atoms)).to_vector()

    sol = solve_ivp(rhs, (float(times[0]), float(times[-1])), initial.to_vector(),
                    method=method, t_eval=times, rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationError(f"cumulant integration failed: {sol.message}",
                               context={"t_reached": float(sol.t[-1]) if sol.t.size else None})

    n_e = np.empty(times.size)
    coherence = np.empty(times.size, dtype=complex)
    states: List[CumulantState] = []
    flagged: List[float] = []
    for k in range(times.size):
        state = CumulantState.from_vector(sol.y[:, k], n_atoms)
        n_e[k] = state.n_excited()
        coherence[k] = coherence_sum(state, phase_per_site)
        populations = state.one_body[:, 1, 1].real
        if populations.min() < -POPULATION_FLAG_TOLERANCE or populations.max() > 1.0 + POPULATION_FLAG_TOLERANCE:
            flagged.append(float(times[k]))
        if keep_states:
            states.append(state)

    if flagged:
        logger.warning(f"⚠️ Closure produced unphysical populations at {len(flagged)} grid times (first t={flagged[0]:.3f})")
    logger.info(f"📈 Cumulant evolution finished: N={n_atoms}, t_end={times[-1]:.2f}, n_e(t_end)={n_e[-1]:.4f}")
    return MeanFieldSeries(times, n_e, coherence, states, flagged)


def restart_from_exact(moments: "ReducedMoments", stderr_ceiling: float = RESTART_STDERR_CEILING) -> CumulantState:
    """Cumulant state estimated from an ensemble of exact trajectories."""
    worst = float(np.max(moments.two_body_stderr)) if moments.two_body_stderr.size else 0.0
    if worst >= stderr_ceiling:
        raise InsufficientEnsembleError(
            f"two-body moment standard error {worst:.3e} exceeds {stderr_ceiling:.1e} "
            f"with {moments.n_trajectories} trajectories"
        )
    one = 0.5 * (moments.one_body + np.conj(np.swapaxes(moments.one_body, 1, 2)))
    two = 0.5 * (moments.two_body + np.conj(moments.two_body.transpose(0, 1, 4, 5, 2, 3)))
    logger.info(f"🔁 Mean-field restart at t={moments.time:.3f} from {moments.n_trajectories} trajectories")
    return CumulantState(one, two)
