"""
Quantum-Jump Trajectory Engine
量子ジャンプ・モンテカルロ法による全状態空間の時間発展

State vectors live in the full 2^N space; basis index s has bit n-1 set when
atom n is excited. Between jumps the state follows H_eff (plus -delta on every
excited site); a jump happens when the squared norm falls below a uniform
random threshold and picks one of the collective channels obtained from the
eigen-decomposition of the gamma matrix.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numba import njit
from scipy.integrate import solve_ivp

from ..infrastructure.seeding import trajectory_rng
from .clock_analysis import FringeSurface, extract_ridge
from .coupling import ArrayGeometry, CouplingMatrices, build_coupling_matrices
from .errors import DimensionMismatchError, IntegrationError, LatticeClockError
from .manifold_basis import excitation_numbers, restrict_full_state
from .spectrum import EigenMode, ManifoldSpectrum

logger = logging.getLogger(__name__)

MAX_TRAJECTORY_ATOMS = 20
DEFAULT_TRAJECTORIES = 10_000


# =============================================================================
# Matrix-free kernels
# =============================================================================

@njit(nogil=True, cache=True)
def _apply_heff(h, psi, n_atoms, out):
    dim = psi.shape[0]
    for s in range(dim):
        amp = psi[s]
        if amp == 0j:
            continue
        for n in range(n_atoms):
            if (s >> n) & 1:
                out[s] += h[n, n] * amp
                hole = s ^ (1 << n)
                for m in range(n_atoms):
                    if m != n and ((s >> m) & 1) == 0:
                        out[hole | (1 << m)] += h[m, n] * amp


@njit(nogil=True, cache=True)
def _apply_lowering(weights, psi, n_atoms, out):
    dim = psi.shape[0]
    for s in range(dim):
        amp = psi[s]
        if amp == 0j:
            continue
        for n in range(n_atoms):
            if (s >> n) & 1:
                out[s ^ (1 << n)] += weights[n] * amp


def apply_heff(h: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """H psi without forming the 2^N matrix."""
    out = np.zeros_like(psi, dtype=np.complex128)
    _apply_heff(np.ascontiguousarray(h, dtype=np.complex128), np.ascontiguousarray(psi, dtype=np.complex128),
                h.shape[0], out)
    return out


def apply_collective_lowering(weights: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """sum_n w_n sigma_ge^n psi"""
    out = np.zeros_like(psi, dtype=np.complex128)
    _apply_lowering(np.ascontiguousarray(weights, dtype=np.complex128),
                    np.ascontiguousarray(psi, dtype=np.complex128), len(weights), out)
    return out


@lru_cache(maxsize=16)
def _bit_table(n_atoms: int) -> np.ndarray:
    states = np.arange(2**n_atoms, dtype=np.int64)
    table = ((states[:, None] >> np.arange(n_atoms)[None, :]) & 1).astype(np.float64)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=16)
def _raising_pairs(n_atoms: int) -> Tuple[Tuple[np.ndarray, np.ndarray], ...]:
    states = np.arange(2**n_atoms, dtype=np.int64)
    pairs = []
    for n in range(n_atoms):
        ground = states[((states >> n) & 1) == 0]
        pairs.append((ground, ground | (1 << n)))
    return tuple(pairs)


# =============================================================================
# Configuration
# =============================================================================

class InitialStateKind(Enum):
    """初期状態の種類"""
    FULLY_INVERTED = "fully_inverted"
    CLOCK_STATE = "clock_state"
    EXPLICIT_VECTOR = "explicit_vector"


@dataclass(frozen=True)
class InitialState:
    """初期状態指定"""
    kind: InitialStateKind
    phase_per_site: float = 0.0
    vector: Optional[np.ndarray] = None

    @classmethod
    def fully_inverted(cls) -> "InitialState":
        return cls(InitialStateKind.FULLY_INVERTED)

    @classmethod
    def clock(cls, phase_per_site: float) -> "InitialState":
        """Product of (|g> + e^{i k_L z_n}|e>)/sqrt(2); phase_per_site is k_L*d."""
        return cls(InitialStateKind.CLOCK_STATE, phase_per_site=float(phase_per_site))

    @classmethod
    def explicit(cls, vector: np.ndarray) -> "InitialState":
        return cls(InitialStateKind.EXPLICIT_VECTOR, vector=np.asarray(vector, dtype=complex))

    def full_vector(self, n_atoms: int) -> np.ndarray:
        dim = 2**n_atoms
        if self.kind is InitialStateKind.FULLY_INVERTED:
            psi = np.zeros(dim, dtype=complex)
            psi[dim - 1] = 1.0
            return psi
        if self.kind is InitialStateKind.CLOCK_STATE:
            site_sum = _bit_table(n_atoms) @ np.arange(1, n_atoms + 1, dtype=float)
            return np.exp(1j * self.phase_per_site * site_sum) / np.sqrt(dim)
        psi = np.asarray(self.vector, dtype=complex)
        if psi.shape != (dim,):
            raise DimensionMismatchError(f"explicit initial vector must have length {dim}, got {psi.shape}")
        norm = np.linalg.norm(psi)
        if norm == 0.0:
            raise DimensionMismatchError("explicit initial vector is zero")
        return psi / norm


@dataclass(frozen=True)
class TrajectoryConfig:
    """軌跡シミュレーション設定"""
    geometry: ArrayGeometry
    initial_state: InitialState
    times: np.ndarray
    detuning: float = 0.0
    n_trajectories: int = DEFAULT_TRAJECTORIES
    base_seed: int = 0
    coherent_only: bool = False
    rtol: float = 1e-8
    atol: float = 1e-10
    max_workers: int = 1

    def validate(self) -> None:
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 1:
            raise ValueError("time grid must be a non-empty 1D array")
        if times[0] != 0.0:
            raise ValueError(f"time grid must start at 0, got {times[0]}")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("time grid must be strictly increasing")
        if self.n_trajectories < 1:
            raise ValueError(f"trajectory count must be >= 1, got {self.n_trajectories}")
        if self.geometry.atom_count > MAX_TRAJECTORY_ATOMS:
            raise DimensionMismatchError(
                f"full-space trajectories limited to N <= {MAX_TRAJECTORY_ATOMS}, got N={self.geometry.atom_count}"
            )


# =============================================================================
# Observables
# =============================================================================

class Observable:
    """Per-state quantity averaged over trajectories."""

    ratio = False

    @property
    def tag(self) -> str:
        raise NotImplementedError

    def evaluate(self, psi: np.ndarray, n_atoms: int):
        raise NotImplementedError


class NExcited(Observable):
    @property
    def tag(self) -> str:
        return "n_e"

    def evaluate(self, psi, n_atoms):
        return float(np.dot(np.abs(psi) ** 2, excitation_numbers(n_atoms)))


@dataclass(frozen=True)
class PairCorrelation(Observable):
    """<sigma_ee^m sigma_ee^n> for 1-based sites m != n."""
    m: int
    n: int

    @property
    def tag(self) -> str:
        return f"pair_correlation({self.m},{self.n})"

    def evaluate(self, psi, n_atoms):
        bits = _bit_table(n_atoms)
        both = bits[:, self.m - 1] * bits[:, self.n - 1]
        return float(np.dot(np.abs(psi) ** 2, both))


class PairCorrelationMap(Observable):
    """Full N x N map of <sigma_ee^m sigma_ee^n>, diagonal set to zero."""

    @property
    def tag(self) -> str:
        return "pair_correlation_map"

    def evaluate(self, psi, n_atoms):
        bits = _bit_table(n_atoms)
        weighted = bits * (np.abs(psi) ** 2)[:, None]
        corr = bits.T @ weighted
        np.fill_diagonal(corr, 0.0)
        return corr


@dataclass(frozen=True)
class ManifoldPopulation(Observable):
    m_ex: int

    @property
    def tag(self) -> str:
        return f"manifold_population({self.m_ex})"

    def evaluate(self, psi, n_atoms):
        mask = excitation_numbers(n_atoms) == self.m_ex
        return float(np.sum(np.abs(psi[mask]) ** 2))


@dataclass(frozen=True, eq=False)
class EigenstatePopulation(Observable):
    """Population of |psi_xi> inside the trace-renormalized manifold block.

    Estimated as a ratio of ensemble means: E|<psi_xi|P psi>|^2 / E<psi|P|psi>.
    """
    mode: EigenMode
    ratio = True

    @property
    def tag(self) -> str:
        return f"eigenstate_population({self.mode.m_ex},{self.mode.xi})"

    def evaluate(self, psi, n_atoms):
        basis = self.mode.right.basis
        block = restrict_full_state(psi, basis)
        numerator = abs(np.vdot(self.mode.right.amplitudes, block)) ** 2
        return numerator, float(np.vdot(block, block).real)


@dataclass(frozen=True)
class CoherenceSum(Observable):
    """sum_n e^{i k_L z_n} <sigma_eg^n>, z_n = n*d."""
    phase_per_site: float

    @property
    def tag(self) -> str:
        return "coherence_sum"

    def evaluate(self, psi, n_atoms):
        total = 0j
        for n, (ground, excited) in enumerate(_raising_pairs(n_atoms)):
            total += np.exp(1j * self.phase_per_site * (n + 1)) * np.vdot(psi[excited], psi[ground])
        return complex(total)


@dataclass(frozen=True)
class ClockSignal(Observable):
    """Ramsey signal S = -2 Re sum_n e^{i k_L z_n} <sigma_eg^n>."""
    phase_per_site: float

    @property
    def tag(self) -> str:
        return "clock_signal"

    def evaluate(self, psi, n_atoms):
        return -2.0 * CoherenceSum(self.phase_per_site).evaluate(psi, n_atoms).real


@dataclass(frozen=True, eq=False)
class Projector(Observable):
    """<psi|P|psi> for a user-supplied dense Hermitian operator."""
    name: str
    operator: np.ndarray

    @property
    def tag(self) -> str:
        return f"projector({self.name})"

    def evaluate(self, psi, n_atoms):
        if self.operator.shape != (psi.size, psi.size):
            raise DimensionMismatchError(f"projector {self.name} has shape {self.operator.shape}")
        return float(np.vdot(psi, self.operator @ psi).real)


class OneBodyDensity(Observable):
    """Single-site reduced density matrices, shape (N, 2, 2), index 0 = g, 1 = e."""

    @property
    def tag(self) -> str:
        return "one_body_density"

    def evaluate(self, psi, n_atoms):
        tensor = psi.reshape((2,) * n_atoms)
        out = np.empty((n_atoms, 2, 2), dtype=complex)
        for i in range(n_atoms):
            block = np.moveaxis(tensor, n_atoms - 1 - i, 0).reshape(2, -1)
            out[i] = block @ block.conj().T
        return out


class TwoBodyDensity(Observable):
    """rho_ij[a, b, c, d] = <a_i b_j|rho|c_i d_j>, shape (N, N, 2, 2, 2, 2)."""

    @property
    def tag(self) -> str:
        return "two_body_density"

    def evaluate(self, psi, n_atoms):
        tensor = psi.reshape((2,) * n_atoms)
        out = np.zeros((n_atoms, n_atoms, 2, 2, 2, 2), dtype=complex)
        for i in range(n_atoms):
            for j in range(n_atoms):
                if i == j:
                    continue
                block = np.moveaxis(tensor, (n_atoms - 1 - i, n_atoms - 1 - j), (0, 1)).reshape(4, -1)
                out[i, j] = (block @ block.conj().T).reshape(2, 2, 2, 2)
        return out


# =============================================================================
# Results
# =============================================================================

@dataclass
class ObservableSeries:
    """軌跡平均された観測量の時系列"""
    times: np.ndarray
    means: Dict[str, np.ndarray]
    stderrs: Dict[str, np.ndarray]
    n_trajectories: int
    undefined: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def tags(self) -> List[str]:
        return list(self.means)

    def mean(self, tag: str) -> np.ndarray:
        return self.means[tag]

    def stderr(self, tag: str) -> np.ndarray:
        return self.stderrs[tag]


@dataclass
class TrajectoryRecord:
    """単一軌跡の記録"""
    index: int
    times: np.ndarray
    states: Optional[np.ndarray]
    jump_times: List[float]
    jump_channels: List[int]

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)


class _MeanAccumulator:
    def __init__(self):
        self.count = 0
        self.total = None
        self.total_sq = None

    def add(self, values: np.ndarray) -> None:
        values = np.asarray(values)
        if self.total is None:
            self.total = np.zeros_like(values)
            self.total_sq = np.zeros(values.shape, dtype=float)
        self.count += 1
        self.total = self.total + values
        self.total_sq = self.total_sq + np.abs(values) ** 2

    def result(self) -> Tuple[np.ndarray, np.ndarray]:
        mean = self.total / self.count
        if self.count < 2:
            return mean, np.zeros(mean.shape)
        var = (self.total_sq / self.count - np.abs(mean) ** 2) * self.count / (self.count - 1)
        return mean, np.sqrt(np.maximum(var, 0.0) / self.count)


class _RatioAccumulator:
    def __init__(self):
        self.num = _MeanAccumulator()
        self.den = _MeanAccumulator()
        self.cross = None

    def add(self, values: Tuple[np.ndarray, np.ndarray]) -> None:
        num, den = values
        self.num.add(num)
        self.den.add(den)
        product = np.asarray(num) * np.asarray(den)
        self.cross = product if self.cross is None else self.cross + product

    def result(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.num.count
        mx, _ = self.num.result()
        my, _ = self.den.result()
        undefined = my <= 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(undefined, np.nan, mx / np.where(undefined, 1.0, my))
            if n < 2:
                return ratio, np.zeros(ratio.shape), undefined
            scale = n / (n - 1)
            var_x = (self.num.total_sq / n - mx**2) * scale
            var_y = (self.den.total_sq / n - my**2) * scale
            cov = (self.cross / n - mx * my) * scale
            var_r = (var_x - 2.0 * ratio * cov + ratio**2 * var_y) / np.where(undefined, 1.0, my**2) / n
        stderr = np.where(undefined, np.nan, np.sqrt(np.maximum(var_r, 0.0)))
        return ratio, stderr, undefined


# =============================================================================
# Engine
# =============================================================================

class JumpEngine:
    """軌跡計算エンジン（結合行列・初期状態を共有する読み取り専用オブジェクト）"""

    def __init__(self, cfg: TrajectoryConfig, cm: Optional[CouplingMatrices] = None):
        cfg.validate()
        self.cfg = cfg
        self.cm = cm if cm is not None else build_coupling_matrices(cfg.geometry)
        self.n_atoms = self.cm.atom_count
        self.times = np.asarray(cfg.times, dtype=float)
        self.h = np.ascontiguousarray(self.cm.with_detuning(cfg.detuning, coherent_only=cfg.coherent_only),
                                      dtype=np.complex128)
        active = self.cm.channel_rates > 0.0
        self.channel_rates = np.asarray(self.cm.channel_rates[active])
        self.channel_weights = np.ascontiguousarray(self.cm.channel_vectors[:, active].T, dtype=np.complex128)
        self.psi0 = cfg.initial_state.full_vector(self.n_atoms)

    def _rhs(self, _t: float, y: np.ndarray) -> np.ndarray:
        out = np.zeros_like(y)
        _apply_heff(self.h, y, self.n_atoms, out)
        return -1j * out

    def _jump(self, psi: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, int]:
        candidates = []
        weights = np.empty(len(self.channel_rates))
        for c, rate in enumerate(self.channel_rates):
            out = np.zeros_like(psi)
            _apply_lowering(self.channel_weights[c], psi, self.n_atoms, out)
            candidates.append(out)
            weights[c] = rate * np.vdot(out, out).real
        total = weights.sum()
        if total <= 0.0:
            raise IntegrationError("jump requested from a state with no decay channel",
                                   context={"norm": float(np.vdot(psi, psi).real)})
        channel = int(rng.choice(len(weights), p=weights / total))
        after = candidates[channel]
        return after / np.linalg.norm(after), channel

    def run(self, index: int, on_sample: Callable[[int, np.ndarray], None],
            on_jump: Optional[Callable[[float, int, np.ndarray], None]] = None) -> Tuple[List[float], List[int]]:
        """Evolve one trajectory, calling on_sample(grid index, normalized state)."""
        rng = trajectory_rng(self.cfg.base_seed, index)
        times = self.times
        psi = self.psi0.copy()
        t = 0.0
        next_idx = 0
        threshold = rng.random()
        jump_times: List[float] = []
        jump_channels: List[int] = []
        can_jump = not self.cfg.coherent_only and self.channel_rates.size > 0

        def norm_event(_t, y):
            return np.vdot(y, y).real - threshold

        norm_event.terminal = True
        norm_event.direction = -1

        if times[0] == t:
            on_sample(0, psi)
            next_idx = 1

        while next_idx < len(times):
            sol = solve_ivp(
                self._rhs,
                (t, float(times[-1])),
                psi,
                method="RK45",
                t_eval=times[next_idx:],
                events=norm_event if can_jump else None,
                rtol=self.cfg.rtol,
                atol=self.cfg.atol,
            )
            if sol.status == -1:
                raise IntegrationError(f"trajectory {index} integration failed: {sol.message}",
                                       context={"t": t, "jumps": len(jump_times)})
            for k in range(len(sol.t)):
                y = sol.y[:, k]
                on_sample(next_idx + k, y / np.linalg.norm(y))
            next_idx += len(sol.t)
            if sol.status != 1:
                break

            t = float(sol.t_events[0][0])
            psi, channel = self._jump(sol.y_events[0][0], rng)
            jump_times.append(t)
            jump_channels.append(channel)
            if on_jump is not None:
                on_jump(t, channel, psi)
            threshold = rng.random()
        return jump_times, jump_channels


def evolve_trajectory(cfg: TrajectoryConfig, index: int, keep_states: bool = True,
                      engine: Optional[JumpEngine] = None) -> TrajectoryRecord:
    """単一軌跡の時間発展"""
    engine = engine or JumpEngine(cfg)
    states = np.zeros((len(engine.times), 2**engine.n_atoms), dtype=complex) if keep_states else None

    def on_sample(i: int, psi: np.ndarray) -> None:
        if states is not None:
            states[i] = psi

    jump_times, jump_channels = engine.run(index, on_sample)
    return TrajectoryRecord(index, engine.times, states, jump_times, jump_channels)


def _trajectory_values(engine: JumpEngine, index: int, observables: Sequence[Observable],
                       sample_indices: np.ndarray) -> List:
    position = {int(i): k for k, i in enumerate(sample_indices)}
    values: List[Optional[list]] = [[None] * len(sample_indices) for _ in observables]

    def on_sample(i: int, psi: np.ndarray) -> None:
        k = position.get(i)
        if k is None:
            return
        for o, obs in enumerate(observables):
            values[o][k] = obs.evaluate(psi, engine.n_atoms)

    engine.run(index, on_sample)
    packed = []
    for obs, series in zip(observables, values):
        if obs.ratio:
            packed.append((np.array([v[0] for v in series]), np.array([v[1] for v in series])))
        else:
            packed.append(np.array(series))
    return packed


def _map_trajectories(cfg: TrajectoryConfig, worker: Callable[[int], object], max_workers: Optional[int]):
    workers = max_workers if max_workers is not None else cfg.max_workers
    indices = range(cfg.n_trajectories)
    if workers <= 1:
        return map(worker, indices)
    pool = ThreadPoolExecutor(max_workers=workers)
    try:
        return list(pool.map(worker, indices))
    finally:
        pool.shutdown(wait=True)


def ensemble_observables(cfg: TrajectoryConfig, observables: Sequence[Observable],
                         max_workers: Optional[int] = None,
                         sample_indices: Optional[Sequence[int]] = None,
                         engine: Optional[JumpEngine] = None) -> ObservableSeries:
    """軌跡アンサンブル平均（標準誤差付き）"""
    engine = engine or JumpEngine(cfg)
    if sample_indices is None:
        sample_indices = np.arange(len(engine.times))
    sample_indices = np.asarray(sample_indices, dtype=int)
    tags = [obs.tag for obs in observables]
    if len(set(tags)) != len(tags):
        raise ValueError(f"duplicate observable tags: {tags}")

    started = time.perf_counter()
    accumulators = [_RatioAccumulator() if obs.ratio else _MeanAccumulator() for obs in observables]
    results = _map_trajectories(cfg, lambda k: _trajectory_values(engine, k, observables, sample_indices),
                                max_workers)
    for packed in results:
        for acc, values in zip(accumulators, packed):
            acc.add(values)

    means: Dict[str, np.ndarray] = {}
    stderrs: Dict[str, np.ndarray] = {}
    undefined: Dict[str, np.ndarray] = {}
    for obs, acc in zip(observables, accumulators):
        if obs.ratio:
            means[obs.tag], stderrs[obs.tag], undefined[obs.tag] = acc.result()
            if np.any(undefined[obs.tag]):
                logger.warning(f"⚠️ {obs.tag}: manifold unpopulated at {int(undefined[obs.tag].sum())} grid times")
        else:
            means[obs.tag], stderrs[obs.tag] = acc.result()

    logger.info(
        f"🎲 Ensemble finished: N={engine.n_atoms}, trajectories={cfg.n_trajectories}, "
        f"delta={cfg.detuning:+.3f}, {time.perf_counter() - started:.2f}s"
    )
    return ObservableSeries(engine.times[sample_indices], means, stderrs, cfg.n_trajectories, undefined)


@dataclass
class PassageStatistics:
    """ジャンプ直後の固有状態重み分布"""
    means: Dict[int, np.ndarray]
    stderrs: Dict[int, np.ndarray]
    visits: Dict[int, int]


def passage_statistics(cfg: TrajectoryConfig, spectra: Dict[int, ManifoldSpectrum],
                       max_workers: Optional[int] = None) -> PassageStatistics:
    """Normalized |<phi_xi|psi>|^2 of each post-jump state, per manifold entered."""
    engine = JumpEngine(cfg)
    counts = excitation_numbers(engine.n_atoms)

    def weights_of(psi: np.ndarray) -> Tuple[int, Optional[np.ndarray]]:
        populated = np.unique(counts[np.abs(psi) > 1e-12])
        if populated.size != 1:
            raise LatticeClockError("passage statistics need states confined to one manifold")
        m_ex = int(populated[0])
        spectrum = spectra.get(m_ex)
        if spectrum is None:
            return m_ex, None
        coeffs = spectrum.left @ restrict_full_state(psi, spectrum.basis)
        weights = np.abs(coeffs) ** 2
        return m_ex, weights / weights.sum()

    def worker(index: int) -> Dict[int, np.ndarray]:
        record: Dict[int, np.ndarray] = {}

        def on_jump(_t: float, _c: int, psi: np.ndarray) -> None:
            m_ex, weights = weights_of(psi)
            if weights is not None:
                record[m_ex] = weights

        m0, w0 = weights_of(engine.psi0)
        if w0 is not None:
            record[m0] = w0
        engine.run(index, lambda i, psi: None, on_jump)
        return record

    accumulators: Dict[int, _MeanAccumulator] = {}
    for record in _map_trajectories(cfg, worker, max_workers):
        for m_ex, weights in record.items():
            accumulators.setdefault(m_ex, _MeanAccumulator()).add(weights)

    means, stderrs, visits = {}, {}, {}
    for m_ex, acc in sorted(accumulators.items()):
        means[m_ex], stderrs[m_ex] = acc.result()
        visits[m_ex] = acc.count
    logger.info(f"🧭 Passage statistics collected over {cfg.n_trajectories} trajectories, manifolds {sorted(means)}")
    return PassageStatistics(means, stderrs, visits)


@dataclass
class ReducedMoments:
    """アンサンブル平均の一体・二体縮約密度行列"""
    time: float
    one_body: np.ndarray
    one_body_stderr: np.ndarray
    two_body: np.ndarray
    two_body_stderr: np.ndarray
    n_excited: float
    n_trajectories: int


def reduced_moments_at(cfg: TrajectoryConfig, t_index: int, max_workers: Optional[int] = None) -> ReducedMoments:
    """Ensemble one- and two-body reduced density matrices at one grid time."""
    if not 0 <= t_index < len(cfg.times):
        raise IndexError(f"time index {t_index} outside grid of length {len(cfg.times)}")
    truncated = replace(cfg, times=np.asarray(cfg.times)[: t_index + 1])
    series = ensemble_observables(
        truncated, [OneBodyDensity(), TwoBodyDensity(), NExcited()],
        max_workers=max_workers, sample_indices=[t_index],
    )
    return ReducedMoments(
        time=float(series.times[0]),
        one_body=series.mean("one_body_density")[0],
        one_body_stderr=series.stderr("one_body_density")[0],
        two_body=series.mean("two_body_density")[0],
        two_body_stderr=series.stderr("two_body_density")[0],
        n_excited=float(series.mean("n_e")[0]),
        n_trajectories=series.n_trajectories,
    )


def ramsey_scan(template: TrajectoryConfig, deltas: Sequence[float], phase_per_site: float,
                max_workers: Optional[int] = None):
    """One clock-state ensemble per detuning; every detuning reuses the same seeds."""
    deltas = np.asarray(deltas, dtype=float)
    base = replace(template, initial_state=InitialState.clock(phase_per_site))
    signal = np.zeros((deltas.size, len(base.times)))
    stderr = np.zeros_like(signal)
    observable = ClockSignal(phase_per_site)
    cm = build_coupling_matrices(base.geometry)
    for row, delta in enumerate(deltas):
        cfg = replace(base, detuning=float(delta))
        series = ensemble_observables(cfg, [observable], max_workers=max_workers, engine=JumpEngine(cfg, cm))
        signal[row] = series.mean(observable.tag)
        stderr[row] = series.stderr(observable.tag)
    surface = FringeSurface(deltas=deltas, times=np.asarray(base.times, dtype=float), signal=signal, stderr=stderr)
    return extract_ridge(surface)
