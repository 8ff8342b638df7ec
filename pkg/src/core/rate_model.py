"""
Eigenstate Cascade Rate Model
固有状態占有数のみを追跡する半古典的カスケード模型

gamma[m][xi, xi'] is the rate from |psi_xi^(m)> to |psi_xi'^(m-1)>. Raw rates
come from the jump superoperator projected on right eigenvectors and are
rescaled row by row so that each row sums to the state's decay rate.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.integrate import solve_ivp

from .coupling import gamma_channels
from .errors import IntegrationError, ManifoldError, RateModelError
from .manifold_basis import lowering_operators
from .spectrum import EigenMode, ManifoldSpectrum, antisymmetric_pair, degenerate_groups

logger = logging.getLogger(__name__)

EXPM_DIMENSION_LIMIT = 500
NEGATIVE_RATE_TOLERANCE = 1e-10
DEFAULT_U = 0.6
DARK_RATE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class RateSlice:
    """隣接多様体間の遷移レート表"""
    m_ex: int
    rates: np.ndarray
    normalization: np.ndarray
    raw: np.ndarray


@dataclass
class RateGraph:
    """多様体をまたぐ遷移レートグラフ"""
    spectra: Dict[int, ManifoldSpectrum]
    slices: Dict[int, RateSlice] = field(default_factory=dict)

    def rates(self, m_ex: int) -> np.ndarray:
        if m_ex not in self.slices:
            raise ManifoldError(f"no rate table out of manifold m_ex={m_ex}")
        return self.slices[m_ex].rates

    def normalization(self, m_ex: int) -> np.ndarray:
        return self.slices[m_ex].normalization

    def total_rates(self, m_ex: int) -> np.ndarray:
        return self.rates(m_ex).sum(axis=1)

    @property
    def manifolds(self) -> List[int]:
        return sorted(self.spectra)


def _projected_channels(upper: ManifoldSpectrum, lower: ManifoldSpectrum, gamma: np.ndarray,
                        max_workers: int = 1) -> Tuple[np.ndarray, List[np.ndarray]]:
    if lower.m_ex != upper.m_ex - 1 or lower.basis.n_atoms != upper.basis.n_atoms:
        raise ManifoldError(
            f"rates need adjacent manifolds of one chain, got m_ex={upper.m_ex} -> m_ex={lower.m_ex}"
        )
    channel_rates, channel_vectors = gamma_channels(np.asarray(gamma, dtype=float))
    active = np.flatnonzero(channel_rates > 0.0)
    lowering = lowering_operators(upper.basis)
    lower_dagger = lower.right.conj().T

    def project(c: int) -> np.ndarray:
        op = sparse.csr_matrix(lowering[0].shape, dtype=complex)
        for site, weight in enumerate(channel_vectors[:, c]):
            if weight != 0.0:
                op = op + weight * lowering[site]
        return lower_dagger @ (op @ upper.right)

    if max_workers > 1 and active.size > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            projected = list(pool.map(project, active))
    else:
        projected = [project(c) for c in active]
    return channel_rates[active], projected


def _raw_rates(upper: ManifoldSpectrum, lower: ManifoldSpectrum, gamma: np.ndarray, max_workers: int) -> np.ndarray:
    rates, projected = _projected_channels(upper, lower, gamma, max_workers)
    raw = np.zeros((len(upper), len(lower)))
    for rate, block in zip(rates, projected):
        raw += rate * (np.abs(block) ** 2).T
    return raw


def transition_rates(upper: ManifoldSpectrum, lower: ManifoldSpectrum, gamma: np.ndarray,
                     max_workers: int = 1) -> RateSlice:
    """遷移レート表（総減衰率を保存する規格化付き）"""
    raw = _raw_rates(upper, lower, gamma, max_workers)
    scale = max(1.0, float(np.max(np.abs(raw)))) if raw.size else 1.0
    if np.any(raw < -NEGATIVE_RATE_TOLERANCE * scale):
        raise RateModelError(f"transition rate {raw.min():.3e} is negative beyond round-off")
    clamped = np.where(raw < 0.0, 0.0, raw)

    targets = np.maximum(upper.rates, 0.0)
    sums = clamped.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        normalization = np.where(sums > 0.0, targets / np.where(sums > 0.0, sums, 1.0), 1.0)
    rates = clamped * normalization[:, None]
    logger.debug(
        f"🔗 Rate table m_ex={upper.m_ex}->{lower.m_ex}: {rates.shape}, "
        f"normalization range [{normalization.min():.4f}, {normalization.max():.4f}]"
    )
    return RateSlice(upper.m_ex, rates, normalization, raw)


def approximate_transition_rates(upper: ManifoldSpectrum, lower: ManifoldSpectrum, gamma: np.ndarray) -> np.ndarray:
    """Near-orthonormal comparator: (Gamma/2)-weighted projection without rescaling."""
    return 0.5 * _raw_rates(upper, lower, gamma, max_workers=1)


def build_rate_graph(gamma: np.ndarray, spectra: Dict[int, ManifoldSpectrum], max_workers: int = 1) -> RateGraph:
    """Rate tables out of every supplied manifold whose lower neighbour is also supplied."""
    graph = RateGraph(spectra=dict(spectra))
    uppers = [m for m in sorted(spectra) if m - 1 in spectra]

    def slice_for(m: int) -> RateSlice:
        return transition_rates(spectra[m], spectra[m - 1], gamma)

    if max_workers > 1 and len(uppers) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(slice_for, uppers))
    else:
        results = [slice_for(m) for m in uppers]
    graph.slices = dict(zip(uppers, results))
    logger.info(f"🔗 Rate graph assembled for manifolds {uppers}")
    return graph


def passage_probabilities(graph: RateGraph, initial: Sequence[float], m_top: int) -> Dict[int, np.ndarray]:
    """各固有状態を通過する確率（多様体ごとに下向きへ伝播）"""
    wp = np.asarray(initial, dtype=float)
    if abs(wp.sum() - 1.0) > 1e-6 or np.any(wp < 0.0):
        raise ValueError(f"initial distribution must be non-negative and sum to 1, got sum {wp.sum():.6f}")
    result = {m_top: wp}
    m = m_top
    while m in graph.slices:
        rates = graph.rates(m)
        totals = rates.sum(axis=1)
        stuck = (wp > 1e-14) & (totals <= 0.0)
        if np.any(stuck):
            raise RateModelError(f"populated state(s) {np.flatnonzero(stuck) + 1} in m_ex={m} have zero total rate")
        branching = np.divide(rates, totals[:, None], out=np.zeros_like(rates), where=totals[:, None] > 0.0)
        wp = wp @ branching
        m -= 1
        result[m] = wp
    return result


@dataclass
class CascadeResult:
    """レート方程式の解"""
    times: np.ndarray
    populations: Dict[int, np.ndarray]
    passage: Dict[int, np.ndarray] = field(default_factory=dict)

    def manifold_totals(self) -> Dict[int, np.ndarray]:
        return {m: p.sum(axis=1) for m, p in self.populations.items()}

    def n_excited(self) -> np.ndarray:
        return sum(m * p.sum(axis=1) for m, p in self.populations.items())


def _generator(graph: RateGraph, manifolds: List[int]) -> Tuple[np.ndarray, Dict[int, slice]]:
    offsets: Dict[int, slice] = {}
    start = 0
    for m in manifolds:
        offsets[m] = slice(start, start + len(graph.spectra[m]))
        start += len(graph.spectra[m])
    gen = np.zeros((start, start))
    for m in manifolds:
        block = offsets[m]
        if m in graph.slices:
            gen[block, block] -= np.diag(graph.total_rates(m))
            if m - 1 in offsets:
                gen[offsets[m - 1], block] += graph.rates(m).T
    return gen, offsets


def _expm_cascade(graph: RateGraph, manifolds: List[int], p0: np.ndarray, times: np.ndarray):
    gen, offsets = _generator(graph, manifolds)
    out = np.empty((times.size, p0.size))
    out[0] = p0
    cache: Dict[float, np.ndarray] = {}
    for k in range(1, times.size):
        dt = round(float(times[k] - times[k - 1]), 14)
        if dt not in cache:
            cache[dt] = scipy.linalg.expm(gen * dt)
        out[k] = cache[dt] @ out[k - 1]
    return {m: out[:, offsets[m]] for m in manifolds}


def _stiff_cascade(graph: RateGraph, manifolds: List[int], initial: Dict[int, np.ndarray], times: np.ndarray):
    span = (float(times[0]), float(times[-1]))
    populations: Dict[int, np.ndarray] = {}
    upper_solution = None
    upper_feed = None
    for m in manifolds:
        dim = len(graph.spectra[m])
        decay = graph.total_rates(m) if m in graph.slices else np.zeros(dim)
        p0 = np.asarray(initial.get(m, np.zeros(dim)), dtype=float)
        feed, source = upper_feed, upper_solution

        def rhs(t, p, decay=decay, feed=feed, source=source):
            dp = -decay * p
            if source is not None:
                dp = dp + feed @ source(t)
            return dp

        sol = solve_ivp(rhs, span, p0, method="BDF", t_eval=times, dense_output=True,
                        jac=sparse.diags(-decay), rtol=1e-8, atol=1e-12)
        if not sol.success:
            raise IntegrationError(f"stiff cascade integration failed: {sol.message}", manifold=m)
        populations[m] = sol.y.T
        upper_solution = sol.sol
        upper_feed = graph.rates(m).T if m in graph.slices else None
    return populations


def evolve_rate_equations(graph: RateGraph, initial: Dict[int, Sequence[float]], times: Sequence[float]) -> CascadeResult:
    """レート方程式の時間発展（上位多様体から順に）"""
    times = np.asarray(times, dtype=float)
    initial = {m: np.asarray(p, dtype=float) for m, p in initial.items()}
    for m, p in initial.items():
        if np.any(p < 0.0):
            raise ValueError(f"initial populations in m_ex={m} must be non-negative")
        if m not in graph.spectra or p.shape != (len(graph.spectra[m]),):
            raise ManifoldError(f"initial populations for m_ex={m} do not match the graph")

    top = max(initial)
    manifolds = [top]
    while manifolds[-1] in graph.slices:
        manifolds.append(manifolds[-1] - 1)

    total_dim = sum(len(graph.spectra[m]) for m in manifolds)
    if total_dim <= EXPM_DIMENSION_LIMIT:
        p0 = np.concatenate([initial.get(m, np.zeros(len(graph.spectra[m]))) for m in manifolds])
        populations = _expm_cascade(graph, manifolds, p0, times)
    else:
        populations = _stiff_cascade(graph, manifolds, initial, times)

    logger.info(f"📉 Rate cascade solved over manifolds {manifolds[0]}..{manifolds[-1]} (dim={total_dim})")
    return CascadeResult(times, populations)


# =============================================================================
# Decay-structure analysis
# =============================================================================

def superradiant_fraction(m_ex: int, u: float = DEFAULT_U) -> float:
    """Share of a subradiant m_ex-state decay expected to go into superradiant states."""
    if m_ex < 1:
        raise ManifoldError(f"m_ex must be >= 1, got {m_ex}")
    excess = (m_ex - 1) * u
    return excess / (1.0 + excess)


def radiative_excess(two_excitation: EigenMode, first: EigenMode, second: EigenMode) -> float:
    """Gamma^(2) - Gamma^(1)_a - Gamma^(1)_b"""
    return two_excitation.gamma - first.gamma - second.gamma


@dataclass(frozen=True)
class ConstituentMatch:
    """二励起状態の構成一励起モード"""
    xi1: int
    xi2: int
    overlap: float
    combined_rate: float


def _candidate_vectors(single: ManifoldSpectrum, ranks: Sequence[int]) -> Dict[int, List[np.ndarray]]:
    partner: Dict[int, int] = {}
    for group in degenerate_groups(single):
        if len(group) == 2:
            a, b = group
            partner[a + 1], partner[b + 1] = b + 1, a + 1
    variants: Dict[int, List[np.ndarray]] = {}
    for xi in ranks:
        base = single.right[:, xi - 1]
        vecs = [base]
        if xi in partner:
            other = single.right[:, partner[xi] - 1]
            vecs += [(base + other) / np.sqrt(2.0), (base - other) / np.sqrt(2.0)]
        variants[xi] = vecs
    return variants


def match_constituents(two_excitation: EigenMode, single: ManifoldSpectrum, candidates: int = 10) -> ConstituentMatch:
    """Pair of single-excitation modes whose antisymmetrized product best overlaps the state."""
    if two_excitation.m_ex != 2 or single.m_ex != 1:
        raise ManifoldError("constituent matching needs a two-excitation mode and the single-excitation spectrum")
    target = two_excitation.right.normalized().amplitudes
    ranks = list(range(1, min(candidates, len(single)) + 1))
    variants = _candidate_vectors(single, ranks)
    rates = single.rates

    best: Optional[ConstituentMatch] = None
    for xi1, xi2 in combinations(ranks, 2):
        overlap = 0.0
        for v1 in variants[xi1]:
            for v2 in variants[xi2]:
                try:
                    ansatz = antisymmetric_pair(v1, v2)
                except ManifoldError:
                    continue
                overlap = max(overlap, abs(np.vdot(ansatz.amplitudes, target)) ** 2)
        combined = float(rates[xi1 - 1] + rates[xi2 - 1])
        candidate = ConstituentMatch(xi1, xi2, float(overlap), combined)
        if best is None or overlap > best.overlap + 1e-9:
            best = candidate
        elif abs(overlap - best.overlap) <= 1e-9 and combined < best.combined_rate:
            best = candidate
    if best is None:
        raise ManifoldError("need at least two single-excitation modes to match constituents")
    return best


def estimate_u(two_excitation_modes: Sequence[EigenMode], single: ManifoldSpectrum, candidates: int = 10) -> float:
    """Mean of Gamma^(2)/(Gamma_a + Gamma_b) - 1 over the given two-excitation modes.

    Modes whose matched constituents are both dark (waveguide, combined rate 0)
    carry no ratio and are skipped.
    """
    values = []
    for mode in two_excitation_modes:
        match = match_constituents(mode, single, candidates)
        if match.combined_rate <= DARK_RATE_TOLERANCE:
            logger.debug(f"🌑 Two-excitation mode xi={mode.xi} skipped: constituents {match.xi1},{match.xi2} are dark")
            continue
        values.append(mode.gamma / match.combined_rate - 1.0)
    if not values:
        raise RateModelError("no two-excitation mode has radiating constituents; u is undefined")
    return float(np.mean(values))


def superradiant_share(graph: RateGraph, m_ex: int, xi: int = 1, threshold: float = 1.0) -> float:
    """Fraction of the decay of (m_ex, xi) that lands in lower states with Gamma > threshold * Gamma0."""
    row = graph.rates(m_ex)[xi - 1]
    total = row.sum()
    if total <= 0.0:
        return 0.0
    bright = graph.spectra[m_ex - 1].rates > threshold
    return float(row[bright].sum() / total)


def dominant_channels(graph: RateGraph, m_ex: int, xi: int, threshold: float = 0.5) -> List[Tuple[int, float]]:
    """Transitions out of (m_ex, xi) whose rate exceeds threshold * the largest one, largest first."""
    row = graph.rates(m_ex)[xi - 1]
    if row.max() <= 0.0:
        return []
    keep = np.flatnonzero(row >= threshold * row.max())
    order = keep[np.argsort(-row[keep], kind="stable")]
    return [(int(j) + 1, float(row[j])) for j in order]


def constituent_weight(graph: RateGraph, xi: int, match: ConstituentMatch) -> float:
    """Fraction of the total rate of two-excitation state xi carried by its constituent channels."""
    row = graph.rates(2)[xi - 1]
    total = row.sum()
    if total <= 0.0:
        return 0.0
    return float((row[match.xi1 - 1] + row[match.xi2 - 1]) / total)
