"""
Waveguide MPS Engine
導波路鎖の密度行列MPS時間発展（6x6 Liouvillian MPO＋変分圧縮）

Local basis. Each site carries the 2x2 block of rho as a 4-vector with index
s = k + 2 b (k ket, b bra, single-spin index e = 0, g = 1), i.e. the ordering
{ee, ge, eg, gg} read ket-then-bra. A local superoperator rho -> X rho Y^T is
the 4x4 matrix kron(Y, X); expectation values use <O> = sum_s O.ravel()[s] v[s].

The MPO row/column layout: row 0 opens a term, rows 1..4 carry the four
propagating channels (two with lambda = e^{i k0 d}, two with its conjugate),
column 5 closes a term. The on-site term V_n sits at (0, 5).
"""

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .coupling import GAMMA0
from .errors import CompressionError, DimensionMismatchError, GeometryError
from .jump_dynamics import ObservableSeries

logger = logging.getLogger(__name__)

MPO_BOND = 6
LOCAL_DIM = 4
DEFAULT_BOND_DIMENSION = 64
DEFAULT_SWEEPS = 2
SWEEP_TOLERANCE = 1e-10
SINGULAR_FLOOR = 1e-14
MAX_DENSE_MPO_ATOMS = 5
DEFAULT_DT_SCHEDULE: Tuple[Tuple[float, float], ...] = ((5.0, 1e-3), (math.inf, 1e-2))

_EYE2 = np.eye(2, dtype=complex)
_SEE = np.array([[1, 0], [0, 0]], dtype=complex)
_SEG = np.array([[0, 1], [0, 0]], dtype=complex)
_SGE = np.array([[0, 0], [1, 0]], dtype=complex)


def _superop(ket: np.ndarray, bra: np.ndarray) -> np.ndarray:
    """rho -> ket @ rho @ bra.T on one site."""
    return np.kron(bra, ket)


_IDENTITY = _superop(_EYE2, _EYE2)
_TRACE_VECTOR = _EYE2.ravel()
_EXCITED_VECTOR = _SEE.ravel()
_COHERENCE_VECTOR = _SEG.ravel()


def _onsite(gamma0: float, omega0: float) -> np.ndarray:
    return (
        -(1j * omega0 + gamma0 / 2.0) * _superop(_SEE, _EYE2)
        + (1j * omega0 - gamma0 / 2.0) * _superop(_EYE2, _SEE)
        + gamma0 * _superop(_SGE, _SGE)
    )


def _channels() -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Opening and closing operators of the four channels, in MPO row order."""
    ket_ge = _superop(_SGE, _EYE2)
    ket_eg = _superop(_SEG, _EYE2)
    bra_ge = _superop(_EYE2, _SGE)
    bra_eg = _superop(_EYE2, _SEG)
    opening = [bra_ge - ket_eg, ket_ge, bra_ge, ket_ge - bra_eg]
    closing = [ket_ge, bra_ge - ket_eg, ket_ge - bra_eg, bra_ge]
    return opening, closing


@dataclass(frozen=True)
class LiouvillianMpo:
    """Liouvillian（または 1 + L dt）のMPO"""
    n_atoms: int
    k0d: float
    gamma0: float
    omega0: float
    dt: Optional[float]
    tensors: Tuple[np.ndarray, ...]

    @property
    def stepped(self) -> bool:
        return self.dt is not None

    @property
    def phase(self) -> complex:
        return complex(np.exp(1j * self.k0d))


def build_liouvillian_mpo(n_atoms: int, k0d: float, dt: Optional[float] = None,
                          omega0: float = 0.0, gamma0: float = GAMMA0) -> LiouvillianMpo:
    """Waveguide Liouvillian MPO; with dt the tensors encode 1 + L dt.

    Tensors have shape (left bond, right bond, out, in); the first is a single
    row and the last a single column.
    """
    if n_atoms < 2:
        raise GeometryError(f"MPO needs at least 2 atoms, got {n_atoms}")
    if not k0d > 0.0 or not np.isfinite(k0d):
        raise GeometryError(f"k0d must be positive and finite, got {k0d}")
    if dt is not None and not dt > 0.0:
        raise GeometryError(f"time step must be positive, got {dt}")

    lam = np.exp(1j * k0d)
    weights = [lam, lam, np.conj(lam), np.conj(lam)]
    scale = 1.0 if dt is None else dt
    pair = gamma0 * scale / 2.0
    onsite = _onsite(gamma0, omega0) * scale
    opening, closing = _channels()

    bulk = np.zeros((MPO_BOND, MPO_BOND, LOCAL_DIM, LOCAL_DIM), dtype=complex)
    bulk[0, 0] = _IDENTITY
    bulk[-1, -1] = _IDENTITY
    bulk[0, -1] = onsite
    for c, (w, op_open, op_close) in enumerate(zip(weights, opening, closing), start=1):
        bulk[0, c] = pair * w * op_open
        bulk[c, c] = w * _IDENTITY
        bulk[c, -1] = op_close

    tensors = []
    for site in range(n_atoms):
        w = bulk.copy()
        if site == 0 and dt is not None:
            w[0, -1] = w[0, -1] + _IDENTITY
        if site == 0:
            w = w[:1]
        if site == n_atoms - 1:
            w = w[:, -1:]
        tensors.append(w)
    return LiouvillianMpo(n_atoms, float(k0d), float(gamma0), float(omega0), dt, tuple(tensors))


@lru_cache(maxsize=8)
def dense_index_map(n_atoms: int) -> np.ndarray:
    """Position in the row-major dense vec(rho) of each MPS basis index (site 1 most significant)."""
    idx = np.arange(LOCAL_DIM**n_atoms, dtype=np.int64)
    ket = np.zeros_like(idx)
    bra = np.zeros_like(idx)
    for n in range(1, n_atoms + 1):
        s = (idx // LOCAL_DIM ** (n_atoms - n)) % LOCAL_DIM
        ket += (1 - s % 2) << (n - 1)
        bra += (1 - s // 2) << (n - 1)
    out = ket * 2**n_atoms + bra
    out.setflags(write=False)
    return out


def mpo_to_dense(mpo: LiouvillianMpo) -> np.ndarray:
    """Contract the MPO into the dense 4^N matrix acting on row-major vec(rho) (N <= 5)."""
    if mpo.n_atoms > MAX_DENSE_MPO_ATOMS:
        raise DimensionMismatchError(
            f"dense MPO contraction limited to N <= {MAX_DENSE_MPO_ATOMS}, got N={mpo.n_atoms}"
        )
    acc = np.transpose(mpo.tensors[0][0], (1, 2, 0))
    for w in mpo.tensors[1:]:
        acc = np.einsum("oiw,wxst->ositx", acc, w)
        o, s, i, t, x = acc.shape
        acc = acc.reshape(o * s, i * t, x)
    matrix = acc[:, :, 0]
    perm = dense_index_map(mpo.n_atoms)
    dense = np.zeros_like(matrix)
    dense[np.ix_(perm, perm)] = matrix
    return dense


@dataclass
class MpsRho:
    """ベクトル化密度行列のMPS（サイトテンソル形状 (左, 4, 右)）"""
    tensors: List[np.ndarray]

    @property
    def n_atoms(self) -> int:
        return len(self.tensors)

    @property
    def bond_dimensions(self) -> List[int]:
        return [int(t.shape[2]) for t in self.tensors[:-1]]

    @classmethod
    def product(cls, site_matrices: Sequence[np.ndarray]) -> "MpsRho":
        return cls([np.asarray(rho, dtype=complex).T.reshape(1, LOCAL_DIM, 1) for rho in site_matrices])

    @classmethod
    def fully_inverted(cls, n_atoms: int) -> "MpsRho":
        return cls.product([_SEE] * n_atoms)

    @classmethod
    def clock(cls, n_atoms: int, phase_per_site: float) -> "MpsRho":
        """(|g> + e^{i k_L z_n}|e>)/sqrt(2) per site in the e-first local basis."""
        sites = []
        for n in range(1, n_atoms + 1):
            amp = np.array([np.exp(1j * phase_per_site * n), 1.0]) / np.sqrt(2.0)
            sites.append(np.outer(amp, amp.conj()))
        return cls.product(sites)

    def _contract_with(self, local: Sequence[np.ndarray]) -> complex:
        env = np.ones(1, dtype=complex)
        for a, v in zip(self.tensors, local):
            env = env @ np.einsum("asb,s->ab", a, v)
        return complex(env[0])

    def trace(self) -> complex:
        return self._contract_with([_TRACE_VECTOR] * self.n_atoms)

    def site_expectations(self, local: np.ndarray) -> np.ndarray:
        """<O_n> for every site from one left and one right trace sweep."""
        traced = [np.einsum("asb,s->ab", a, _TRACE_VECTOR) for a in self.tensors]
        weighted = [np.einsum("asb,s->ab", a, local) for a in self.tensors]
        left = [np.ones(1, dtype=complex)]
        for m in traced[:-1]:
            left.append(left[-1] @ m)
        right = [np.ones(1, dtype=complex)]
        for m in reversed(traced[1:]):
            right.append(m @ right[-1])
        right.reverse()
        return np.array([left[n] @ weighted[n] @ right[n] for n in range(self.n_atoms)])

    def n_excited(self) -> complex:
        return complex(np.sum(self.site_expectations(_EXCITED_VECTOR)))

    def coherence_sum(self, phase_per_site: float) -> complex:
        """sum_n e^{i k_L z_n} <sigma_eg^n>."""
        phases = np.exp(1j * phase_per_site * np.arange(1, self.n_atoms + 1))
        return complex(np.sum(phases * self.site_expectations(_COHERENCE_VECTOR)))

    def to_dense(self) -> np.ndarray:
        """Dense rho in the computational basis (bit n-1 = atom n excited)."""
        n_atoms = self.n_atoms
        if n_atoms > MAX_DENSE_MPO_ATOMS * 2:
            raise DimensionMismatchError(f"dense conversion limited to N <= {2 * MAX_DENSE_MPO_ATOMS}")
        vec = self.tensors[0]
        for a in self.tensors[1:]:
            vec = np.einsum("lsr,rtq->lstq", vec, a)
            vec = vec.reshape(1, -1, a.shape[2])
        flat = vec.reshape(-1)
        out = np.zeros(LOCAL_DIM**n_atoms, dtype=complex)
        out[dense_index_map(n_atoms)] = flat
        return out.reshape(2**n_atoms, 2**n_atoms)

    def scaled(self, factor: complex) -> "MpsRho":
        tensors = [t.copy() for t in self.tensors]
        tensors[0] = tensors[0] * factor
        return MpsRho(tensors)


def apply_mpo(mpo: LiouvillianMpo, state: MpsRho) -> MpsRho:
    if mpo.n_atoms != state.n_atoms:
        raise DimensionMismatchError(f"MPO has N={mpo.n_atoms}, state has N={state.n_atoms}")
    out = []
    for w, a in zip(mpo.tensors, state.tensors):
        b = np.einsum("xyst,ltr->lxsry", w, a)
        l, x, s, r, y = b.shape
        out.append(b.reshape(l * x, s, r * y))
    return MpsRho(out)


def _left_canonicalize(tensors: List[np.ndarray]) -> List[np.ndarray]:
    tensors = [t.copy() for t in tensors]
    for i in range(len(tensors) - 1):
        l, s, r = tensors[i].shape
        q, rr = scipy.linalg.qr(tensors[i].reshape(l * s, r), mode="economic")
        tensors[i] = q.reshape(l, s, q.shape[1])
        tensors[i + 1] = np.einsum("ab,bsc->asc", rr, tensors[i + 1])
    return tensors


def svd_truncate(state: MpsRho, max_bond: int) -> Tuple[MpsRho, float]:
    """Truncated-SVD compression; returns the right-canonical result and the largest discarded weight."""
    tensors = _left_canonicalize(state.tensors)
    discarded = 0.0
    for i in range(len(tensors) - 1, 0, -1):
        l, s, r = tensors[i].shape
        u, sv, vh = scipy.linalg.svd(tensors[i].reshape(l, s * r), full_matrices=False,
                                     lapack_driver="gesvd")
        total = float(np.sum(sv**2))
        if total == 0.0:
            raise CompressionError("state vanished during compression")
        keep = int(np.sum(sv > SINGULAR_FLOOR * sv[0]))
        keep = max(1, min(max_bond, keep))
        discarded = max(discarded, float(np.sum(sv[keep:] ** 2)) / total)
        tensors[i] = vh[:keep].reshape(keep, s, r)
        tensors[i - 1] = np.einsum("asb,bc->asc", tensors[i - 1], u[:, :keep] * sv[:keep])
    return MpsRho(tensors), discarded


def _overlap_left(env: np.ndarray, phi: np.ndarray, target: np.ndarray) -> np.ndarray:
    return np.einsum("ax,asb,xsy->by", env, phi.conj(), target)


def _overlap_right(env: np.ndarray, phi: np.ndarray, target: np.ndarray) -> np.ndarray:
    return np.einsum("asb,xsy,by->ax", phi.conj(), target, env)


def variational_compress(target: MpsRho, guess: MpsRho, max_sweeps: int = DEFAULT_SWEEPS,
                         tolerance: float = SWEEP_TOLERANCE) -> Tuple[MpsRho, float]:
    """One-site variational fit of a right-canonical guess to the target.

    Returns the fitted state and the relative change of its norm over the last sweep.
    """
    n = target.n_atoms
    phi = [t.copy() for t in guess.tensors]
    tgt = target.tensors
    one = np.ones((1, 1), dtype=complex)

    right: List[Optional[np.ndarray]] = [None] * (n + 1)
    right[n] = one
    for i in range(n - 1, 0, -1):
        right[i] = _overlap_right(right[i + 1], phi[i], tgt[i])
    left: List[Optional[np.ndarray]] = [None] * (n + 1)
    left[0] = one

    previous = None
    change = math.inf
    for sweep in range(max_sweeps):
        for i in range(n):
            m = np.einsum("ax,xsy,by->asb", left[i], tgt[i], right[i + 1])
            if i < n - 1:
                l, s, r = m.shape
                q, rr = scipy.linalg.qr(m.reshape(l * s, r), mode="economic")
                phi[i] = q.reshape(l, s, q.shape[1])
                phi[i + 1] = np.einsum("ab,bsc->asc", rr, phi[i + 1])
                left[i + 1] = _overlap_left(left[i], phi[i], tgt[i])
            else:
                phi[i] = m
        for i in range(n - 1, -1, -1):
            m = np.einsum("ax,xsy,by->asb", left[i], tgt[i], right[i + 1])
            if i > 0:
                l, s, r = m.shape
                q, rr = scipy.linalg.qr(m.reshape(l, s * r).conj().T, mode="economic")
                phi[i] = q.conj().T.reshape(q.shape[1], s, r)
                phi[i - 1] = np.einsum("asb,bc->asc", phi[i - 1], rr.conj().T)
                right[i] = _overlap_right(right[i + 1], phi[i], tgt[i])
            else:
                phi[i] = m
        norm = float(np.linalg.norm(phi[0]))
        if not np.isfinite(norm):
            raise CompressionError(f"variational sweep {sweep + 1} produced a non-finite state")
        if previous is not None:
            change = abs(norm - previous) / max(norm, 1e-300)
            if change < tolerance:
                break
        previous = norm
    return MpsRho(phi), change


@dataclass(frozen=True)
class DtSchedule:
    """時間刻みスケジュール（区間上限, dt）"""
    segments: Tuple[Tuple[float, float], ...] = DEFAULT_DT_SCHEDULE

    def dt_at(self, t: float) -> float:
        for until, dt in self.segments:
            if t < until - 1e-12:
                return dt
        return self.segments[-1][1]

    def validate(self) -> None:
        if not self.segments:
            raise GeometryError("dt schedule is empty")
        for until, dt in self.segments:
            if not dt > 0.0:
                raise GeometryError(f"time step must be positive, got {dt}")


@dataclass
class MpsDecayResult:
    """MPS時間発展の結果と診断量"""
    times: np.ndarray
    n_excited: np.ndarray
    trace_drift: np.ndarray
    truncation_error: np.ndarray
    coherence: Optional[np.ndarray] = None
    max_bond: int = 1
    steps: int = 0
    sweep_change: float = 0.0
    final_state: Optional[MpsRho] = None
    per_step_drift: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def accumulated_error(self) -> float:
        return float(np.nansum(self.truncation_error))

    @property
    def max_imaginary(self) -> float:
        return float(np.nanmax(np.abs(np.imag(self.n_excited)))) if self.n_excited.size else 0.0

    def to_observable_series(self) -> ObservableSeries:
        means = {"n_e": np.real(self.n_excited)}
        stderrs = {"n_e": np.zeros_like(means["n_e"])}
        return ObservableSeries(self.times, means, stderrs, n_trajectories=1)


@dataclass(frozen=True)
class MpsConfig:
    """MPS実行設定"""
    n_atoms: int
    k0d: float
    bond_dimension: int = DEFAULT_BOND_DIMENSION
    schedule: DtSchedule = field(default_factory=DtSchedule)
    omega0: float = 0.0
    sweeps: int = DEFAULT_SWEEPS
    sweep_tolerance: float = SWEEP_TOLERANCE
    truncation_ceiling: float = 1e-3
    phase_per_site: Optional[float] = None
    non_convergence_ceiling: float = 1e-6

    def validate(self) -> None:
        if self.n_atoms < 2:
            raise GeometryError(f"MPS engine needs N >= 2, got {self.n_atoms}")
        if self.bond_dimension < 1:
            raise GeometryError(f"bond dimension must be positive, got {self.bond_dimension}")
        if self.sweeps < 1:
            raise GeometryError(f"need at least one sweep, got {self.sweeps}")
        self.schedule.validate()


def _step_plan(times: np.ndarray, schedule: DtSchedule) -> List[Tuple[int, float]]:
    """(substeps, dt) per grid interval so that every step lands on the grid."""
    plan = []
    for t0, t1 in zip(times[:-1], times[1:]):
        span = t1 - t0
        dt = schedule.dt_at(t0)
        count = max(1, int(math.ceil(span / dt - 1e-9)))
        plan.append((count, span / count))
    return plan


def run_mps_decay(cfg: MpsConfig, times: Sequence[float], initial: Optional[MpsRho] = None) -> MpsDecayResult:
    """Euler steps with the dt-absorbed MPO, compression back to D and trace renormalization."""
    cfg.validate()
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0.0):
        raise GeometryError("time grid must be strictly increasing")
    state = initial if initial is not None else MpsRho.fully_inverted(cfg.n_atoms)
    if state.n_atoms != cfg.n_atoms:
        raise DimensionMismatchError(f"initial state has N={state.n_atoms}, config has N={cfg.n_atoms}")

    n_t = times.size
    result = MpsDecayResult(
        times=times,
        n_excited=np.full(n_t, np.nan, dtype=complex),
        trace_drift=np.zeros(n_t),
        truncation_error=np.zeros(n_t),
        coherence=None if cfg.phase_per_site is None else np.full(n_t, np.nan, dtype=complex),
    )

    def record(i: int, rho: MpsRho) -> None:
        result.n_excited[i] = rho.n_excited()
        if result.coherence is not None:
            result.coherence[i] = rho.coherence_sum(cfg.phase_per_site)

    record(0, state)
    mpos: Dict[float, LiouvillianMpo] = {}
    t = float(times[0])
    logger.info(
        f"🚀 MPS decay: N={cfg.n_atoms}, k0d={cfg.k0d:.4f}, D={cfg.bond_dimension}, {n_t} grid times"
    )

    for i, (count, dt) in enumerate(_step_plan(times, cfg.schedule), start=1):
        mpo = mpos.get(dt)
        if mpo is None:
            mpo = build_liouvillian_mpo(cfg.n_atoms, cfg.k0d, dt=dt, omega0=cfg.omega0)
            mpos[dt] = mpo
        worst = 0.0
        drift = 0.0
        for _ in range(count):
            stepped = apply_mpo(mpo, state)
            guess, discarded = svd_truncate(stepped, cfg.bond_dimension)
            fitted, change = variational_compress(stepped, guess, cfg.sweeps, cfg.sweep_tolerance)
            result.sweep_change = max(result.sweep_change, change if np.isfinite(change) else 0.0)
            if change > cfg.non_convergence_ceiling and np.isfinite(change):
                result.final_state = state
                raise CompressionError(
                    f"variational compression did not converge at t={t:.4f}: change {change:.3e}", partial=result
                )
            trace = fitted.trace()
            if abs(trace) < 1e-300 or not np.isfinite(trace):
                result.final_state = state
                raise CompressionError(f"trace vanished at t={t:.4f}", partial=result)
            drift = max(drift, abs(trace - 1.0))
            state = fitted.scaled(1.0 / trace)
            worst = max(worst, discarded)
            t += dt
            result.steps += 1
            result.max_bond = max([result.max_bond] + state.bond_dimensions)
            if discarded > cfg.truncation_ceiling:
                result.truncation_error[i] = worst
                result.trace_drift[i] = drift
                result.final_state = state
                raise CompressionError(
                    f"truncation error {discarded:.3e} above ceiling {cfg.truncation_ceiling:.1e} at t={t:.4f}",
                    partial=result,
                )
        result.per_step_drift.append((dt, drift))
        result.trace_drift[i] = drift
        result.truncation_error[i] = worst
        record(i, state)
        if i % max(1, n_t // 10) == 0:
            logger.debug(
                f"⏱️ MPS t={times[i]:.3f}: n_e={result.n_excited[i].real:.5f}, bonds<= {max(state.bond_dimensions)}"
            )

    result.final_state = state
    if result.max_imaginary > 1e-8:
        logger.warning(f"⚠️ MPS n_e imaginary part reached {result.max_imaginary:.3e}")
    logger.info(
        f"✅ MPS decay finished: {result.steps} steps, max bond {result.max_bond}, "
        f"accumulated truncation {result.accumulated_error:.3e}"
    )
    return result


def bond_convergence(cfg: MpsConfig, times: Sequence[float], at_time: float,
                     initial: Optional[MpsRho] = None) -> float:
    """|n_e(D) - n_e(2D)| at the grid time closest to at_time."""
    times = np.asarray(times, dtype=float)
    base = run_mps_decay(cfg, times, initial)
    doubled = run_mps_decay(replace(cfg, bond_dimension=2 * cfg.bond_dimension), times, initial)
    j = int(np.argmin(np.abs(times - at_time)))
    gap = float(abs(base.n_excited[j].real - doubled.n_excited[j].real))
    logger.info(f"🔁 Bond convergence D={cfg.bond_dimension} vs {2 * cfg.bond_dimension} at t={times[j]:.3g}: {gap:.3e}")
    return gap
