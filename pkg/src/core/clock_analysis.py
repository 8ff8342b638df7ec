"""
Ramsey Clock Signal Analysis
時計信号の後処理：フリンジ稜線抽出・べき則スロープ解析

Sign convention: S = -2 Re sum_n e^{i k_L z_n} <sigma_eg^n>. A collective
shift omega makes <sigma_eg> rotate as e^{i omega t}, so the central fringe
sits at delta_m = omega.
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .coupling import ArrayGeometry, build_coupling_matrices
from .errors import FitError, RefinementError
from .mean_field import CumulantState, coherence_sum, time_derivative
from .spectrum import ScalingFit, ScalingModel, fit_scaling

logger = logging.getLogger(__name__)

DEFAULT_DELTA_SPAN = 3.0
DEFAULT_DELTA_POINTS = 61


def default_delta_grid(span: float = DEFAULT_DELTA_SPAN, points: int = DEFAULT_DELTA_POINTS) -> np.ndarray:
    return np.linspace(-span, span, points)


@dataclass(frozen=True)
class FringeSurface:
    """Ramsey信号面 S(delta, t)"""
    deltas: np.ndarray
    times: np.ndarray
    signal: np.ndarray
    stderr: np.ndarray
    delta_m: Optional[np.ndarray] = None
    s_m_abs: Optional[np.ndarray] = None
    truncated_at: Optional[float] = None
    extremum_sign: Optional[int] = None

    @property
    def truncated(self) -> bool:
        return self.truncated_at is not None


def independent_atom_signal(n_atoms: int, delta, t):
    """Closed form -N cos(delta t) e^{-t/2}; array inputs give a (delta, t) surface."""
    delta = np.asarray(delta, dtype=float)
    t = np.asarray(t, dtype=float)
    if delta.ndim and t.ndim:
        return -n_atoms * np.cos(np.multiply.outer(delta, t)) * np.exp(-t / 2.0)[None, :]
    return -n_atoms * np.cos(delta * t) * np.exp(-t / 2.0)


def _vertex(x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    a, b, c = np.polyfit(x, y, 2)
    if a >= 0.0:
        j = int(np.argmax(y))
        return float(x[j]), float(y[j])
    x0 = -b / (2.0 * a)
    x0 = float(np.clip(x0, x.min(), x.max()))
    return x0, float(np.polyval([a, b, c], x0))


def _climb(values: np.ndarray, start: int) -> int:
    j = start
    while True:
        best = j
        if j > 0 and values[j - 1] > values[best]:
            best = j - 1
        if j < len(values) - 1 and values[j + 1] > values[best]:
            best = j + 1
        if best == j:
            return j
        j = best


def extract_ridge(surface: FringeSurface) -> FringeSurface:
    """中央フリンジの稜線追跡（t=0 からの連続追跡＋放物線補間）"""
    deltas = np.asarray(surface.deltas, dtype=float)
    signal = np.asarray(surface.signal, dtype=float)
    times = np.asarray(surface.times, dtype=float)
    if deltas.size < 3:
        raise RefinementError(f"need at least 3 detunings, got {deltas.size}")
    if np.any(np.diff(deltas) <= 0.0):
        raise RefinementError("detuning grid must be strictly increasing")
    if not deltas[0] <= 0.0 <= deltas[-1]:
        raise RefinementError(f"detuning grid [{deltas[0]}, {deltas[-1]}] does not cover delta = 0")

    n_t = times.size
    delta_m = np.full(n_t, np.nan)
    s_m_abs = np.full(n_t, np.nan)
    centre = int(np.argmin(np.abs(deltas)))

    live = np.flatnonzero(np.abs(signal[centre]) > 0.0)
    sign = -1 if live.size == 0 or signal[centre, live[0]] < 0.0 else 1
    previous = 0.0
    truncated_at = None
    resolved = False

    for i in range(n_t):
        column = sign * signal[:, i]
        if np.ptp(column) <= 1e-14 * max(1.0, np.max(np.abs(column))):
            delta_m[i] = previous
            s_m_abs[i] = abs(signal[int(np.argmin(np.abs(deltas - previous))), i])
            continue
        start = int(np.argmin(np.abs(deltas - previous)))
        j = _climb(column, start)
        if j == 0 or j == deltas.size - 1:
            if not resolved:
                raise RefinementError("detuning grid does not bracket the central fringe")
            truncated_at = float(times[i - 1]) if i > 0 else 0.0
            logger.warning(f"⚠️ Ridge left the detuning grid after t={truncated_at:.3f}")
            break
        x0, peak = _vertex(deltas[j - 1 : j + 2], column[j - 1 : j + 2])
        delta_m[i] = x0
        s_m_abs[i] = abs(peak)
        previous = x0
        resolved = True

    return replace(surface, delta_m=delta_m, s_m_abs=s_m_abs, truncated_at=truncated_at, extremum_sign=sign)


@dataclass(frozen=True)
class SlopeSeries:
    """局所 log-log スロープ"""
    centers: np.ndarray
    slopes: np.ndarray
    residuals: np.ndarray


def instantaneous_slope(times: Sequence[float], values: Sequence[float],
                        window: Optional[Tuple[float, float]] = None, points: int = 5) -> SlopeSeries:
    """Sliding log-log fit of `points` consecutive samples, one per window center."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if points < 3:
        raise FitError(f"sliding window needs at least 3 points, got {points}")
    sel = times > 0.0
    if window is not None:
        sel &= (times >= window[0]) & (times <= window[1])
    t, v = times[sel], values[sel]
    if t.size < points:
        raise FitError(f"window holds {t.size} samples, fewer than {points}")
    if np.any(v <= 0.0) or not np.all(np.isfinite(v)):
        raise FitError("instantaneous slope needs strictly positive values")

    logt, logv = np.log(t), np.log(v)
    half = points // 2
    centers, slopes, residuals = [], [], []
    for c in range(half, t.size - (points - 1 - half)):
        lo = c - half
        x, y = logt[lo : lo + points], logv[lo : lo + points]
        slope, intercept = np.polyfit(x, y, 1)
        centers.append(t[c])
        slopes.append(slope)
        residuals.append(np.sqrt(np.mean((y - slope * x - intercept) ** 2)))
    return SlopeSeries(np.array(centers), np.array(slopes), np.array(residuals))


def power_law_exponent(times: Sequence[float], values: Sequence[float], window: Tuple[float, float]) -> ScalingFit:
    """eta from a single log-log fit over the window (negative for decay)."""
    pts = np.column_stack([np.asarray(times, dtype=float), np.asarray(values, dtype=float)])
    pts = pts[pts[:, 0] > 0.0]
    return fit_scaling(pts, ScalingModel.POWER_LAW_ETA, window)


def short_time_shift(geometry: ArrayGeometry, phase_per_site: float) -> float:
    """Leading-order collective shift Im[(dC/dt)/C] at t = 0 for the clock state.

    C is the phased coherence sum. Reconstructed from the second-order
    mean-field derivative, which is exact at t = 0 for a product state.
    """
    cm = build_coupling_matrices(geometry)
    state = CumulantState.clock(geometry.atom_count, phase_per_site)
    derivative = time_derivative(cm, state, detuning=0.0)
    c0 = coherence_sum(state, phase_per_site)
    dc = coherence_sum(derivative, phase_per_site)
    shift = float(np.imag(dc / c0))
    logger.info(f"⏱️ Short-time shift for N={geometry.atom_count}, k_L d={phase_per_site:.4f}: {shift:+.5f}")
    return shift
