"""
Dense Master-Equation Reference
小規模系の密度行列直接積分（検証用オラクル）

Computational basis index s has bit n-1 set when atom n is excited.
Vectorization is row-major: vec(rho) = rho.reshape(-1), so that
vec(A rho B) = (A kron B^T) vec(rho).
"""

import logging
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from .coupling import CouplingMatrices
from .errors import DimensionMismatchError, IntegrationError, ManifoldError

logger = logging.getLogger(__name__)

MAX_DENSITY_ATOMS = 8
MAX_SUPEROPERATOR_ATOMS = 5


@lru_cache(maxsize=32)
def full_lowering(n_atoms: int, site: int) -> np.ndarray:
    """sigma_ge for 1-based site as a dense 2^N matrix."""
    if not 1 <= site <= n_atoms:
        raise ManifoldError(f"site {site} out of range [1, {n_atoms}]")
    dim = 2**n_atoms
    bit = 1 << (site - 1)
    states = np.arange(dim)
    src = states[(states & bit) != 0]
    op = np.zeros((dim, dim))
    op[src ^ bit, src] = 1.0
    op.setflags(write=False)
    return op


def full_heff(h: np.ndarray) -> np.ndarray:
    """sum_{m,n} h[m,n] sigma_eg^m sigma_ge^n on the 2^N space."""
    h = np.asarray(h, dtype=complex)
    n_atoms = h.shape[0]
    if n_atoms > MAX_DENSITY_ATOMS + 4:
        raise DimensionMismatchError(f"dense H_eff limited to N <= {MAX_DENSITY_ATOMS + 4}")
    dim = 2**n_atoms
    states = np.arange(dim)
    heff = np.zeros((dim, dim), dtype=complex)
    for n in range(n_atoms):
        has_n = (states >> n) & 1 == 1
        heff[states[has_n], states[has_n]] += h[n, n]
        for m in range(n_atoms):
            if m == n:
                continue
            src = states[has_n & ((states >> m) & 1 == 0)]
            heff[src ^ (1 << n) ^ (1 << m), src] += h[m, n]
    return heff


def n_excited_diagonal(n_atoms: int) -> np.ndarray:
    states = np.arange(2**n_atoms)
    return np.array([bin(s).count("1") for s in states], dtype=float)


def _check_density_size(n_atoms: int) -> None:
    if n_atoms > MAX_DENSITY_ATOMS:
        raise DimensionMismatchError(
            f"dense density-matrix integration is limited to N <= {MAX_DENSITY_ATOMS}, got N={n_atoms}"
        )


def jump_channels(cm: CouplingMatrices) -> Tuple[np.ndarray, np.ndarray]:
    """Rates and dense collective lowering operators of the active channels."""
    n_atoms = cm.atom_count
    active = cm.channel_rates > 0.0
    lowering = np.stack([full_lowering(n_atoms, s) for s in range(1, n_atoms + 1)])
    operators = np.einsum("mc,mij->cij", cm.channel_vectors[:, active], lowering)
    return cm.channel_rates[active], operators


def lindblad_rhs(heff: np.ndarray, rates: np.ndarray, operators: np.ndarray):
    def rhs(_t: float, y: np.ndarray) -> np.ndarray:
        dim = heff.shape[0]
        rho = y.reshape(dim, dim)
        drho = -1j * (heff @ rho - rho @ heff.conj().T)
        for rate, op in zip(rates, operators):
            drho += rate * (op @ rho @ op.T)
        return drho.reshape(-1)

    return rhs


def integrate_density_matrix(cm: CouplingMatrices, rho0: np.ndarray, times: Sequence[float],
                             detuning: float = 0.0, coherent_only: bool = False,
                             rtol: float = 1e-10, atol: float = 1e-12) -> np.ndarray:
    """密度行列の時間発展（N <= 8）

    Returns rho(t) for every grid time, shape (len(times), 2^N, 2^N).
    """
    n_atoms = cm.atom_count
    _check_density_size(n_atoms)
    dim = 2**n_atoms
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (dim, dim):
        raise DimensionMismatchError(f"rho0 must be {dim}x{dim}, got {rho0.shape}")
    times = np.asarray(times, dtype=float)

    heff = full_heff(cm.with_detuning(detuning, coherent_only=coherent_only))
    if coherent_only:
        rates, operators = np.zeros(0), np.zeros((0, dim, dim))
    else:
        rates, operators = jump_channels(cm)

    sol = solve_ivp(
        lindblad_rhs(heff, rates, operators),
        (float(times[0]), float(times[-1])),
        rho0.reshape(-1),
        method="DOP853",
        t_eval=times,
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        raise IntegrationError(f"density-matrix integration failed: {sol.message}")
    logger.debug(f"📐 Dense master equation integrated: N={n_atoms}, steps={sol.t.size}")
    return sol.y.T.reshape(len(times), dim, dim)


def expectation_series(rhos: np.ndarray, operator: np.ndarray) -> np.ndarray:
    """Tr(A rho(t)) for every time slice."""
    return np.einsum("ij,tji->t", operator, rhos)


def n_excited_series(rhos: np.ndarray) -> np.ndarray:
    n_atoms = int(round(np.log2(rhos.shape[-1])))
    diag = np.real(np.einsum("tii->ti", rhos))
    return diag @ n_excited_diagonal(n_atoms)


def coherence_series(rhos: np.ndarray, phase_per_site: float) -> np.ndarray:
    """sum_n e^{i k_L z_n} <sigma_eg^n> with z_n = n*d."""
    n_atoms = int(round(np.log2(rhos.shape[-1])))
    total = np.zeros(rhos.shape[0], dtype=complex)
    for site in range(1, n_atoms + 1):
        raising = full_lowering(n_atoms, site).T
        total += np.exp(1j * phase_per_site * site) * expectation_series(rhos, raising)
    return total


def superoperator(cm: CouplingMatrices, detuning: float = 0.0) -> np.ndarray:
    """Dense 4^N Liouvillian, row-major vectorization (N <= 5)."""
    n_atoms = cm.atom_count
    if n_atoms > MAX_SUPEROPERATOR_ATOMS:
        raise DimensionMismatchError(
            f"dense Liouvillian limited to N <= {MAX_SUPEROPERATOR_ATOMS}, got N={n_atoms}"
        )
    dim = 2**n_atoms
    eye = np.eye(dim)
    heff = full_heff(cm.with_detuning(detuning))
    liouvillian = -1j * (np.kron(heff, eye) - np.kron(eye, heff.conj()))
    for m in range(n_atoms):
        lower_m = full_lowering(n_atoms, m + 1)
        for n in range(n_atoms):
            if cm.gamma[m, n] == 0.0:
                continue
            liouvillian += cm.gamma[m, n] * np.kron(lower_m, full_lowering(n_atoms, n + 1))
    return liouvillian


def apply_lindbladian(cm: CouplingMatrices, rho: np.ndarray, detuning: float = 0.0) -> np.ndarray:
    """Direct operator-form evaluation of L[rho] using the site-resolved gamma matrix."""
    n_atoms = cm.atom_count
    heff = full_heff(cm.with_detuning(detuning))
    out = -1j * (heff @ rho - rho @ heff.conj().T)
    for m in range(n_atoms):
        lower_m = full_lowering(n_atoms, m + 1)
        for n in range(n_atoms):
            out += cm.gamma[m, n] * (lower_m @ rho @ full_lowering(n_atoms, n + 1).T)
    return out


def pure_density(psi: np.ndarray, normalize: Optional[bool] = True) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    if normalize:
        psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())
