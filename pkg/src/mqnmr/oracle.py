"""Brute-force full-Hilbert-space reference for small spin counts.

Everything here is assembled from single-spin 2x2 matrices by Kronecker
products in the 2^N product basis and evolved by dense eigendecomposition.
It deliberately shares no construction code with the sector-based modules
(only the problem definition), so agreement between the two certifies the
block pipeline end to end.  Sizes are capped: this module is a correctness
authority, not a production path.
"""

from __future__ import annotations

import numpy as np

from .sectors import SpinSystem

MAX_SPINS = 12

_SPIN_PLUS = np.array([[0.0, 1.0], [0.0, 0.0]])
_SPIN_Z = np.array([[0.5, 0.0], [0.0, -0.5]])


def _check_size(system: SpinSystem, limit: int = MAX_SPINS) -> None:
    if system.n_spins > limit:
        raise ValueError(f"full-space reference limited to N <= {limit}, got {system.n_spins}")


def _collective(n: int, single: np.ndarray) -> np.ndarray:
    total = np.zeros((2**n, 2**n))
    for j in range(n):
        op = np.eye(2 ** j)
        op = np.kron(op, single)
        op = np.kron(op, np.eye(2 ** (n - j - 1)))
        total += op
    return total


def collective_operators(system: SpinSystem) -> dict:
    """Collective I+, I-, Iz and I^2 in the product basis."""
    _check_size(system)
    n = system.n_spins
    iplus = _collective(n, _SPIN_PLUS)
    iminus = iplus.T
    iz = _collective(n, _SPIN_Z)
    ix = 0.5 * (iplus + iminus)
    iy_im = 0.5 * (iplus - iminus)  # Iy = -i * iy_im; Iy^2 = -iy_im @ iy_im
    i_squared = ix @ ix - iy_im @ iy_im + iz @ iz
    return {"iplus": iplus, "iminus": iminus, "iz": iz, "i2": i_squared}


def full_double_quantum(system: SpinSystem) -> np.ndarray:
    ops = collective_operators(system)
    d = system.coupling
    return -(d / 4.0) * (ops["iplus"] @ ops["iplus"] + ops["iminus"] @ ops["iminus"])


def full_secular_dipolar(system: SpinSystem) -> np.ndarray:
    ops = collective_operators(system)
    d = system.coupling
    return (d / 2.0) * (3.0 * ops["iz"] @ ops["iz"] - ops["i2"])


def full_secular_dipolar_pairwise(system: SpinSystem) -> np.ndarray:
    """Secular dipolar Hamiltonian summed explicitly over spin pairs.

    sum_{j<k} D (2 Iz_j Iz_k - Ix_j Ix_k - Iy_j Iy_k); equals the collective
    form for equal couplings and serves as an extra cross-check.
    """
    _check_size(system)
    n = system.n_spins
    d = system.coupling
    sx = 0.5 * (_SPIN_PLUS + _SPIN_PLUS.T)
    sy = -0.5j * (_SPIN_PLUS - _SPIN_PLUS.T)
    sz = _SPIN_Z.astype(complex)
    total = np.zeros((2**n, 2**n), dtype=complex)
    for j in range(n):
        for k in range(j + 1, n):
            for weight, single in ((2.0, sz), (-1.0, sx), (-1.0, sy)):
                op = np.eye(1, dtype=complex)
                for site in range(n):
                    factor = single if site in (j, k) else np.eye(2, dtype=complex)
                    op = np.kron(op, factor)
                total += d * weight * op
    return total


def full_effective(system: SpinSystem, p: float) -> np.ndarray:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"perturbation strength p must lie in [0, 1], got {p!r}")
    return (1.0 - p) * full_double_quantum(system) + p * full_secular_dipolar(system)


def full_initial_density(system: SpinSystem) -> np.ndarray:
    _check_size(system)
    return _collective(system.n_spins, _SPIN_Z)


def _conjugate_by_exp(hamiltonian: np.ndarray, duration: float, matrix: np.ndarray) -> np.ndarray:
    lam, v = np.linalg.eigh(hamiltonian)
    u = (v * np.exp(-1j * lam * duration)) @ v.conj().T
    return u @ matrix @ u.conj().T


def _order_masks(iz_diag: np.ndarray) -> np.ndarray:
    return np.rint(iz_diag[:, None] - iz_diag[None, :]).astype(int)


def oracle_standard_intensities(system: SpinSystem, tau: float, t: float) -> dict:
    """J_k(tau, t) for the standard experiment, fully in the product basis.

    Coherence orders are binned by the Iz eigenvalue difference of the
    connected product states.  Returns {k: J_k} with real values.
    """
    _check_size(system, limit=10)
    iz = full_initial_density(system)
    rho_tau = _conjugate_by_exp(full_double_quantum(system), tau, iz.astype(complex))
    rho_deph = _conjugate_by_exp(full_secular_dipolar(system), t, rho_tau)
    dm = _order_masks(np.diag(iz))
    norm = float(np.sum(np.diag(iz) ** 2))
    n = system.n_spins
    out = {}
    for k in range(-n, n + 1):
        mask = dm == k
        # Tr{A_k B_-k} = sum over elements (r, c) with order k of A[r,c] B[c,r]
        out[k] = float(np.real(np.sum(rho_deph[mask] * rho_tau.T[mask]))) / norm
    return out


def oracle_perturbed_intensities(system: SpinSystem, p: float, tau: float, mixing: str = "ideal_mq") -> dict:
    """J_k(tau, p) for the perturbed experiment in the product basis."""
    _check_size(system, limit=10)
    iz = full_initial_density(system)
    rho_pert = _conjugate_by_exp(full_effective(system, p), tau, iz.astype(complex))
    if mixing == "ideal_mq":
        partner = _conjugate_by_exp(full_double_quantum(system), tau, iz.astype(complex))
    elif mixing == "matched_heff":
        partner = rho_pert
    else:
        raise ValueError(f"unknown mixing {mixing!r}")
    dm = _order_masks(np.diag(iz))
    norm = float(np.sum(np.diag(iz) ** 2))
    n = system.n_spins
    out = {}
    for k in range(-n, n + 1):
        mask = dm == k
        out[k] = float(np.real(np.sum(rho_pert[mask] * partner.T[mask]))) / norm
    return out
