"""Total-spin sector basis and collective operators for equivalent spins.

When all pairwise dipolar couplings share one constant D, every collective
Hamiltonian commutes with the total angular momentum I^2, so the full
2^N-dimensional problem splits into independent blocks of fixed total spin
S = N/2, N/2-1, ..., N/2 - floor(N/2).  Each block is a (2S+1)-dimensional
multiplet spanned by |S, M> with M = S, S-1, ..., -S, and enters the trace
of any collective observable with an exact integer multiplicity n_N(S).

This module enumerates the sectors, computes their multiplicities in exact
integer arithmetic (they overflow 64-bit integers well before N = 601), and
builds the per-sector matrices of the collective Hamiltonians:

* the averaged double-quantum Hamiltonian  -(D/4) [(I+)^2 + (I-)^2],
* the secular dipolar Hamiltonian          (D/2) (3 Iz^2 - I^2),
* their convex combination at perturbation strength p,
* the high-temperature initial density Iz.

All matrices are expressed in the descending-M basis, so the element at
(row, col) carries coherence order k = M_row - M_col = col - row.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

HERMITICITY_ATOL = 1e-12


@dataclass(frozen=True)
class SpinSystem:
    """Problem definition: N equivalent spin-1/2 nuclei with one coupling D.

    With the default ``coupling = 1`` all times are dimensionless
    (tau_bar = D*tau, t_bar = D*t).
    """

    n_spins: int
    coupling: float = 1.0

    def __post_init__(self):
        if not isinstance(self.n_spins, int) or self.n_spins < 1:
            raise ValueError(f"n_spins must be a positive integer, got {self.n_spins!r}")
        if not self.coupling > 0:
            raise ValueError(f"coupling must be positive, got {self.coupling!r}")


@dataclass(frozen=True, eq=False)
class SpinSector:
    """One total-spin block: quantum number S, dimension 2S+1, multiplicity.

    ``m_values`` lists the magnetic quantum numbers in descending order;
    row/column i of every block matrix corresponds to ``m_values[i]``.
    """

    total_spin: float
    dim: int
    degeneracy: int
    m_values: np.ndarray


class BlockOperator:
    """A collective operator stored as one dense matrix per sector."""

    def __init__(self, sectors, blocks):
        if len(sectors) != len(blocks):
            raise ValueError("sector/block count mismatch")
        for sec, blk in zip(sectors, blocks):
            if blk.shape != (sec.dim, sec.dim):
                raise ValueError(f"block for S={sec.total_spin} has shape {blk.shape}")
        self.sectors = tuple(sectors)
        self.blocks = list(blocks)

    def copy(self) -> "BlockOperator":
        return BlockOperator(self.sectors, [b.copy() for b in self.blocks])

    def weighted_trace(self) -> complex:
        """Full-space trace: sector traces weighted by their multiplicities."""
        return sum(float(s.degeneracy) * np.trace(b) for s, b in zip(self.sectors, self.blocks))

    def hermiticity_defect(self) -> float:
        """Largest element-wise deviation from A = A^dagger over all blocks."""
        return max(float(np.max(np.abs(b - b.conj().T))) if b.size else 0.0 for b in self.blocks)


def sector_degeneracy(n_spins: int, total_spin: float) -> int:
    """Multiplicity n_N(S) = N! (2S+1) / ((N/2+S+1)! (N/2-S)!), exactly.

    Evaluated in arbitrary-precision integer arithmetic; the division is
    exact for every admissible (N, S).
    """
    two_s = int(round(2 * total_spin))
    if two_s < 0 or two_s > n_spins or (n_spins - two_s) % 2:
        raise ValueError(f"total spin {total_spin} invalid for N={n_spins}")
    a = (n_spins + two_s) // 2
    b = (n_spins - two_s) // 2
    num = factorial(n_spins) * (two_s + 1)
    den = factorial(a + 1) * factorial(b)
    deg, rem = divmod(num, den)
    if rem:
        raise ArithmeticError("multiplicity formula did not divide exactly")
    return deg


def enumerate_sectors(system: SpinSystem) -> list[SpinSector]:
    """All total-spin sectors of ``system`` in descending-S order.

    The identity sum_S n_N(S) (2S+1) = 2^N is verified in exact integer
    arithmetic before returning.
    """
    n = system.n_spins
    sectors = []
    total = 0
    for two_s in range(n, n % 2 - 1, -2):
        s = two_s / 2.0
        dim = two_s + 1
        deg = sector_degeneracy(n, s)
        m_values = s - np.arange(dim)
        sectors.append(SpinSector(s, dim, deg, m_values))
        total += deg * dim
    if total != 2**n:
        raise ArithmeticError(f"sector dimensions sum to {total}, expected 2^{n}")
    return sectors


def ladder_elements(total_spin: float, direction: str) -> list[tuple[float, float, float]]:
    """Nonzero matrix elements of the collective raising/lowering operator.

    Returns (m_from, m_to, amplitude) triples with
    amplitude = sqrt(S(S+1) - m_from (m_from +/- 1)) and m_to = m_from +/- 1,
    listed for every m_from with |m_to| <= S.
    """
    if direction not in ("+", "-"):
        raise ValueError(f"direction must be '+' or '-', got {direction!r}")
    step = 1.0 if direction == "+" else -1.0
    s = float(total_spin)
    out = []
    two_s = int(round(2 * s))
    for i in range(two_s + 1):
        m_from = -s + i
        m_to = m_from + step
        if abs(m_to) > s + 1e-12:
            continue
        amp = np.sqrt(s * (s + 1) - m_from * (m_from + step))
        out.append((m_from, m_to, float(amp)))
    return out


def _raising_amplitude(s: float, m: float) -> float:
    # <S, M+1 | I+ | S, M>
    return np.sqrt(s * (s + 1) - m * (m + 1))


def double_quantum_hamiltonian(system: SpinSystem) -> BlockOperator:
    """Averaged double-quantum Hamiltonian -(D/4) [(I+)^2 + (I-)^2].

    Within a sector it couples only states with M differing by 2, so every
    block has nonzero entries on the second off-diagonals alone.
    """
    d = system.coupling
    sectors = enumerate_sectors(system)
    blocks = []
    for sec in sectors:
        s = sec.total_spin
        blk = np.zeros((sec.dim, sec.dim), dtype=complex)
        # <M+2 | (I+)^2 | M> = c+(M) c+(M+1); descending basis puts M at
        # index S - M, hence M+2 two rows above.
        for j in range(sec.dim):
            m = sec.m_values[j]
            if m + 2 <= s + 1e-12:
                amp = _raising_amplitude(s, m) * _raising_amplitude(s, m + 1)
                blk[j - 2, j] = -(d / 4.0) * amp
                blk[j, j - 2] = blk[j - 2, j]
        blocks.append(blk)
    return BlockOperator(sectors, blocks)


def secular_dipolar_hamiltonian(system: SpinSystem) -> BlockOperator:
    """Secular dipolar Hamiltonian (D/2) (3 Iz^2 - I^2), diagonal per sector."""
    d = system.coupling
    sectors = enumerate_sectors(system)
    blocks = []
    for sec in sectors:
        s = sec.total_spin
        diag = (d / 2.0) * (3.0 * sec.m_values**2 - s * (s + 1))
        blocks.append(np.diag(diag).astype(complex))
    return BlockOperator(sectors, blocks)


def effective_hamiltonian(system: SpinSystem, p: float) -> BlockOperator:
    """Preparation-period Hamiltonian (1-p) H_dq + p H_dz.

    ``p`` is the fraction of each preparation cycle spent under the secular
    dipolar coupling; p = 0 recovers the pure double-quantum Hamiltonian and
    p = 1 the pure secular one.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"perturbation strength p must lie in [0, 1], got {p!r}")
    dq = double_quantum_hamiltonian(system)
    dz = secular_dipolar_hamiltonian(system)
    blocks = [(1.0 - p) * a + p * b for a, b in zip(dq.blocks, dz.blocks)]
    return BlockOperator(dq.sectors, blocks)


def initial_density(system: SpinSystem) -> BlockOperator:
    """High-temperature equilibrium density, stored unnormalized as Iz.

    The 1/Tr{Iz^2} normalization is applied exactly once, when coherence
    intensities are computed.
    """
    sectors = enumerate_sectors(system)
    blocks = [np.diag(sec.m_values).astype(complex) for sec in sectors]
    return BlockOperator(sectors, blocks)


def iz_squared_trace(system: SpinSystem) -> float:
    """Tr{Iz^2} over the full 2^N space, via sector sums.

    Per sector sum_M M^2 = S(S+1)(2S+1)/3; multiplicities are converted to
    float only here, at the weighted-sum stage.
    """
    total = 0.0
    for sec in enumerate_sectors(system):
        s = sec.total_spin
        total += float(sec.degeneracy) * (s * (s + 1) * (2 * s + 1) / 3.0)
    return total


def coherence_order_mask(dim: int, k: int) -> np.ndarray:
    """Boolean mask of the elements carrying coherence order k.

    In the descending-M basis the element (i, j) connects M_i and M_j with
    order k = M_i - M_j = j - i.
    """
    idx = np.arange(dim)
    return (idx[None, :] - idx[:, None]) == k
