"""Parity-split evolution kernels for large spin counts.

Inside a total-spin sector both collective Hamiltonians only connect states
whose M values differ by 0 or 2, so the even and odd values of (S - M) never
mix: each sector factors into two independent tridiagonal chains, and the
density matrix stays block-diagonal in this parity.  Odd coherence orders
are therefore exactly zero by construction.

Everything expensive here reduces to, per chain,

    rho(tau) = V (C o exp(-i (lam_a - lam_b) tau)) V^T,

with V, lam the (real) chain eigensystem and C = V^T diag(m) V, evaluated as
two real matrix products for the cosine part and two for the sine part.
Three entry points cover all experiments:

* ``coherence_table_at``       -- |rho_MM'|^2 at one tau, reduced to a
                                  (k, q) table from which the intensity of
                                  order k at any dephasing time t follows as
                                  sum_q G[k,q] cos(3 D k q t / 2),
* ``averaged_coherence_table`` -- the same table averaged over a tau window
                                  with composite-trapezoid weights,
* ``perturbed_sweep``          -- order-resolved overlap of the perturbed
                                  and ideal preparations on a tau grid.

Reductions always run in descending-S sector order regardless of worker
count, so results are bit-identical for any parallelism level.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .sectors import SpinSector, SpinSystem, enumerate_sectors, iz_squared_trace

MIXING_IDEAL = "ideal_mq"
MIXING_MATCHED = "matched_heff"
WORKERS_ENV = "MQNMR_WORKERS"


def resolve_workers(workers=None) -> int:
    """Worker count from argument or MQNMR_WORKERS; defaults to 1.

    The BLAS already threads the matrix products across cores, so a single
    orchestration thread is normally fastest; higher counts only change the
    scheduling, never the results (reductions stay in fixed order).
    """
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env is not None else 1
    return max(1, min(int(workers), 64))


def _map_ordered(fn, items, workers, progress=None):
    # Gather order equals submission order, independent of completion order.
    out = []
    if workers <= 1 or len(items) <= 1:
        for item in items:
            out.append(fn(item))
            if progress is not None:
                progress(len(out), len(items))
        return out
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for result in pool.map(fn, items):
            out.append(result)
            if progress is not None:
                progress(len(out), len(items))
    return out


@dataclass
class ChainBasis:
    """One parity chain of a sector, with its eigensystem ready for evolution."""

    m: np.ndarray          # magnetic quantum numbers, descending, stride 2
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray   # real orthogonal, columns are eigenvectors
    iz_eigbasis: np.ndarray    # C = V^T diag(m) V


@dataclass
class SectorChains:
    sector: SpinSector
    chains: list


def _raising_amplitude(s: float, m: np.ndarray) -> np.ndarray:
    return np.sqrt(s * (s + 1) - m * (m + 1))


def build_sector_chains(system: SpinSystem, sector: SpinSector, p: float) -> SectorChains:
    """Diagonalize the two parity chains of H_eff(p) for one sector.

    The chain Hamiltonian is tridiagonal: the secular part contributes the
    diagonal (scaled by p), the double-quantum part the off-diagonal
    (scaled by 1-p).
    """
    s = sector.total_spin
    d = system.coupling
    chains = []
    for parity in (0, 1):
        m = sector.m_values[parity::2]
        n = len(m)
        if n == 0:
            continue
        ham = np.zeros((n, n))
        diag = p * (d / 2.0) * (3.0 * m**2 - s * (s + 1))
        ham[np.arange(n), np.arange(n)] = diag
        if n > 1:
            lower = m[1:]  # coupled pairs are (M, M+2) with M = m[a+1]
            off = -(1.0 - p) * (d / 4.0) * _raising_amplitude(s, lower) * _raising_amplitude(s, lower + 1)
            ham[np.arange(n - 1), np.arange(1, n)] = off
            ham[np.arange(1, n), np.arange(n - 1)] = off
        lam, v = np.linalg.eigh(ham)
        c = v.T @ (m[:, None] * v)
        chains.append(ChainBasis(m, lam, v, c))
    return SectorChains(sector, chains)


def _evolved_parts(chain: ChainBasis, tau: float):
    """Real and imaginary parts of rho(tau) on one chain."""
    u = np.exp(-1j * chain.eigenvalues * tau)
    phase = np.outer(u, u.conj())
    v = chain.eigenvectors
    re = (v @ (chain.iz_eigbasis * phase.real)) @ v.T
    im = (v @ (chain.iz_eigbasis * phase.imag)) @ v.T
    return re, im


def _tau_block_size(n: int) -> int:
    # Bounded scratch (~35 MB complex per block); depends only on the chain
    # size so results cannot vary with the worker count.
    return max(8, min(64, (1 << 21) // max(n * n, 1)))


def _sandwich_block(v: np.ndarray, b: np.ndarray) -> np.ndarray:
    """v @ b[t] @ v.T for every slice, flattened into two large products.

    The right multiplication reuses the contiguous layout for free; the left
    one needs a single transposing copy to group the slices column-wise.
    """
    t, n, _ = b.shape
    q = (b.reshape(t * n, n) @ v.T).reshape(t, n, n)
    cols = q.transpose(1, 0, 2).reshape(n, t * n)
    z = (v @ cols).reshape(n, t, n)
    return z.transpose(1, 0, 2)


def _evolved_parts_block(chain: ChainBasis, taus: np.ndarray):
    """Real/imaginary parts of rho(tau) for a block of times, shape (T, n, n).

    The returned arrays are strided views; consumers only reduce them
    element-wise, so the layout never leaks.
    """
    u = np.exp(-1j * np.outer(taus, chain.eigenvalues))
    phase = u[:, :, None] * u.conj()[:, None, :]
    re = _sandwich_block(chain.eigenvectors, chain.iz_eigbasis[None, :, :] * phase.real)
    im = _sandwich_block(chain.eigenvectors, chain.iz_eigbasis[None, :, :] * phase.imag)
    return re, im


# ---------------------------------------------------------------------------
# (k, q) coherence tables for the ideal preparation
# ---------------------------------------------------------------------------


@dataclass
class CoherenceTable:
    """Order-resolved squared coherence amplitudes of a prepared density.

    ``table[k, q + n_spins]`` holds sum_S n_S |rho_MM'|^2 summed over the
    elements with M - M' = k >= 0 and M + M' = q (possibly window-averaged).
    Under the secular dipolar Hamiltonian the element (M, M') just acquires
    the phase exp(-i * 3 D k q t / 2), so the intensity of order k at any
    dephasing time t is a cosine sum over q.  J_{-k} = J_k by construction.
    """

    n_spins: int
    coupling: float
    table: np.ndarray
    normalization: float

    @property
    def orders(self) -> np.ndarray:
        return np.arange(-self.n_spins, self.n_spins + 1)

    def intensities(self, t: float = 0.0) -> np.ndarray:
        """Intensities J_k at dephasing time t for all orders -N..N."""
        return self.intensity_matrix(np.array([float(t)]))[:, 0]

    def intensity_matrix(self, t_values: np.ndarray) -> np.ndarray:
        """J_k on a grid of dephasing times; shape (2N+1, len(t_values))."""
        n = self.n_spins
        t_values = np.asarray(t_values, dtype=float)
        out = np.zeros((2 * n + 1, t_values.size))
        q_all = np.arange(-n, n + 1)
        for k in range(0, n + 1, 2):
            row = self.table[k]
            nz = np.nonzero(row)[0]
            if nz.size == 0:
                continue
            freqs = 1.5 * self.coupling * k * q_all[nz]
            vals = (row[nz] @ np.cos(np.outer(freqs, t_values))) / self.normalization
            out[n + k] = vals
            out[n - k] = vals
        return out


def _single_tau_task(system, sector, tau):
    chains = build_sector_chains(system, sector, 0.0)
    n = system.n_spins
    contrib = np.zeros((n + 1, 2 * n + 1))
    for chain in chains.chains:
        re, im = _evolved_parts(chain, tau)
        moduli = re * re + im * im
        _accumulate_kq(contrib, moduli, chain.m, float(sector.degeneracy), n)
    return contrib


def _accumulate_kq(target, moduli, m, weight, n_spins):
    """Fold |rho|^2 of one chain into the (k, q) table (upper triangle only)."""
    size = len(m)
    two_m = np.rint(2 * m).astype(int)
    for j in range(size):
        vals = np.diagonal(moduli, offset=j)
        # element (a, a+j): k = m[a]-m[a+j] = 2j, q = m[a]+m[a+j]
        q = (two_m[: size - j] + two_m[j:]) // 2
        target[2 * j, q + n_spins] += weight * vals


def coherence_table_at(system: SpinSystem, tau: float, workers=None) -> CoherenceTable:
    """(k, q) table of the ideally prepared density at a single tau."""
    if tau < 0:
        raise ValueError(f"tau must be non-negative, got {tau!r}")
    workers = resolve_workers(workers)
    sectors = enumerate_sectors(system)
    parts = _map_ordered(lambda sec: _single_tau_task(system, sec, tau), sectors, workers)
    table = np.zeros((system.n_spins + 1, 2 * system.n_spins + 1))
    for part in parts:
        table += part
    return CoherenceTable(system.n_spins, system.coupling, table, iz_squared_trace(system))


def _averaged_task(system, sector, taus, weights):
    chains = build_sector_chains(system, sector, 0.0)
    n = system.n_spins
    contrib = np.zeros((n + 1, 2 * n + 1))
    for chain in chains.chains:
        size = len(chain.m)
        acc = np.zeros((size, size))
        block = _tau_block_size(size)
        for start in range(0, taus.size, block):
            sl = slice(start, start + block)
            re, im = _evolved_parts_block(chain, taus[sl])
            np.multiply(re, re, out=re)
            np.multiply(im, im, out=im)
            re += im
            acc += np.tensordot(weights[sl], re, axes=1)
        _accumulate_kq(contrib, acc, chain.m, float(sector.degeneracy), n)
    return contrib


def averaged_coherence_table(system: SpinSystem, taus, weights, workers=None, progress=None) -> CoherenceTable:
    """(k, q) table averaged over a preparation-time grid with given weights.

    ``weights`` must sum to 1; the caller chooses the quadrature (the
    composite trapezoid rule for the standard averaging window).  Because
    the dephasing phases factor out of the tau average exactly, averaging
    the table and then evaluating intensities at any t equals averaging the
    pointwise intensities on the same grid.
    """
    taus = np.asarray(taus, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if taus.shape != weights.shape:
        raise ValueError("taus and weights must have matching shapes")
    workers = resolve_workers(workers)
    sectors = enumerate_sectors(system)
    parts = _map_ordered(
        lambda sec: _averaged_task(system, sec, taus, weights), sectors, workers, progress
    )
    table = np.zeros((system.n_spins + 1, 2 * system.n_spins + 1))
    for part in parts:
        table += part
    return CoherenceTable(system.n_spins, system.coupling, table, iz_squared_trace(system))


# ---------------------------------------------------------------------------
# Perturbed preparation sweeps
# ---------------------------------------------------------------------------

_CHAIN_CACHE: dict[tuple, list] = {}
_CHAIN_CACHE_MAX = 3


def cached_chains(system: SpinSystem, p: float) -> list:
    """Per-sector chain eigensystems of H_eff(p), cached per (N, D, p)."""
    key = (system.n_spins, system.coupling, float(p))
    entry = _CHAIN_CACHE.get(key)
    if entry is None:
        entry = [build_sector_chains(system, sec, p) for sec in enumerate_sectors(system)]
        if len(_CHAIN_CACHE) >= _CHAIN_CACHE_MAX:
            _CHAIN_CACHE.pop(next(iter(_CHAIN_CACHE)))
        _CHAIN_CACHE[key] = entry
    return entry


def clear_chain_cache() -> None:
    _CHAIN_CACHE.clear()


_OFFSET_INDEX_CACHE: dict[int, np.ndarray] = {}


def _offset_sums(matrix: np.ndarray) -> np.ndarray:
    """Sums over the 0th..(n-1)th superdiagonals of a symmetric matrix."""
    n = matrix.shape[0]
    idx = _OFFSET_INDEX_CACHE.get(n)
    if idx is None:
        rows = np.arange(n)
        idx = (rows[None, :] - rows[:, None] + (n - 1)).ravel()
        _OFFSET_INDEX_CACHE[n] = idx
    sums = np.bincount(idx, weights=matrix.ravel(), minlength=2 * n - 1)
    return sums[n - 1 :]


def perturbed_sweep(
    system: SpinSystem, p: float, tau_values, mixing: str = MIXING_IDEAL, workers=None, progress=None
) -> np.ndarray:
    """Intensities of the perturbed preparation on a tau grid.

    Returns J[k + N, tau index] for all orders -N..N.  With
    ``mixing="ideal_mq"`` the perturbed density is traced against the
    ideally prepared one (overlap can oscillate through zero); with
    ``mixing="matched_heff"`` against itself (non-negative, unit sum).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"perturbation strength p must lie in [0, 1], got {p!r}")
    if mixing not in (MIXING_IDEAL, MIXING_MATCHED):
        raise ValueError(f"unknown mixing {mixing!r}")
    tau_values = np.asarray(tau_values, dtype=float)
    if np.any(tau_values < 0):
        raise ValueError("tau values must be non-negative")
    workers = resolve_workers(workers)
    n = system.n_spins
    perturbed = cached_chains(system, p)
    ideal = cached_chains(system, 0.0) if mixing == MIXING_IDEAL else perturbed

    def run_chunk(idx):
        out = np.zeros((n + 1, idx.size))
        taus = tau_values[idx]
        for sc_p, sc_i in zip(perturbed, ideal):
            deg = float(sc_p.sector.degeneracy)
            for ch_p, ch_i in zip(sc_p.chains, sc_i.chains):
                size = len(ch_p.m)
                rows = np.arange(0, 2 * size, 2)
                block = _tau_block_size(size)
                for start in range(0, taus.size, block):
                    sl = slice(start, start + block)
                    re_p, im_p = _evolved_parts_block(ch_p, taus[sl])
                    if mixing == MIXING_IDEAL:
                        re_i, im_i = _evolved_parts_block(ch_i, taus[sl])
                    else:
                        re_i, im_i = re_p, im_p
                    # Re(rho_p o conj(rho_i)) is symmetric element-wise, so
                    # the superdiagonal sums already equal the subdiagonal
                    # ones and J_{-k} = J_k holds exactly.
                    overlap = re_p * re_i + im_p * im_i
                    for t_off in range(overlap.shape[0]):
                        sums = _offset_sums(overlap[t_off])
                        out[rows, start + t_off] += deg * sums
        return idx, out

    # Fixed chunking: boundaries must not depend on the worker count, or the
    # grouped matrix products would sum in a different order.
    chunk = 64
    chunks = [np.arange(s, min(s + chunk, tau_values.size)) for s in range(0, tau_values.size, chunk)]
    results = _map_ordered(run_chunk, chunks, workers, progress)
    half = np.zeros((n + 1, tau_values.size))
    for idx, block in results:
        half[:, idx] = block
    half /= iz_squared_trace(system)
    full = np.zeros((2 * n + 1, tau_values.size))
    full[n:] = half
    full[: n + 1] = half[::-1]
    return full
