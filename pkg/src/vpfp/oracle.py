"""Dense per-wavevector reference for the linearized system.

Without the quadratic term each Fourier mode evolves independently under a
fixed (M+1)^d x (M+1)^d matrix, so matrix exponentials give an independent
solution to compare the stepper against.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from vpfp.hermite import ladder_matrices
from vpfp.state import SimConfig, SpectralState

MAX_DENSE = 4096


class OracleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class DenseGenerator:
    k: tuple[int, ...]
    matrix: np.ndarray


def _kron_all(mats: list[np.ndarray]) -> np.ndarray:
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def assemble_generator(k, dim: int, M: int) -> DenseGenerator:
    """Matrix of the linearized right-hand side at wavevector ``k``.

    Rows and columns follow the lexicographic order of m in [0, M]^dim.
    """
    k = tuple(int(c) for c in np.atleast_1d(k))
    if len(k) != dim:
        raise ValueError(f"wavevector {k} does not have {dim} components")
    n = M + 1
    size = n**dim
    if size > MAX_DENSE:
        raise OracleSizeError(f"dense generator of size {size} exceeds the cap {MAX_DENSE}")
    A, C = ladder_matrices(M)
    eye = np.eye(n)
    levels = np.zeros(size)
    G = np.zeros((size, size), dtype=np.complex128)
    for j in range(dim):
        factors = [eye] * dim
        factors[j] = A + C
        G += -1j * k[j] * _kron_all(factors)
        factors[j] = np.diag(np.arange(n, dtype=float))
        levels += np.diag(_kron_all(factors))
    G -= np.diag(levels)
    ksq = sum(c * c for c in k)
    if ksq:
        for j in range(dim):
            e_j = np.ravel_multi_index(tuple(1 if i == j else 0 for i in range(dim)), (n,) * dim)
            G[e_j, 0] += -1j * k[j] / ksq
    return DenseGenerator(k, G)


def evolve_dense(gen: DenseGenerator, g0: np.ndarray, t: float) -> np.ndarray:
    """exp(t G) g0, by eigendecomposition when it is well conditioned."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    g0 = np.asarray(g0, dtype=np.complex128)
    if t == 0:
        return g0.copy()
    return propagator(gen, t) @ g0


def propagator(gen: DenseGenerator, t: float) -> np.ndarray:
    G = gen.matrix
    try:
        w, V = np.linalg.eig(G)
        if np.linalg.cond(V) < 1e3:
            return (V * np.exp(w * t)) @ np.linalg.inv(V)
    except np.linalg.LinAlgError:
        pass
    return scipy.linalg.expm(G * t)


def _parallel_map(fn, items):
    n = int(os.environ.get("VPFP_THREADS", "0") or 0)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=None if n <= 0 else n) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class Abscissa:
    value: float
    k: tuple[int, ...]
    eigenvalue: complex
    per_k: dict


def spectral_abscissa(dim: int, K: int, M: int) -> Abscissa:
    """Largest real part of the generator spectrum over all k != 0."""
    if K < 1:
        raise ValueError("spectral_abscissa needs K >= 1")
    ks = [tuple(int(c) for c in kk) for kk in np.ndindex(*(2 * K + 1,) * dim)]
    ks = [tuple(c - K for c in kk) for kk in ks if any(c != K for c in kk)]

    def one(k):
        w = np.linalg.eigvals(assemble_generator(k, dim, M).matrix)
        i = int(np.argmax(w.real))
        return k, w[i]

    per_k = dict(_parallel_map(one, ks))
    best = max(per_k, key=lambda k: per_k[k].real)
    return Abscissa(float(per_k[best].real), best, complex(per_k[best]), per_k)


def spectral_abscissa_for(config: SimConfig) -> Abscissa:
    return spectral_abscissa(config.dim, config.fourier_cutoff, config.hermite_cutoff)


def evolve_state_dense(state: SpectralState, times) -> list[np.ndarray]:
    """Dense linearized solution at each time (times measured from state.t)."""
    c = state.coeffs
    grid = state.grid
    d, K, M = grid.dim, grid.K, grid.M
    times = [float(t) for t in times]
    out = [np.empty_like(c) for _ in times]

    def one(idx):
        k = tuple(int(i) - K for i in idx)
        gen = assemble_generator(k, d, M)
        g0 = c[idx].ravel()
        return idx, [evolve_dense(gen, g0, t).reshape((M + 1,) * d) for t in times]

    for idx, vals in _parallel_map(one, list(np.ndindex(*(2 * K + 1,) * d))):
        for buf, v in zip(out, vals):
            buf[idx] = v
    return out


def compare_trajectories(spectral: list[np.ndarray], reference: list[np.ndarray]) -> float:
    """Largest per-time relative L2 error of ``spectral`` against ``reference``."""
    if len(spectral) != len(reference):
        raise ValueError("trajectories have different numbers of samples")
    worst = 0.0
    for a, b in zip(spectral, reference):
        a, b = np.asarray(a), np.asarray(b)
        if a.shape != b.shape:
            raise ValueError(f"layout mismatch {a.shape} vs {b.shape}")
        nb = np.linalg.norm(b)
        err = np.linalg.norm(a - b)
        worst = max(worst, err / nb if nb > 0 else err)
    return float(worst)
