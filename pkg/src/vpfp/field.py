"""Fourier-side utilities on the 2*pi torus: Poisson, gradients, Sobolev weights.

Fields are complex arrays of shape ``(2K+1,)*d`` with k = 0 at the centre.
Norms drop the (2*pi)^d volume factor throughout.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np


class SolvabilityError(ValueError):
    """Poisson data with nonzero mean on the torus."""


def _wavevectors(shape: tuple[int, ...]) -> np.ndarray:
    axes = [np.arange(n) - (n - 1) // 2 for n in shape]
    return np.array(np.meshgrid(*axes, indexing="ij"))


def solve_poisson(sigma: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """phi(k) = sigma(k) / |k|^2 for k != 0 and phi(0) = 0."""
    sigma = np.asarray(sigma)
    k = _wavevectors(sigma.shape)
    ksq = (k**2).sum(axis=0)
    centre = tuple((n - 1) // 2 for n in sigma.shape)
    if abs(sigma[centre]) > tol:
        raise SolvabilityError(
            f"density has nonzero mean {sigma[centre]!r}; the periodic Poisson "
            "problem needs sigma(k=0) = 0"
        )
    phi = np.zeros_like(sigma, dtype=np.result_type(sigma, float))
    nz = ksq != 0
    phi[nz] = sigma[nz] / ksq[nz]
    return phi


def laplacian(field: np.ndarray) -> np.ndarray:
    k = _wavevectors(field.shape)
    return -(k**2).sum(axis=0) * field


def spectral_gradient(field: np.ndarray) -> np.ndarray:
    """Stack of the d components i k_j field(k)."""
    k = _wavevectors(np.shape(field))
    return 1j * k * field


@lru_cache(maxsize=None)
def derivative_multi_indices(dim: int, order: int) -> tuple[tuple[int, ...], ...]:
    return tuple(
        a for a in itertools.product(range(order + 1), repeat=dim) if sum(a) <= order
    )


def sobolev_weight(k, N: int) -> float:
    """Sum over |a| <= N of prod_i k_i^(2 a_i)."""
    k = tuple(int(c) for c in np.atleast_1d(k))
    total = 0
    for a in derivative_multi_indices(len(k), N):
        term = 1
        for ki, ai in zip(k, a):
            term *= ki ** (2 * ai)
        total += term
    return float(total)


@lru_cache(maxsize=None)
def sobolev_weights(dim: int, K: int, N: int) -> np.ndarray:
    """sobolev_weight evaluated on the whole ``(2K+1,)*dim`` box."""
    if N < 0:
        return np.zeros((2 * K + 1,) * dim)
    k2 = _wavevectors((2 * K + 1,) * dim).astype(float) ** 2
    w = np.zeros((2 * K + 1,) * dim)
    for a in derivative_multi_indices(dim, N):
        w += np.prod([k2[i] ** a[i] for i in range(dim)], axis=0)
    w.setflags(write=False)
    return w


def sobolev_norm_sq(field: np.ndarray, N: int) -> float:
    field = np.asarray(field)
    K = (field.shape[0] - 1) // 2
    return float(np.sum(sobolev_weights(field.ndim, K, N) * np.abs(field) ** 2))


def elliptic_regularity_check(sigma: np.ndarray, phi: np.ndarray, s: float) -> float:
    """Largest relative deviation of |k|^(s+2)|phi(k)| from |k|^s|sigma(k)|."""
    k = _wavevectors(np.shape(sigma))
    kn = np.sqrt((k**2).sum(axis=0))
    nz = kn > 0
    lhs = kn[nz] ** (s + 2) * np.abs(phi[nz])
    rhs = kn[nz] ** s * np.abs(sigma[nz])
    scale = np.maximum(rhs, lhs)
    live = scale > 0
    if not live.any():
        return 0.0
    return float(np.max(np.abs(lhs[live] - rhs[live]) / scale[live]))
