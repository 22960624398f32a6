"""Velocity-space operators on normalized Hermite coefficients.

The basis is psi_m(v) = prod_i He_{m_i}(v_i) / sqrt(m_i!) * sqrt(mu(v)) with the
unit Maxwellian mu, so that ``v_i = A_i + C_i``, ``d/dv_i = (A_i - C_i) / 2``
and ``v_i/2 - d/dv_i = C_i``. Arrays carry the Hermite axes last; ``dim``
tells how many trailing axes are Hermite axes (default: all of them).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

PROJECTIONS = ("P0", "P1", "P", "I-P0", "I-P")


class CoercivityError(RuntimeError):
    """The generalized eigensolve for lambda0 failed."""


def _axis(coeffs: np.ndarray, direction: int, dim: int | None) -> int:
    d = coeffs.ndim if dim is None else dim
    if not 0 <= direction < d:
        raise ValueError(f"direction {direction} out of range for dim {d}")
    return coeffs.ndim - d + direction


def _levels(shape: tuple[int, ...], dim: int) -> np.ndarray:
    ms = [np.arange(n) for n in shape[-dim:]]
    return sum(np.meshgrid(*ms, indexing="ij"))


def ladder_matrices(M: int) -> tuple[np.ndarray, np.ndarray]:
    """Annihilation A and creation C on levels 0..M (C = A^T)."""
    A = np.diag(np.sqrt(np.arange(1, M + 1, dtype=float)), 1)
    return A, A.T.copy()


def apply_creation(coeffs: np.ndarray, direction: int, dim: int | None = None) -> np.ndarray:
    """out(m + e_i) = sqrt(m_i + 1) in(m); outflow above level M is dropped."""
    ax = _axis(coeffs, direction, dim)
    c = np.moveaxis(coeffs, ax, -1)
    M = c.shape[-1] - 1
    out = np.zeros_like(c)
    out[..., 1:] = np.sqrt(np.arange(1, M + 1, dtype=float)) * c[..., :-1]
    return np.moveaxis(out, -1, ax)


def apply_annihilation(coeffs: np.ndarray, direction: int, dim: int | None = None) -> np.ndarray:
    """out(m - e_i) = sqrt(m_i) in(m)."""
    ax = _axis(coeffs, direction, dim)
    c = np.moveaxis(coeffs, ax, -1)
    M = c.shape[-1] - 1
    out = np.zeros_like(c)
    out[..., :-1] = np.sqrt(np.arange(1, M + 1, dtype=float)) * c[..., 1:]
    return np.moveaxis(out, -1, ax)


def apply_velocity(coeffs: np.ndarray, direction: int, dim: int | None = None) -> np.ndarray:
    """Multiplication by v_i, i.e. (A_i + C_i)."""
    return apply_annihilation(coeffs, direction, dim) + apply_creation(coeffs, direction, dim)


def apply_fokker_planck(coeffs: np.ndarray, dim: int | None = None) -> np.ndarray:
    """The linearized Fokker-Planck operator L, diagonal with eigenvalue -|m|."""
    d = coeffs.ndim if dim is None else dim
    return -_levels(coeffs.shape, d) * coeffs


def project(coeffs: np.ndarray, which: str, dim: int | None = None) -> np.ndarray:
    d = coeffs.ndim if dim is None else dim
    if which not in PROJECTIONS:
        raise ValueError(f"unknown projection {which!r}; expected one of {PROJECTIONS}")
    levels = _levels(coeffs.shape, d)
    if which in ("P0", "I-P0"):
        keep = levels == 0
    elif which == "P1":
        keep = levels == 1
    else:
        keep = levels <= 1
    if which.startswith("I-"):
        keep = ~keep
    return np.where(keep, coeffs, 0)


@lru_cache(maxsize=None)
def nu_block(M: int) -> np.ndarray:
    """One-direction form of the integral of |d/dv psi|^2 + v^2 psi^2 on levels 0..M.

    Assembled from ladders one level wider than the basis so the entries are the
    exact integrals rather than their truncated products.
    """
    A, C = ladder_matrices(M + 1)
    v = A + C
    dv = 0.5 * (A - C)
    B = (v @ v + dv.T @ dv)[: M + 1, : M + 1]
    B = 0.5 * (B + B.T)
    B.setflags(write=False)
    return B


@dataclass(frozen=True)
class NuForm:
    """Quadratic form of the nu-norm in d velocity directions (levels 0..M each)."""

    dim: int
    M: int

    @property
    def block(self) -> np.ndarray:
        return nu_block(self.M)

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        """Q x, acting on the trailing ``dim`` axes."""
        out = np.array(coeffs, dtype=np.result_type(coeffs, float), copy=True)
        B = self.block
        for i in range(self.dim):
            ax = coeffs.ndim - self.dim + i
            out += np.moveaxis(np.tensordot(coeffs, B, axes=([ax], [1])), -1, ax)
        return out

    def quadratic(self, coeffs: np.ndarray) -> np.ndarray:
        """x* Q x over the Hermite axes, one value per leading index."""
        axes = tuple(range(coeffs.ndim - self.dim, coeffs.ndim))
        return np.real(np.sum(np.conj(coeffs) * self.apply(coeffs), axis=axes))

    def matrix(self) -> np.ndarray:
        n = self.M + 1
        eye = np.eye(n)
        Q = np.eye(n**self.dim)
        for i in range(self.dim):
            factors = [eye] * self.dim
            factors[i] = self.block
            term = factors[0]
            for f in factors[1:]:
                term = np.kron(term, f)
            Q += term
        return Q


def nu_norm_sq(coeffs: np.ndarray, dim: int | None = None) -> float:
    d = coeffs.ndim if dim is None else dim
    M = coeffs.shape[-1] - 1
    return float(np.sum(NuForm(d, M).quadratic(coeffs)))


def _complement_slots(dim: int, M: int, mode: str) -> np.ndarray:
    levels = _levels((M + 1,) * dim, dim).ravel()
    if mode == "complement_P0":
        return np.flatnonzero(levels >= 1)
    if mode == "complement_P":
        return np.flatnonzero(levels >= 2)
    raise ValueError(f"unknown coercivity mode {mode!r}")


@lru_cache(maxsize=None)
def _coercivity(dim: int, M: int, mode: str) -> tuple[float, np.ndarray]:
    if M < 1 or (mode == "complement_P" and M < 2):
        raise ValueError(f"{mode} needs a nonempty subspace (M={M})")
    idx = _complement_slots(dim, M, mode)
    Q = NuForm(dim, M).matrix()[np.ix_(idx, idx)]
    D = np.diag(_levels((M + 1,) * dim, dim).ravel()[idx].astype(float))
    try:
        w, V = scipy.linalg.eigh(D, Q, subset_by_index=[0, 0])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise CoercivityError(f"generalized eigensolve failed for d={dim}, M={M}: {exc}") from exc
    lam = float(w[0])
    if not np.isfinite(lam) or lam <= 0:
        raise CoercivityError(f"eigensolve returned lambda0={lam} for d={dim}, M={M}")
    vec = np.zeros((M + 1) ** dim)
    vec[idx] = V[:, 0]
    vec = vec.reshape((M + 1,) * dim)
    vec.setflags(write=False)
    return lam, vec


def coercivity_lambda0(dim: int, M: int, mode: str = "complement_P") -> float:
    """Smallest Rayleigh quotient of -L against the nu-form on the chosen complement.

    ``complement_P0`` minimizes over everything orthogonal to sqrt(mu),
    ``complement_P`` over the microscopic slots |m| >= 2 only.
    """
    return _coercivity(dim, M, mode)[0]


def coercivity_minimizer(dim: int, M: int, mode: str = "complement_P") -> np.ndarray:
    """Eigenvector attaining :func:`coercivity_lambda0`, as an ``(M+1,)*dim`` array."""
    return _coercivity(dim, M, mode)[1]


def kappa_from_lambda0(lambda0: float) -> float:
    return min(lambda0 / 2.0, 0.125)
