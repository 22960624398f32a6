"""Right-hand side of the perturbed VPFP system in Fourier-Hermite space, and steppers.

    d/dt g(k,m) = -i sum_j k_j [(A_j + C_j) g](k,m)        transport
                  - i k_j phi(k) [m = e_j]                 field coupling
                  - sum_j (d_j phi * C_j g)(k,m)           nonlinear, full mode only
                  - |m| g(k,m)                             collisions
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.fft
import scipy.signal

from vpfp.field import solve_poisson
from vpfp.hermite import apply_annihilation, apply_creation
from vpfp.state import Grid, SpectralState, grid_of

RHS_MODES = ("full", "linearized")


class CFLError(ValueError):
    """Time step above the explicit stability guard."""

    def __init__(self, dt: float, limit: float):
        self.dt = dt
        self.limit = limit
        super().__init__(f"dt={dt:g} exceeds the CFL guard; use dt <= {limit:.6g}")


class DivergenceError(FloatingPointError):
    def __init__(self, t: float):
        self.t = t
        super().__init__(f"non-finite coefficients at t={t:.6g}")


def _workers() -> int:
    raw = os.environ.get("VPFP_THREADS", "0").strip() or "0"
    n = int(raw)
    return -1 if n <= 0 else n


def _coeffs(x) -> np.ndarray:
    return x.coeffs if isinstance(x, SpectralState) else np.asarray(x)


def _check_mode(mode: str) -> None:
    if mode not in RHS_MODES:
        raise ValueError(f"unknown rhs mode {mode!r}")


@dataclass(frozen=True)
class MacroFields:
    sigma: np.ndarray  # (2K+1,)*d
    u: np.ndarray  # (d, 2K+1, ...)
    phi: np.ndarray


def unit_slot(d: int, i: int) -> tuple:
    return (Ellipsis,) + tuple(1 if j == i else 0 for j in range(d))


def compute_macros(state) -> MacroFields:
    c = _coeffs(state)
    d = c.ndim // 2
    sigma = c[(Ellipsis,) + (0,) * d]
    u = np.stack([c[unit_slot(d, i)] for i in range(d)])
    return MacroFields(sigma.copy(), u, solve_poisson(sigma))


def _pad_size(K: int) -> int:
    return scipy.fft.next_fast_len(3 * K + 1)


def _to_padded(c: np.ndarray, d: int, K: int, L: int) -> np.ndarray:
    """Place k-box coefficients at index k mod L on each k axis."""
    out = np.zeros((L,) * d + c.shape[d:], dtype=np.complex128)
    pieces = [(slice(K, 2 * K + 1), slice(0, K + 1)), (slice(0, K), slice(L - K, L))]
    for combo in np.ndindex(*(2,) * d):
        src = tuple(pieces[b][0] for b in combo)
        dst = tuple(pieces[b][1] for b in combo)
        out[dst] = c[src]
    return out


def _from_padded(p: np.ndarray, d: int, K: int, L: int) -> np.ndarray:
    out = np.empty((2 * K + 1,) * d + p.shape[d:], dtype=np.complex128)
    pieces = [(slice(K, 2 * K + 1), slice(0, K + 1)), (slice(0, K), slice(L - K, L))]
    for combo in np.ndindex(*(2,) * d):
        dst = tuple(pieces[b][0] for b in combo)
        src = tuple(pieces[b][1] for b in combo)
        out[dst] = p[src]
    return out


def nonlinear_term(state, phi: np.ndarray) -> np.ndarray:
    """Contribution -sum_j (d_j phi)(C_j g) to d/dt g, convolved without aliasing.

    Both factors are band-limited to [-K, K]; evaluating the product on a grid of
    at least 3K+1 points per axis keeps every alias outside the retained box.
    """
    c = _coeffs(state)
    grid = grid_of(c)
    d, K = grid.dim, grid.K
    if not np.any(phi):
        return np.zeros_like(c)
    L = _pad_size(K)
    axes = tuple(range(d))
    w = _workers()
    acc = None
    for j in range(d):
        efield = 1j * grid.k[j] * phi
        e_real = scipy.fft.ifftn(_to_padded(efield, d, K, L), axes=axes, norm="forward", workers=w)
        h = apply_creation(c, j, d)
        h_real = scipy.fft.ifftn(_to_padded(h, d, K, L), axes=axes, norm="forward", workers=w)
        prod = e_real.reshape(e_real.shape + (1,) * d) * h_real
        acc = prod if acc is None else acc + prod
    spec = scipy.fft.fftn(acc, axes=axes, norm="forward", workers=w)
    return -_from_padded(spec, d, K, L)


def transport_term(c: np.ndarray, grid: Grid) -> np.ndarray:
    d = grid.dim
    out = np.zeros_like(c)
    for j in range(d):
        vj = apply_annihilation(c, j, d) + apply_creation(c, j, d)
        out += -1j * grid.kb(grid.k[j]) * vj
    return out


def explicit_rhs(state, mode: str = "full") -> np.ndarray:
    """Everything except the collision operator."""
    _check_mode(mode)
    c = _coeffs(state)
    grid = grid_of(c)
    d = grid.dim
    phi = solve_poisson(c[(Ellipsis,) + (0,) * d])
    out = transport_term(c, grid)
    for j in range(d):
        out[unit_slot(d, j)] += -1j * grid.k[j] * phi
    if mode == "full":
        out += nonlinear_term(c, phi)
    return out


def rhs(state, mode: str = "full") -> np.ndarray:
    c = _coeffs(state)
    return explicit_rhs(c, mode) - grid_of(c).levels * c


@dataclass(frozen=True)
class StepScheme:
    name: str = "strang_rk4"
    dt: float = 1e-3
    cfl_factor: float = 1.0


def cfl_limit(dim: int, K: int, M: int, cfl_factor: float = 1.0) -> float:
    """Largest dt allowed by the bound |A + C| <= 2 sqrt(M+1) per direction."""
    return cfl_factor / (K * math.sqrt(2.0 * (M + 1)) * dim)


def check_cfl(grid: Grid, scheme: StepScheme) -> None:
    if grid.K == 0:
        return
    limit = cfl_limit(grid.dim, grid.K, grid.M, scheme.cfl_factor)
    if scheme.dt > limit:
        raise CFLError(scheme.dt, limit)


def make_stepper(
    grid: Grid, scheme: StepScheme, mode: str = "full", collisions: bool = True
) -> Callable[[np.ndarray], np.ndarray]:
    """Array-level single step ``c -> c(t + dt)``.

    ``collisions=False`` drops the Fokker-Planck operator, leaving only the
    explicit substep (used for convergence studies of the RK4 part).
    """
    _check_mode(mode)
    check_cfl(grid, scheme)
    dt = scheme.dt
    levels = grid.levels if collisions else np.zeros_like(grid.levels)

    def f(y):
        return explicit_rhs(y, mode)

    if scheme.name == "strang_rk4":
        half = np.exp(-levels * (dt / 2))

        def advance(c):
            y = half * c
            k1 = f(y)
            k2 = f(y + (dt / 2) * k1)
            k3 = f(y + (dt / 2) * k2)
            k4 = f(y + dt * k3)
            y = y + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            return half * y

    elif scheme.name == "imex_euler":
        denom = 1.0 + dt * levels

        def advance(c):
            return (c + dt * f(c)) / denom

    else:
        raise ValueError(f"unknown scheme {scheme.name!r}")
    return advance


def step(state: SpectralState, scheme: StepScheme, mode: str = "full", step_index: int | None = None) -> SpectralState:
    advance = make_stepper(state.grid, scheme, mode)
    out = advance(state.coeffs)
    t = state.t + scheme.dt if step_index is None else (step_index + 1) * scheme.dt
    if not np.isfinite(out).all():
        raise DivergenceError(t)
    return SpectralState(t, out)


def continuity_residual(state, mode: str = "full", relative: bool = False) -> float:
    """max_k |sigma_t + i k.u| using sigma_t read off the right-hand side."""
    c = _coeffs(state)
    grid = grid_of(c)
    d = grid.dim
    macros = compute_macros(c)
    div_u = 1j * np.sum(grid.k * macros.u, axis=0)
    sigma_t = rhs(c, mode)[(Ellipsis,) + (0,) * d]
    res = float(np.max(np.abs(sigma_t + div_u)))
    if relative:
        scale = max(float(np.max(np.abs(div_u))), float(np.max(np.abs(sigma_t))))
        return res / scale if scale > 0 else 0.0
    return res


def _convolve_box(a: np.ndarray, b: np.ndarray, K: int) -> np.ndarray:
    full = scipy.signal.convolve(a, b, mode="full", method="direct")
    return full[tuple(slice(K, 3 * K + 1) for _ in range(a.ndim))]


def second_moments(c: np.ndarray, d: int) -> np.ndarray:
    """<v_i v_j sqrt(mu), (I - P) g> for all i, j; shape (d, d, 2K+1, ...)."""
    out = np.empty((d, d) + c.shape[:d], dtype=np.complex128)
    for i in range(d):
        for j in range(d):
            m = [0] * d
            m[i] += 1
            m[j] += 1
            val = c[(Ellipsis,) + tuple(m)]
            out[i, j] = math.sqrt(2.0) * val if i == j else val
    return out


def momentum_terms(state, mode: str = "full") -> list[np.ndarray]:
    """The six terms of the macroscopic u-equation, each of shape (d, 2K+1, ...).

    u_t + d_i sigma + d_i phi + sigma d_i phi + u + d_j <v_i v_j sqrt(mu), (I-P) g>
    """
    c = _coeffs(state)
    grid = grid_of(c)
    d, K = grid.dim, grid.K
    if grid.M < 2:
        raise ValueError("momentum_residual needs hermite_cutoff >= 2")
    mac = compute_macros(c)
    g_t = rhs(c, mode)
    u_t = np.stack([g_t[unit_slot(d, i)] for i in range(d)])
    grad_sigma = 1j * grid.k * mac.sigma
    grad_phi = 1j * grid.k * mac.phi
    if mode == "full":
        force = np.stack([_convolve_box(mac.sigma, grad_phi[i], K) for i in range(d)])
    else:
        force = np.zeros_like(grad_phi)
    mom = second_moments(c, d)
    flux = np.stack([np.sum(1j * grid.k * mom[i], axis=0) for i in range(d)])
    return [u_t, grad_sigma, grad_phi, force, mac.u, flux]


def momentum_residual(state, mode: str = "full", relative: bool = False) -> float:
    terms = momentum_terms(state, mode)
    res = float(np.max(np.abs(sum(terms))))
    if relative:
        scale = max(float(np.max(np.abs(t))) for t in terms)
        return res / scale if scale > 0 else 0.0
    return res
