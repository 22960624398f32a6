"""Energy and dissipation functionals with trajectory checks and decay-rate fits.

All functionals are evaluated mode by mode in Fourier space with the Sobolev
weights of :mod:`vpfp.field`; the (2*pi)^d volume factor is dropped.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from vpfp.dynamics import (
    compute_macros,
    continuity_residual,
    momentum_residual,
    rhs,
)
from vpfp.field import sobolev_weights
from vpfp.hermite import NuForm, project
from vpfp.state import SpectralState, grid_of

BRACKET_LOW = 0.75
BRACKET_HIGH = 1.25


class EnergyBracketError(ArithmeticError):
    """E_N left the interval [3/4, 5/4] * tilde_E_N."""


def _coeffs(x) -> np.ndarray:
    return x.coeffs if isinstance(x, SpectralState) else np.asarray(x)


def _weights(c: np.ndarray, N: int) -> np.ndarray:
    g = grid_of(c)
    return sobolev_weights(g.dim, g.K, N)


def _tilde_bilinear(c1: np.ndarray, c2: np.ndarray, N: int) -> float:
    grid = grid_of(c1)
    m1, m2 = compute_macros(c1), compute_macros(c2)
    per_k = np.real(np.sum(np.conj(c1) * c2, axis=grid.m_axes))
    per_k = per_k + grid.ksq * np.real(np.conj(m1.phi) * m2.phi)
    return float(np.sum(_weights(c1, N) * per_k))


def _G_bilinear(c1: np.ndarray, c2: np.ndarray, N: int) -> float:
    grid = grid_of(c1)
    m1, m2 = compute_macros(c1), compute_macros(c2)
    ik = 1j * grid.k
    cross = np.sum(np.conj(m1.u) * ik * (m2.sigma + m2.phi), axis=0)
    cross = cross + np.sum(np.conj(m2.u) * ik * (m1.sigma + m1.phi), axis=0)
    square = grid.ksq * np.conj(m1.phi) * m2.phi + np.conj(m1.sigma) * m2.sigma
    per_k = 0.5 * np.real(cross) + 0.5 * np.real(square)
    return float(np.sum(_weights(c1, N - 1) * per_k))


def tilde_energy(state, N: int) -> float:
    """Sum over |a| <= N of ||d^a g||^2 + ||d^a grad phi||^2."""
    c = _coeffs(state)
    return _tilde_bilinear(c, c, N)


def functional_G(state, N: int) -> float:
    """Corrector sum_{|b|<=N-1} int d^b u.(grad d^b sigma + d^b grad phi) + (|d^b grad phi|^2 + |d^b sigma|^2)/2."""
    c = _coeffs(state)
    return _G_bilinear(c, c, N)


def _check_kappa(kappa: float) -> None:
    if not 0 < kappa <= 0.125:
        raise ValueError(f"kappa must lie in (0, 1/8], got {kappa}")


def instant_energy(state, N: int, kappa: float, check: bool = True) -> tuple[float, float, float]:
    """(E_N, tilde_E_N, G) with E_N = tilde_E_N + 2 kappa G."""
    _check_kappa(kappa)
    te = tilde_energy(state, N)
    G = functional_G(state, N)
    E = te + 2 * kappa * G
    if check:
        slack = 1e-12 * te
        if not (BRACKET_LOW * te - slack <= E <= BRACKET_HIGH * te + slack):
            raise EnergyBracketError(f"E_N={E:.6e} outside [3/4, 5/4] x tilde_E_N={te:.6e}")
    return E, te, G


def dissipation(state, N: int, kappa: float, lambda0: float) -> tuple[float, float]:
    """(D_N, tilde_D_N)."""
    if not lambda0 > 0:
        raise ValueError("lambda0 must be positive")
    c = _coeffs(state)
    grid = grid_of(c)
    d = grid.dim
    mac = compute_macros(c)
    u_sq = np.sum(np.abs(mac.u) ** 2, axis=0)
    micro = NuForm(d, grid.M).quadratic(project(c, "I-P", d))
    wN = _weights(c, N)
    wN1 = _weights(c, N - 1)
    sig_sq = np.abs(mac.sigma) ** 2
    macro = grid.ksq * np.abs(mac.phi) ** 2 + 4 * sig_sq + grid.ksq * sig_sq
    D = 0.5 * float(np.sum(wN * (u_sq + lambda0 * micro))) + 0.5 * kappa * float(np.sum(wN1 * macro))
    D_tilde = float(np.sum(wN * (u_sq + lambda0 * micro)))
    return D, D_tilde


def energy_rate(state, N: int, kappa: float, mode: str = "full") -> float:
    """d/dt E_N along the semi-discrete flow, by the chain rule through rhs."""
    c = _coeffs(state)
    c_dot = rhs(c, mode)
    return 2 * _tilde_bilinear(c, c_dot, N) + 4 * kappa * _G_bilinear(c, c_dot, N)


@dataclass(frozen=True)
class EnergyReport:
    t: float
    tilde_E_N: float
    G: float
    E_N: float
    D_N: float
    tilde_D_N: float
    kappa: float
    lambda0_used: float
    continuity_residual: float
    momentum_residual: float
    energy_inequality_residual: float
    min_ratio: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def values(self) -> list[float]:
        return list(asdict(self).values())


def make_report(
    state: SpectralState,
    N: int,
    kappa: float,
    lambda0: float,
    mode: str = "full",
    previous_min_ratio: float | None = None,
) -> EnergyReport:
    """One sample of every functional.

    ``energy_inequality_residual`` uses the chain-rule rate so rows can be
    written as they are produced; :func:`energy_inequality_check` redoes the
    check with finite differences over the reported series.
    """
    E, te, G = instant_energy(state, N, kappa)
    D, Dt = dissipation(state, N, kappa, lambda0)
    ratio = D / E if E > 0 else None
    candidates = [r for r in (previous_min_ratio, ratio) if r is not None]
    min_ratio = min(candidates) if candidates else 0.0
    return EnergyReport(
        t=state.t,
        tilde_E_N=te,
        G=G,
        E_N=E,
        D_N=D,
        tilde_D_N=Dt,
        kappa=kappa,
        lambda0_used=lambda0,
        continuity_residual=continuity_residual(state, mode, relative=True),
        momentum_residual=momentum_residual(state, mode, relative=True),
        energy_inequality_residual=energy_rate(state, N, kappa, mode) + D,
        min_ratio=min_ratio,
    )


@dataclass(frozen=True)
class InequalityCheck:
    worst: float
    tolerance: float
    residuals: np.ndarray
    passed: bool


def scheme_tolerance(dt: float, report_interval: float, scale: float, coefficient: float = 10.0) -> float:
    return coefficient * (dt**4 + report_interval**2) * scale


def energy_inequality_check(
    t: Sequence[float],
    E: Sequence[float],
    D: Sequence[float],
    dt: float,
    coefficient: float = 10.0,
    scale: float | None = None,
) -> InequalityCheck:
    """Central-difference d/dt E_N + D_N at interior samples.

    Passes when the largest residual is at most
    ``coefficient * (dt^4 + h^2) * scale`` with ``h`` the report spacing and
    ``scale`` defaulting to E_N at the first sample.
    """
    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)
    D = np.asarray(D, dtype=float)
    if t.size < 3:
        raise ValueError("energy inequality check needs at least 3 samples")
    h = np.diff(t)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0):
        raise ValueError("reports must be uniformly spaced")
    spacing = float(h[0])
    residuals = (E[2:] - E[:-2]) / (2 * spacing) + D[1:-1]
    scale = float(E[0]) if scale is None else scale
    tol = scheme_tolerance(dt, spacing, scale, coefficient)
    worst = float(residuals.max())
    return InequalityCheck(worst, tol, residuals, worst <= tol)


def fit_decay_rate(t: Sequence[float], E: Sequence[float], transient: float = 0.2) -> float:
    """Negated least-squares slope of log E against t after the transient window."""
    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)
    start = t[0] + transient * (t[-1] - t[0])
    keep = t >= start
    tw, Ew = t[keep], E[keep]
    if tw.size < 2:
        raise ValueError("decay fit needs at least two samples in the window")
    if np.any(Ew <= 0):
        raise ValueError("decay fit needs strictly positive E_N on the window")
    slope = np.polyfit(tw, np.log(Ew), 1)[0]
    return float(-slope)


def decay_bound_violation(t: Sequence[float], E: Sequence[float], eta: float, slack: float = 1e-6) -> float:
    """max over samples of E(t) / (E(0) e^{-eta t} (1 + slack)) - 1; <= 0 means the bound holds."""
    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)
    bound = E[0] * np.exp(-eta * (t - t[0])) * (1 + slack)
    if E[0] == 0:
        return 0.0 if np.all(E == 0) else math.inf
    return float(np.max(E / bound) - 1.0)


def strictly_decreasing(E: Sequence[float]) -> bool:
    E = np.asarray(E, dtype=float)
    return bool(np.all(np.diff(E) < 0))
