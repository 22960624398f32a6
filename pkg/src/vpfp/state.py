"""Coefficient layout, configuration and initial data.

The unknown is stored as a complex array of shape ``(2K+1,)*d + (M+1,)*d``:
the leading ``d`` axes index Fourier wavevectors ``k = -K..K`` (axis index
``k + K``) and the trailing ``d`` axes index Hermite degrees ``0..M``.
C-order flattening of that array is the canonical layout used by
checkpoints and the dense oracle.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np

IC_KINDS = ("zero", "single_mode", "random_smooth")
SCHEMES = ("strang_rk4", "imex_euler")
COERCIVITY_MODES = ("complement_P0", "complement_P")


class ConfigError(ValueError):
    """Invalid simulation configuration."""


class InitialDataError(ValueError):
    """Initial data that the dynamics cannot accept."""


@dataclass(frozen=True)
class ICSpec:
    kind: str = "random_smooth"
    amplitude: float = 1e-2
    decay_exponent: float = 4.0
    seed: int = 0
    k0: tuple[int, ...] | None = None
    m0: tuple[int, ...] | None = None
    # when set, random data is rescaled so that tilde_E_N(0) equals it
    target_energy: float | None = None


@dataclass(frozen=True)
class SimConfig:
    dim: int = 1
    fourier_cutoff: int = 8
    hermite_cutoff: int = 16
    sobolev_order: int = 3
    dt: float = 1e-3
    t_end: float = 1.0
    report_interval: float | None = None
    ic: ICSpec = field(default_factory=ICSpec)
    lambda0: float | None = None  # None: computed from the discrete eigenproblem
    coercivity_mode: str = "complement_P"
    scheme: str = "strang_rk4"
    cfl_factor: float = 1.0
    epsilon0: float | None = None
    out_dir: str | None = None
    checkpoint_every: int = 0
    # friction and diffusion are fixed to one
    beta: float = 1.0
    diffusion: float = 1.0

    def __post_init__(self) -> None:
        errors = self.violations()
        if errors:
            raise ConfigError("; ".join(errors))

    def violations(self) -> list[str]:
        out = []
        if self.dim not in (1, 2, 3):
            out.append("dim must be 1, 2 or 3")
        if self.fourier_cutoff < 1:
            out.append("fourier_cutoff must be >= 1")
        if self.hermite_cutoff < 2:
            out.append("hermite_cutoff must be >= 2 (momentum_residual needs level-2 moments)")
        if self.sobolev_order < 1:
            out.append("sobolev_order must be >= 1")
        if not self.dt > 0:
            out.append("dt must be positive")
        if not self.t_end >= 0:
            out.append("t_end must be nonnegative")
        if self.report_interval is not None and not self.report_interval > 0:
            out.append("report_interval must be positive")
        if self.lambda0 is not None and not self.lambda0 > 0:
            out.append("lambda0 must be positive")
        if self.coercivity_mode not in COERCIVITY_MODES:
            out.append(f"coercivity_mode must be one of {COERCIVITY_MODES}")
        if self.scheme not in SCHEMES:
            out.append(f"scheme must be one of {SCHEMES}")
        if not self.cfl_factor > 0:
            out.append("cfl_factor must be positive")
        if self.checkpoint_every < 0:
            out.append("checkpoint_every must be >= 0")
        if self.beta != 1.0 or self.diffusion != 1.0:
            out.append("only beta = D = 1 is supported")
        if self.ic.kind not in IC_KINDS:
            out.append(f"ic must be one of {IC_KINDS}")
        if self.ic.kind == "single_mode":
            if self.ic.k0 is None or len(self.ic.k0) != self.dim:
                out.append("single_mode needs ic_k with dim components")
            elif any(abs(c) > self.fourier_cutoff for c in self.ic.k0):
                out.append("ic_k outside the Fourier box")
            if self.ic.m0 is None or len(self.ic.m0) != self.dim:
                out.append("single_mode needs ic_m with dim components")
            elif any(not 0 <= c <= self.hermite_cutoff for c in self.ic.m0):
                out.append("ic_m outside the Hermite box")
        if self.epsilon0 is not None and not self.epsilon0 > 0:
            out.append("epsilon0 must be positive")
        return out

    @property
    def steps_per_report(self) -> int:
        if self.report_interval is None:
            return 10
        ratio = self.report_interval / self.dt
        n = int(round(ratio))
        if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
            raise ConfigError("report_interval must be a positive integer multiple of dt")
        return n

    @property
    def n_steps(self) -> int:
        ratio = self.t_end / self.dt
        n = int(round(ratio))
        if abs(ratio - n) > 1e-9 * max(1.0, ratio):
            raise ConfigError("t_end must be an integer multiple of dt")
        return n

    @property
    def shape(self) -> tuple[int, ...]:
        return coeff_shape(self.dim, self.fourier_cutoff, self.hermite_cutoff)


def coeff_shape(dim: int, K: int, M: int) -> tuple[int, ...]:
    return (2 * K + 1,) * dim + (M + 1,) * dim


@dataclass(frozen=True, eq=False)
class Grid:
    """Precomputed index arrays for one ``(d, K, M)`` resolution."""

    dim: int
    K: int
    M: int
    k: np.ndarray  # (d, 2K+1, ..., 2K+1) integer wavevector components
    ksq: np.ndarray  # |k|^2 over the k axes
    levels: np.ndarray  # |m| over the m axes

    @property
    def k_axes(self) -> tuple[int, ...]:
        return tuple(range(self.dim))

    @property
    def m_axes(self) -> tuple[int, ...]:
        return tuple(range(self.dim, 2 * self.dim))

    @property
    def origin(self) -> tuple[int, ...]:
        return (self.K,) * self.dim

    def unit(self, i: int) -> tuple[int, ...]:
        """Hermite multi-index e_i."""
        return tuple(1 if j == i else 0 for j in range(self.dim))

    def kb(self, arr: np.ndarray) -> np.ndarray:
        """Broadcast an array over k axes against full coefficient arrays."""
        return arr.reshape(arr.shape + (1,) * self.dim)


@lru_cache(maxsize=None)
def make_grid(dim: int, K: int, M: int) -> Grid:
    ks = np.arange(-K, K + 1)
    kgrid = np.array(np.meshgrid(*([ks] * dim), indexing="ij"))
    ms = np.arange(M + 1)
    levels = sum(np.meshgrid(*([ms] * dim), indexing="ij"))
    for a in (kgrid, levels):
        a.setflags(write=False)
    ksq = (kgrid**2).sum(axis=0)
    ksq.setflags(write=False)
    return Grid(dim, K, M, kgrid, ksq, np.asarray(levels))


def grid_of(coeffs: np.ndarray) -> Grid:
    d = coeffs.ndim // 2
    if coeffs.ndim != 2 * d or d < 1:
        raise ValueError(f"coefficient array must have 2*d axes, got shape {coeffs.shape}")
    K = (coeffs.shape[0] - 1) // 2
    M = coeffs.shape[-1] - 1
    if coeffs.shape != coeff_shape(d, K, M):
        raise ValueError(f"inconsistent coefficient shape {coeffs.shape}")
    return make_grid(d, K, M)


@dataclass(frozen=True)
class SpectralState:
    """Immutable snapshot of the coefficients at time ``t``."""

    t: float
    coeffs: np.ndarray
    info: Mapping[str, float] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        c = np.array(self.coeffs, dtype=np.complex128, copy=True)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        grid_of(c)

    @property
    def grid(self) -> Grid:
        return grid_of(self.coeffs)

    @property
    def dim(self) -> int:
        return self.coeffs.ndim // 2

    def with_coeffs(self, coeffs: np.ndarray, t: float | None = None) -> "SpectralState":
        return SpectralState(self.t if t is None else t, coeffs)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SpectralState):
            return NotImplemented
        return self.t == other.t and np.array_equal(self.coeffs, other.coeffs)


def enumerate_layout(dim: int, K: int, M: int) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All ``(k, m)`` pairs in flat-index order (k-major, then m lexicographic)."""
    ks = itertools.product(range(-K, K + 1), repeat=dim)
    return [(k, m) for k in ks for m in itertools.product(range(M + 1), repeat=dim)]


def flat_index(k: tuple[int, ...], m: tuple[int, ...], K: int, M: int) -> int:
    idx = np.ravel_multi_index(
        tuple(c + K for c in k) + tuple(m), coeff_shape(len(k), K, M)
    )
    return int(idx)


def hermitian_partner(coeffs: np.ndarray) -> np.ndarray:
    """conj(c(-k, m)) laid out at k."""
    d = coeffs.ndim // 2
    return np.conj(np.flip(coeffs, axis=tuple(range(d))))


def symmetrize(coeffs: np.ndarray) -> np.ndarray:
    return 0.5 * (coeffs + hermitian_partner(coeffs))


def validate_state(state: SpectralState | np.ndarray, rtol: float = 1e-12) -> list[str]:
    """Describe every broken invariant; empty list means the state is admissible."""
    c = state.coeffs if isinstance(state, SpectralState) else np.asarray(state)
    grid = grid_of(c)
    out: list[str] = []
    finite = np.isfinite(c)
    if not finite.all():
        bad = np.argwhere(~finite)[0]
        out.append(f"non-finite coefficient at index {tuple(int(i) for i in bad)}")
        return out
    scale = max(float(np.abs(c).max()), 1.0)
    mass = c[grid.origin + (0,) * grid.dim]
    if abs(mass) > rtol * scale:
        out.append(f"neutrality: |g(k=0, m=0)| = {abs(mass):.3e}")
    asym = np.abs(c - hermitian_partner(c))
    worst = float(asym.max())
    if worst > rtol * scale:
        pos = np.unravel_index(int(asym.argmax()), c.shape)
        k = tuple(int(pos[i]) - grid.K for i in range(grid.dim))
        m = tuple(int(p) for p in pos[grid.dim :])
        out.append(f"realness: g(k={k}, m={m}) differs from conj(g(-k)) by {worst:.3e}")
    return out


def init_state(config: SimConfig) -> SpectralState:
    ic = config.ic
    d, K, M = config.dim, config.fourier_cutoff, config.hermite_cutoff
    grid = make_grid(d, K, M)
    c = np.zeros(config.shape, dtype=np.complex128)
    if ic.kind == "single_mode":
        k0, m0 = tuple(ic.k0), tuple(ic.m0)
        if not any(k0) and not any(m0):
            raise InitialDataError(
                "single_mode at k=0, m=0 violates neutrality: the Poisson problem "
                "on the torus needs a mean-zero density"
            )
        pos = tuple(x + K for x in k0)
        neg = tuple(-x + K for x in k0)
        if any(k0):
            c[pos + m0] += ic.amplitude / 2
            c[neg + m0] += ic.amplitude / 2
        else:
            c[pos + m0] = ic.amplitude
    elif ic.kind == "random_smooth":
        rng = np.random.default_rng(ic.seed)
        raw = rng.standard_normal(c.shape) + 1j * rng.standard_normal(c.shape)
        knorm = np.sqrt(grid.ksq)
        decay = grid.kb((1.0 + knorm) ** -ic.decay_exponent) * (1.0 + grid.levels) ** -ic.decay_exponent
        c = symmetrize(ic.amplitude * raw * decay / np.sqrt(2.0))
        c[grid.origin + (0,) * d] = 0.0
    elif ic.kind != "zero":
        raise ConfigError(f"unknown initial condition {ic.kind!r}")

    from vpfp.diagnostics import tilde_energy

    energy = tilde_energy(c, config.sobolev_order)
    if ic.kind == "random_smooth" and ic.target_energy is not None:
        if energy == 0:
            raise InitialDataError("cannot rescale an all-zero random state")
        c = c * np.sqrt(ic.target_energy / energy)
        energy = tilde_energy(c, config.sobolev_order)
    state = SpectralState(0.0, c, info={"tilde_E_N": energy})
    problems = validate_state(state)
    if problems:
        raise InitialDataError("; ".join(problems))
    return state
