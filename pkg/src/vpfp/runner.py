"""Time loop: steps a state from its start time to ``t_end`` and emits reports."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from vpfp.diagnostics import EnergyReport, make_report
from vpfp.dynamics import DivergenceError, StepScheme, make_stepper
from vpfp.hermite import coercivity_lambda0, kappa_from_lambda0
from vpfp.state import ConfigError, SimConfig, SpectralState, init_state, make_grid

log = logging.getLogger(__name__)

ReportCallback = Callable[[SpectralState, EnergyReport], None]
StateCallback = Callable[[SpectralState], None]


@dataclass(frozen=True)
class Constants:
    lambda0: float
    kappa: float
    eta: float
    computed: bool


def resolve_constants(config: SimConfig) -> Constants:
    if config.lambda0 is None:
        lam = coercivity_lambda0(config.dim, config.hermite_cutoff, config.coercivity_mode)
        computed = True
    else:
        lam, computed = float(config.lambda0), False
    kappa = kappa_from_lambda0(lam)
    return Constants(lam, kappa, 2 * kappa / 5, computed)


@dataclass
class RunResult:
    state: SpectralState
    reports: list[EnergyReport] = field(default_factory=list)
    constants: Constants | None = None


def run(
    config: SimConfig,
    *,
    mode: str = "full",
    initial: SpectralState | None = None,
    on_report: ReportCallback | None = None,
    on_checkpoint: StateCallback | None = None,
    keep_reports: bool = True,
    min_ratio: float | None = None,
) -> RunResult:
    """Integrate from ``initial`` (default: the configured initial data) to ``t_end``.

    Reports are produced every ``report_interval``, including t = 0 or the
    resume time when it falls on the report cadence. Time is always
    ``step_index * dt`` so a resumed run retraces an uninterrupted one;
    ``min_ratio`` carries the running minimum of D_N/E_N across a resume.
    """
    consts = resolve_constants(config)
    state = init_state(config) if initial is None else initial
    grid = make_grid(config.dim, config.fourier_cutoff, config.hermite_cutoff)
    if state.coeffs.shape != config.shape:
        raise ConfigError(f"state shape {state.coeffs.shape} does not match config {config.shape}")
    dt = config.dt
    n_steps = config.n_steps
    spr = config.steps_per_report
    if n_steps % spr:
        raise ConfigError("t_end must be an integer multiple of report_interval")
    start = int(round(state.t / dt))
    if abs(start * dt - state.t) > 1e-9 * max(1.0, state.t):
        raise ConfigError(f"start time {state.t} is not on the dt grid")
    if start > n_steps:
        raise ConfigError(f"start time {state.t} is past t_end={config.t_end}")
    advance = make_stepper(grid, StepScheme(config.scheme, dt, config.cfl_factor), mode)
    result = RunResult(state, [], consts)
    running_min = min_ratio

    def emit(s: SpectralState) -> None:
        nonlocal running_min
        rep = make_report(s, config.sobolev_order, consts.kappa, consts.lambda0, mode, running_min)
        if rep.E_N > 0 or running_min is not None:
            running_min = rep.min_ratio
        if keep_reports:
            result.reports.append(rep)
        if on_report is not None:
            on_report(s, rep)

    if start % spr == 0:
        emit(state)
    c = state.coeffs
    for s in range(start, n_steps):
        c = advance(c)
        done = s + 1
        if not np.isfinite(c).all():
            raise DivergenceError(done * dt)
        on_cadence = done % spr == 0
        on_ckpt = on_checkpoint is not None and config.checkpoint_every and done % config.checkpoint_every == 0
        if on_cadence or on_ckpt or done == n_steps:
            state = SpectralState(done * dt, c)
            if on_cadence:
                emit(state)
            if on_ckpt:
                on_checkpoint(state)
    result.state = SpectralState(n_steps * dt, c) if n_steps > start else state
    log.debug("run finished at t=%g after %d steps", result.state.t, n_steps - start)
    return result
