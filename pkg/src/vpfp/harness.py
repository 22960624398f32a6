"""Config files, CSV reports, binary checkpoints and run manifests.

Checkpoint layout (little-endian)::

    b"VPFP" | version u32 | d u32 | K u32 | M u32 | N u32 | t f64 |
    coefficients in flat layout order as (real f64, imag f64) pairs
"""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Any, Callable

import numpy as np

import vpfp
from vpfp.diagnostics import (
    EnergyReport,
    decay_bound_violation,
    energy_inequality_check,
    fit_decay_rate,
)
from vpfp.runner import Constants, RunResult, resolve_constants, run
from vpfp.state import ConfigError, ICSpec, SimConfig, SpectralState, coeff_shape

log = logging.getLogger(__name__)

MAGIC = b"VPFP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIId")

CONSERVATION_TOL = 1e-14
RESIDUAL_TOL = 1e-12
DECAY_SLACK = 1e-6


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------- config


def _int(v: str) -> int:
    return int(v)


def _float(v: str) -> float:
    return float(v)


def _opt_float(v: str) -> float | None:
    return None if v.lower() in ("none", "computed", "") else float(v)


def _tuple(v: str) -> tuple[int, ...]:
    return tuple(int(p) for p in v.replace("(", "").replace(")", "").split(",") if p.strip())


def _str(v: str) -> str:
    return v


# key -> (parser, target, attribute, positivity requirement)
_KEYS: dict[str, tuple[Callable[[str], Any], str, str, str | None]] = {
    "dim": (_int, "cfg", "dim", None),
    "fourier_cutoff": (_int, "cfg", "fourier_cutoff", None),
    "hermite_cutoff": (_int, "cfg", "hermite_cutoff", None),
    "sobolev_order": (_int, "cfg", "sobolev_order", None),
    "dt": (_float, "cfg", "dt", "positive"),
    "t_end": (_float, "cfg", "t_end", "nonnegative"),
    "report_interval": (_float, "cfg", "report_interval", "positive"),
    "lambda0": (_opt_float, "cfg", "lambda0", "positive"),
    "coercivity_mode": (_str, "cfg", "coercivity_mode", None),
    "scheme": (_str, "cfg", "scheme", None),
    "cfl_factor": (_float, "cfg", "cfl_factor", "positive"),
    "epsilon0": (_opt_float, "cfg", "epsilon0", "positive"),
    "out_dir": (_str, "cfg", "out_dir", None),
    "checkpoint_every": (_int, "cfg", "checkpoint_every", "nonnegative"),
    "ic": (_str, "ic", "kind", None),
    "ic_amplitude": (_float, "ic", "amplitude", None),
    "ic_seed": (_int, "ic", "seed", None),
    "ic_decay": (_float, "ic", "decay_exponent", "nonnegative"),
    "ic_k": (_tuple, "ic", "k0", None),
    "ic_m": (_tuple, "ic", "m0", None),
    "ic_target_energy": (_opt_float, "ic", "target_energy", "positive"),
}

_RANGE_HINTS = {
    "dim": (lambda v: v in (1, 2, 3), "dim must be 1, 2 or 3"),
    "fourier_cutoff": (lambda v: v >= 1, "fourier_cutoff must be >= 1"),
    "hermite_cutoff": (
        lambda v: v >= 2,
        "hermite_cutoff must be >= 2: momentum_residual reads level-2 moments (M >= 2 required)",
    ),
    "sobolev_order": (lambda v: v >= 1, "sobolev_order must be >= 1"),
}


def parse_config(text: str) -> SimConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    cfg: dict[str, Any] = {}
    ic: dict[str, Any] = {}
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value' (line {lineno})")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r} (line {lineno})")
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (lines {seen[key]} and {lineno})")
        seen[key] = lineno
        parser, target, attr, req = _KEYS[key]
        try:
            parsed = parser(value)
        except ValueError:
            raise ConfigError(f"cannot parse {key} = {value!r} (line {lineno})") from None
        if isinstance(parsed, float) and not math.isfinite(parsed):
            raise ConfigError(f"{key} must be finite (line {lineno})")
        if req == "positive" and parsed is not None and not parsed > 0:
            raise ConfigError(f"{key} must be positive (line {lineno})")
        if req == "nonnegative" and parsed is not None and parsed < 0:
            raise ConfigError(f"{key} must be nonnegative (line {lineno})")
        if key in _RANGE_HINTS and not _RANGE_HINTS[key][0](parsed):
            raise ConfigError(f"{_RANGE_HINTS[key][1]} (line {lineno})")
        (cfg if target == "cfg" else ic)[attr] = parsed
    if ic:
        cfg["ic"] = ICSpec(**ic)
    return SimConfig(**cfg)


def load_config(path: str | Path | None) -> SimConfig:
    if path is None or str(path) == "default":
        return SimConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(config: SimConfig) -> str:
    """Inverse of :func:`parse_config` for every non-default field."""
    lines = []
    for key, (_, target, attr, _) in _KEYS.items():
        obj, default = (config, SimConfig()) if target == "cfg" else (config.ic, ICSpec())
        value = getattr(obj, attr)
        if value == getattr(default, attr):
            continue
        if value is None:
            text = "computed" if key == "lambda0" else "none"
        elif isinstance(value, tuple):
            text = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------- CSV


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


class ReportSink:
    """Appends EnergyReport rows to a CSV stream; header written once."""

    def __init__(self, stream: IO[str], write_header: bool = True):
        self._writer = csv.writer(stream, lineterminator="\n")
        self._stream = stream
        self._need_header = write_header

    def emit(self, report: EnergyReport) -> None:
        if self._need_header:
            self._writer.writerow(EnergyReport.columns())
            self._need_header = False
        self._writer.writerow([_fmt(v) for v in report.values()])
        self._stream.flush()


def emit_report(sink: ReportSink, report: EnergyReport) -> None:
    sink.emit(report)


def read_reports(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) for x in r] for r in reader if r]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def reports_from_columns(cols: dict[str, np.ndarray]) -> list[EnergyReport]:
    names = EnergyReport.columns()
    n = len(cols[names[0]])
    return [EnergyReport(**{c: float(cols[c][i]) for c in names}) for i in range(n)]


# ---------------------------------------------------------------- checkpoints


def checkpoint_bytes(state: SpectralState, sobolev_order: int) -> bytes:
    g = state.grid
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, g.dim, g.K, g.M, sobolev_order, float(state.t))
    return header + np.ascontiguousarray(state.coeffs, dtype="<c16").tobytes()


def checkpoint_write(path: str | Path, state: SpectralState, config: SimConfig | int) -> None:
    N = config if isinstance(config, int) else config.sobolev_order
    Path(path).write_bytes(checkpoint_bytes(state, N))


def checkpoint_read(path: str | Path) -> SpectralState:
    """Load a checkpoint; the header's Sobolev order is kept in ``state.info``."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise CheckpointError(
            f"file size mismatch: header needs {_HEADER.size} bytes, file has {len(blob)}"
        )
    magic, version, d, K, M, N, t = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version}, expected {FORMAT_VERSION}")
    if not 1 <= d <= 3:
        raise CheckpointError(f"unsupported dimension {d} in header")
    shape = coeff_shape(d, K, M)
    expected = _HEADER.size + 16 * int(np.prod(shape))
    if len(blob) != expected:
        raise CheckpointError(
            f"file size mismatch for d={d}, K={K}, M={M}: expected {expected} bytes, got {len(blob)}"
        )
    coeffs = np.frombuffer(blob, dtype="<c16", offset=_HEADER.size).reshape(shape)
    return SpectralState(t, coeffs.astype(np.complex128), info={"sobolev_order": N})


# ---------------------------------------------------------------- manifest & orchestration


@dataclass
class RunManifest:
    config: dict
    code_version: str
    lambda0: float
    lambda0_computed: bool
    coercivity_mode: str
    kappa: float
    eta: float
    started: str
    finished: str | None = None
    outputs: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    observations: dict = field(default_factory=dict)
    status: str = "running"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, tuple):
        return list(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(type(obj).__name__)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def evaluate_checks(
    reports: list[EnergyReport],
    config: SimConfig,
    consts: Constants,
    mass_drift: float = 0.0,
) -> tuple[dict, dict]:
    """PASS/FAIL per trajectory check plus non-failing observations."""
    checks: dict[str, dict] = {}
    obs: dict[str, Any] = {}
    t = np.array([r.t for r in reports])
    E = np.array([r.E_N for r in reports])
    D = np.array([r.D_N for r in reports])
    interval = config.steps_per_report * config.dt
    if len(reports) >= 3:
        chk = energy_inequality_check(t, E, D, config.dt, scale=E[0])
        checks["energy_inequality"] = {"status": "PASS" if chk.passed else "FAIL", "worst": chk.worst, "tolerance": chk.tolerance}
    else:
        checks["energy_inequality"] = {"status": "SKIPPED", "reason": "fewer than 3 reports"}
    nonincreasing = bool(np.all(np.diff(E) <= 0))
    checks["energy_nonincreasing"] = {"status": "PASS" if nonincreasing else "FAIL"}
    viol = decay_bound_violation(t, E, consts.eta, DECAY_SLACK)
    checks["decay_bound"] = {"status": "PASS" if viol <= 0 else "FAIL", "max_excess": viol}
    if len(reports) >= 2 and np.all(E > 0):
        eta_fit = fit_decay_rate(t, E)
        checks["decay_fit"] = {"status": "PASS" if eta_fit >= consts.eta else "FAIL", "eta_fit": eta_fit, "eta": consts.eta}
    else:
        checks["decay_fit"] = {"status": "SKIPPED", "reason": "needs >= 2 reports with E_N > 0"}
    checks["mass_conservation"] = {"status": "PASS" if mass_drift <= CONSERVATION_TOL else "FAIL", "drift": mass_drift}
    cont = max((r.continuity_residual for r in reports), default=0.0)
    mom = max((r.momentum_residual for r in reports), default=0.0)
    checks["continuity_residual"] = {"status": "PASS" if cont <= RESIDUAL_TOL else "FAIL", "max": cont}
    checks["momentum_residual"] = {"status": "PASS" if mom <= RESIDUAL_TOL else "FAIL", "max": mom}
    ratio_ok = all(r.D_N >= 0.4 * r.kappa * r.E_N for r in reports)
    checks["dissipation_dominates_energy"] = {"status": "PASS" if ratio_ok else "FAIL"}
    obs["report_interval"] = interval
    if reports:
        obs["E_N0"] = float(E[0])
        obs["min_ratio"] = float(reports[-1].min_ratio)
    if config.epsilon0 is not None and reports:
        small = bool(E[0] <= config.epsilon0)
        obs["smallness"] = {"epsilon0": config.epsilon0, "E_N0": float(E[0]), "satisfied": small}
        if not small:
            log.warning("E_N(0)=%g exceeds epsilon0=%g", E[0], config.epsilon0)
    return checks, obs


def run_simulation(
    config: SimConfig,
    out_dir: str | Path,
    resume: str | Path | None = None,
    mode: str = "full",
) -> tuple[RunManifest, RunResult]:
    """Run with file outputs: manifest.json, reports.csv, checkpoints/.

    With ``resume``, rows are appended to an existing reports.csv so the file
    matches the one an uninterrupted run would have written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints"
    consts = resolve_constants(config)
    manifest = RunManifest(
        config=asdict(config),
        code_version=vpfp.__version__,
        lambda0=consts.lambda0,
        lambda0_computed=consts.computed,
        coercivity_mode=config.coercivity_mode,
        kappa=consts.kappa,
        eta=consts.eta,
        started=_now(),
    )
    csv_path = out / "reports.csv"
    manifest.outputs = {"reports": str(csv_path), "manifest": str(out / "manifest.json")}
    manifest.write(out / "manifest.json")

    initial = None
    previous: list[EnergyReport] = []
    if resume is not None:
        initial = checkpoint_read(resume)
        if initial.coeffs.shape != config.shape:
            raise CheckpointError("checkpoint resolution does not match the config")
        if csv_path.exists():
            cols = read_reports(csv_path)
            previous = [r for r in reports_from_columns(cols) if r.t <= initial.t]
    skip_t = previous[-1].t if previous else None
    mass0 = None
    drift = 0.0
    written: list[str] = []

    def write_ckpt(s: SpectralState) -> None:
        ckpt_dir.mkdir(exist_ok=True)
        p = ckpt_dir / f"state_{int(round(s.t / config.dt)):09d}.vpfp"
        checkpoint_write(p, s, config)
        written.append(str(p))

    mode_flag = "a" if previous else "w"
    with open(csv_path, mode_flag, newline="", encoding="utf-8") as fh:
        sink = ReportSink(fh, write_header=not previous)

        def on_report(s: SpectralState, rep: EnergyReport) -> None:
            nonlocal mass0, drift
            m = s.coeffs[(config.fourier_cutoff,) * config.dim + (0,) * config.dim]
            mass0 = m if mass0 is None else mass0
            drift = max(drift, abs(m - mass0))
            if skip_t is not None and rep.t <= skip_t:
                return
            sink.emit(rep)

        carried = previous[-1].min_ratio if previous and previous[-1].E_N > 0 else None
        result = run(
            config, mode=mode, initial=initial, on_report=on_report, on_checkpoint=write_ckpt, min_ratio=carried
        )
    final_path = ckpt_dir / "final.vpfp"
    ckpt_dir.mkdir(exist_ok=True)
    checkpoint_write(final_path, result.state, config)
    written.append(str(final_path))

    reports = [r for r in previous if skip_t is not None and r.t < skip_t]
    reports += result.reports
    checks, obs = evaluate_checks(reports, config, consts, drift)
    manifest.checks = checks
    manifest.observations = obs
    manifest.outputs["checkpoints"] = written
    manifest.finished = _now()
    manifest.status = "PASS" if all(c["status"] != "FAIL" for c in checks.values()) else "FAIL"
    manifest.write(out / "manifest.json")
    return manifest, result

