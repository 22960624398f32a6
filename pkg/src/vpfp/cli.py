"""Command-line entry point.

Exit codes: 0 when every check passes, 1 when a check fails, 2 for usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

from vpfp.diagnostics import fit_decay_rate
from vpfp.harness import (
    CheckpointError,
    checkpoint_read,
    load_config,
    read_reports,
    run_simulation,
)
from vpfp.hermite import coercivity_lambda0, kappa_from_lambda0
from vpfp.oracle import compare_trajectories, evolve_state_dense, spectral_abscissa_for
from vpfp.runner import resolve_constants, run
from vpfp.state import COERCIVITY_MODES, ConfigError, init_state, validate_state

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _cmd_run(args, config) -> int:
    out = args.out or config.out_dir or "vpfp_out"
    manifest, _ = run_simulation(
        config, out, resume=args.resume, mode="linearized" if args.linearized else "full"
    )
    for name, chk in manifest.checks.items():
        print(f"{name:32s} {chk['status']}")
    print(f"status: {manifest.status}  (outputs in {out})")
    return EXIT_OK if manifest.status == "PASS" else EXIT_FAIL


def _cmd_lambda0(args, config) -> int:
    d, M = config.dim, config.hermite_cutoff
    for mode in COERCIVITY_MODES:
        lam = coercivity_lambda0(d, M, mode)
        kappa = kappa_from_lambda0(lam)
        print(f"{mode:14s} lambda0 = {lam:.15g}  kappa = {kappa:.15g}  eta = {2 * kappa / 5:.15g}")
    consts = resolve_constants(config)
    print(f"used ({config.coercivity_mode}{'' if consts.computed else ', manual'}): "
          f"lambda0 = {consts.lambda0:.15g}  kappa = {consts.kappa:.15g}  eta = {consts.eta:.15g}")
    return EXIT_OK


def _cmd_spectrum(args, config) -> int:
    consts = resolve_constants(config)
    ab = spectral_abscissa_for(config)
    for k in sorted(ab.per_k):
        print(f"k = {k!s:16s} max Re eig = {ab.per_k[k].real:.15g}")
    bound = -consts.kappa / 5
    holds = ab.value <= bound + 1e-6
    print(f"abscissa = {ab.value:.15g} at k = {ab.k}; -kappa/5 = {bound:.15g}; "
          f"{'below' if holds else 'ABOVE'} the linear decay bound (observation)")
    return EXIT_OK


def _cmd_oracle(args, config) -> int:
    initial = init_state(config)
    states = []
    run(config, mode="linearized", initial=initial, on_report=lambda s, r: states.append(s), keep_reports=False)
    times = [s.t - initial.t for s in states]
    reference = evolve_state_dense(initial, times)
    err = compare_trajectories([s.coeffs for s in states], reference)
    ok = err <= args.tol
    print(f"max relative L2 error = {err:.6e} over {len(states)} reports (tol {args.tol:g}): {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_fit_decay(args, config) -> int:
    cols = read_reports(args.csv)
    if "kappa" in cols and len(cols["kappa"]):
        kappa = float(cols["kappa"][0])
    else:
        kappa = resolve_constants(config).kappa
    eta = 2 * kappa / 5
    eta_fit = fit_decay_rate(cols["t"], cols["E_N"], transient=args.transient)
    ok = eta_fit >= eta
    print(f"eta_fit = {eta_fit:.15g}")
    print(f"eta = 2*kappa/5 = {eta:.15g}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_validate(args, config) -> int:
    try:
        state = checkpoint_read(args.checkpoint)
    except CheckpointError as exc:
        print(f"invalid checkpoint: {exc}")
        return EXIT_FAIL
    problems = validate_state(state)
    g = state.grid
    print(f"t = {state.t:.17g}, d = {g.dim}, K = {g.K}, M = {g.M}, N = {state.info.get('sobolev_order')}")
    for p in problems:
        print(p)
    print("OK" if not problems else f"{len(problems)} violation(s)")
    return EXIT_OK if not problems else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="default", help="config file, or 'default'")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="vpfp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", parents=[common], help="simulate and write manifest, CSV, checkpoints")
    s.add_argument("--resume", default=None, help="checkpoint to continue from")
    s.add_argument("--linearized", action="store_true", help="drop the quadratic term")
    s.set_defaults(func=_cmd_run)

    s = sub.add_parser("lambda0", parents=[common], help="coercivity constant, kappa and eta")
    s.set_defaults(func=_cmd_lambda0)

    s = sub.add_parser("spectrum", parents=[common], help="per-k spectral abscissa of the linear generator")
    s.set_defaults(func=_cmd_spectrum)

    s = sub.add_parser("oracle-compare", parents=[common], help="linearized run against dense exponentials")
    s.add_argument("--tol", type=float, default=1e-6)
    s.set_defaults(func=_cmd_oracle)

    s = sub.add_parser("fit-decay", parents=[common], help="fit the decay rate of E_N from a report CSV")
    s.add_argument("csv")
    s.add_argument("--transient", type=float, default=0.2)
    s.set_defaults(func=_cmd_fit_decay)

    s = sub.add_parser("validate", parents=[common], help="check a checkpoint file")
    s.add_argument("checkpoint")
    s.set_defaults(func=_cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, config)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
