"""Command-line front end.

Subcommands: qsd, certify, criterion, bd, decay, simulate, fv.  Every
command reads a chain (from a file or logistic parameters), writes its
named artifacts into --out, and prints a one-line summary per artifact.
Exit codes: 0 on success, 1 when a computation or input fails, 2 for
bad command lines (argparse's convention).

All numbers are written with 17 significant digits, so reruns with the
same inputs and seeds produce byte-identical files.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

from . import bd as bd_mod
from . import mc as mc_mod
from .chain import (
    KILL,
    REFLECT,
    BirthDeathSpec,
    DistributionOnStates,
    build_logistic,
    load_chain_file,
)
from .certify import certificate_to_text, certify, parse_certificate_text
from .criterion import (
    check_core_return,
    check_uniform_rates,
    derive_certificate_via_criterion,
)
from .engine import (
    compute_qsd,
    compute_qsd_auto,
    decay_table,
    decay_to_csv,
    distribution_to_csv,
    tv_distance,
)
from .errors import QuasistatError, ValidationError
from .textio import fmt


def _add_chain_args(p: argparse.ArgumentParser, need_states: bool = True):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--chain", metavar="FILE", help="chain description file")
    src.add_argument(
        "--logistic",
        nargs=3,
        type=float,
        metavar=("B", "D", "C"),
        help="logistic birth-death parameters",
    )
    if need_states:
        p.add_argument(
            "--states",
            default="auto",
            help="window size incl. state 0, or 'auto' to grow until the QSD is stable "
            "(parametric chains only; default auto)",
        )
    p.add_argument("--boundary", choices=[REFLECT, KILL], default=REFLECT)
    p.add_argument("--tol", type=float, default=1e-10, help="stabilization tolerance")


def _build_chain(args):
    """Resolve the chain source args into an AbsorbedChain."""
    if args.chain is not None:
        ch = load_chain_file(args.chain)
        states = getattr(args, "states", None)
        if states not in (None, "auto") and int(states) != ch.n_states:
            if ch.source_spec is None:
                raise ValidationError(
                    "--states conflicts with the window fixed by the chain file"
                )
            ch = ch.regrow(int(states), args.boundary)
        return ch
    b, d, c = args.logistic
    states = getattr(args, "states", "auto")
    if states == "auto":
        spec = BirthDeathSpec.logistic(b, d, c)
        return compute_qsd_auto(spec, tol=args.tol, boundary_mode=args.boundary).chain
    return build_logistic(b, d, c, int(states), args.boundary)


def _parse_states_list(text: str, n_transient: int) -> tuple[int, ...]:
    """Accept '1..5' ranges or '1,2,7' lists of transient states."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        out = tuple(range(int(lo), int(hi) + 1))
    else:
        out = tuple(int(s) for s in text.split(",") if s.strip())
    if not out or min(out) < 1 or max(out) > n_transient:
        raise ValidationError(f"state set {text!r} outside transient range 1..{n_transient}")
    return out


def _parse_grid(text: str) -> list[float]:
    """Accept 'a:b:step' arithmetic grids or comma-separated times."""
    text = text.strip()
    if ":" in text:
        a, b, step = (float(s) for s in text.split(":", 2))
        if step <= 0 or b < a:
            raise ValidationError(f"bad grid {text!r}")
        out = []
        t = a
        while t <= b + 1e-12:
            out.append(round(t, 12))
            t += step
        return out
    return [float(s) for s in text.split(",") if s.strip()]


def _parse_law(text: str, chain) -> DistributionOnStates:
    if text == "uniform":
        return DistributionOnStates.uniform(chain.n_states)
    if text == "qsd":
        return compute_qsd(chain).qsd
    return DistributionOnStates.delta(int(text), chain.n_states)


def _outpath(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _emit(path: str, summary: str):
    print(f"wrote {path} ({summary})")


# -- commands -------------------------------------------------------------


def cmd_qsd(args) -> int:
    chain = _build_chain(args)
    res = compute_qsd(chain, tol=min(args.tol, 1e-10))
    path = _outpath(args, "qsd.csv")
    distribution_to_csv(res.qsd, path)
    _emit(
        path,
        f"n_states={res.truncation_n}, absorption_rate={fmt(res.absorption_rate)}, "
        f"eigen_residual={fmt(res.eigen_residual)}, iterations={res.iterations}",
    )
    return 0


def cmd_certify(args) -> int:
    if args.logistic is not None and args.K is None:
        b, d, c = args.logistic
        result = bd_mod.logistic_certificate(b, d, c, tol=args.tol, t_max=args.t_max)
        cert = result.certificate
    else:
        chain = _build_chain(args)
        if args.K is None or args.x0 is None:
            raise ValidationError("--K and --x0 are required for explicit chains")
        K = _parse_states_list(args.K, chain.n_transient)
        if args.route == "criterion":
            cert = derive_certificate_via_criterion(chain, K, args.x0, t_max=args.t_max)
        else:
            cert = certify(chain, K, args.x0, t_max=args.t_max)
    path = _outpath(args, "certificate.txt")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(certificate_to_text(cert))
    _emit(path, f"gamma={fmt(cert.gamma)}, K=1..{cert.K[-1]}, lambda0={fmt(cert.lambda0)}")
    return 0


def cmd_criterion(args) -> int:
    chain = _build_chain(args)
    if args.K is not None:
        rep = check_core_return(chain, _parse_states_list(args.K, chain.n_transient))
    else:
        rep = check_uniform_rates(chain)
    path = _outpath(args, "criterion.txt")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(rep.to_text())
    verdicts = []
    if rep.core_return_holds is not None:
        verdicts.append(f"core_return={'holds' if rep.core_return_holds else 'fails'}")
    verdicts.append(f"uniform_rates={'holds' if rep.uniform_rates_holds else 'fails'}")
    _emit(path, ", ".join(verdicts))
    return 0


def cmd_bd(args) -> int:
    b, d, c = args.logistic
    rep = bd_mod.build_bd_report(b, d, c, z=args.z, x_max=args.x_max, j_max=args.j_max)
    txt = _outpath(args, "bd_report.txt")
    with open(txt, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(rep.to_text())
    acsv = _outpath(args, "bd_alpha.csv")
    bd_mod.alpha_to_csv(rep, acsv)
    hcsv = _outpath(args, "bd_hitting.csv")
    bd_mod.hitting_to_csv(rep, hcsv)
    _emit(txt, f"z={rep.z}, z0={rep.z0}, sup_hitting={fmt(rep.sup_hitting)}")
    _emit(acsv, f"{rep.alpha.size} coefficients")
    _emit(hcsv, f"x={rep.z + 1}..{int(rep.hitting_x[-1])}")
    return 0


def cmd_decay(args) -> int:
    chain = _build_chain(args)
    mu = _parse_law(args.mu, chain)
    nu = _parse_law(args.nu, chain)
    grid = _parse_grid(args.t_grid)
    cert = None
    if args.certificate is not None:
        with open(args.certificate, "r", encoding="utf-8") as fh:
            cert = parse_certificate_text(fh.read())
    elif args.auto_certify:
        if args.logistic is None:
            raise ValidationError("--auto-certify needs a --logistic chain")
        b, d, c = args.logistic
        cert = bd_mod.logistic_certificate(b, d, c, tol=args.tol).certificate
    rho = compute_qsd(chain, tol=min(args.tol, 1e-10)).qsd
    rows = decay_table(chain, mu, nu, grid, certificate=cert, rho=rho)
    path = _outpath(args, "decay.csv")
    decay_to_csv(rows, path)
    worst = max((r.tv_pair for r in rows), default=math.nan)
    _emit(path, f"{len(rows)} rows, max tv_pair={fmt(worst)}, bound={'yes' if cert else 'no'}")
    return 0


def cmd_simulate(args) -> int:
    chain = _build_chain(args)
    mu = _parse_law(args.mu, chain)
    stop = (
        _parse_states_list(args.stop_set, chain.n_transient)
        if args.stop_set is not None
        else None
    )
    horizon = math.inf if args.horizon == "inf" else float(args.horizon)
    batch = mc_mod.simulate_batch(
        chain, mu, horizon, args.n_paths, args.seed, stop_on_set=stop
    )
    path = _outpath(args, "batch.csv")
    mc_mod.batch_to_csv(batch, path)
    _emit(
        path,
        f"n_paths={batch.n_paths}, survival_fraction={fmt(batch.survival_fraction())}",
    )
    return 0


def cmd_fv(args) -> int:
    chain = _build_chain(args)
    mu = _parse_law(args.mu, chain) if args.mu is not None else None
    sample_times = _parse_grid(args.sample_times) if args.sample_times else None
    snaps = mc_mod.fleming_viot(
        chain, args.n_particles, float(args.horizon), args.seed,
        sample_times=sample_times, mu=mu,
    )
    path = _outpath(args, "fv.csv")
    mc_mod.ensembles_to_csv(snaps, path)
    last = snaps[-1]
    summary = f"n_particles={last.n_particles}, redraws={last.redraw_count}"
    if args.compare_qsd:
        rho = compute_qsd(chain, tol=min(args.tol, 1e-10)).qsd
        gap = tv_distance(last.empirical_distribution(chain.n_states), rho)
        summary += f", tv_to_qsd={fmt(gap)}"
    _emit(path, summary)
    return 0


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="quasistat",
        description="Quasi-stationary analysis of absorbed continuous-time Markov chains.",
    )
    ap.add_argument(
        "--threads",
        type=int,
        default=1,
        help="accepted for interface compatibility; the engine is sequential "
        "and results never depend on this value",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("qsd", help="compute the quasi-stationary law")
    _add_chain_args(p)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_qsd)

    p = sub.add_parser("certify", help="assemble a mixing certificate")
    _add_chain_args(p)
    p.add_argument("--K", help="core set, e.g. '1..3' or '1,2,3' (auto for logistic)")
    p.add_argument("--x0", type=int, help="anchor state inside K")
    p.add_argument("--route", choices=["direct", "criterion"], default="direct")
    p.add_argument("--t-max", type=float, default=20.0, dest="t_max")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("criterion", help="evaluate the rate-matrix tests")
    _add_chain_args(p)
    p.add_argument("--K", help="core set to test; omit to scan prefixes")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_criterion)

    p = sub.add_parser("bd", help="birth-death ladder and hitting analytics")
    p.add_argument(
        "--logistic", nargs=3, type=float, metavar=("B", "D", "C"), required=True
    )
    p.add_argument("--z", type=int, default=None, help="target level (default: z0)")
    p.add_argument("--x-max", type=int, default=30, dest="x_max")
    p.add_argument("--j-max", type=int, default=40, dest="j_max")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_bd)

    p = sub.add_parser("decay", help="tabulate conditional mixing against the bound")
    _add_chain_args(p)
    p.add_argument("--mu", required=True, help="initial law: state, 'uniform', or 'qsd'")
    p.add_argument("--nu", required=True, help="second initial law")
    p.add_argument("--t-grid", default="1:12:1", dest="t_grid")
    p.add_argument("--certificate", help="certificate file for the bound column")
    p.add_argument(
        "--auto-certify",
        action="store_true",
        dest="auto_certify",
        help="derive the certificate from the logistic parameters",
    )
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_decay)

    p = sub.add_parser("simulate", help="independent absorbed paths")
    _add_chain_args(p)
    p.add_argument("--mu", required=True)
    p.add_argument("--horizon", required=True, help="time horizon or 'inf'")
    p.add_argument("--n-paths", type=int, required=True, dest="n_paths")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--stop-set", dest="stop_set", help="stop on entering these states")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fv", help="interacting-particle QSD estimate")
    _add_chain_args(p)
    p.add_argument("--mu", default=None)
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--n-particles", type=int, required=True, dest="n_particles")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sample-times", dest="sample_times")
    p.add_argument("--compare-qsd", action="store_true", dest="compare_qsd")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_fv)

    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse speaks exit codes already
        return int(exc.code or 0)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except QuasistatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
