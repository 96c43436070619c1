"""Command-line front end.

Exit status: 0 success, 2 invalid input, 3 nominal system not asymptotically
stable, 4 solver inconclusive, 5 bound counterexample found.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from fractions import Fraction

import numpy as np

from . import __version__
from .bounds import (TRAJECTORY_KINDS, empirical_gain, f_of_p, gain_ratio, kernel_sup,
                     margin_multiplier, random_trajectory, remark1_pair, remark3_pair)
from .core import (INF, DelayCase, DelayTrajectory, DelayUncertainty, InvalidInput,
                   case_for_d, example_system, l2_norm_sq, load_system)
from .frequency import (SingularityError, k_margin, nominal_stable, scaled_freq_margin,
                        small_gain_check)
from .lmi import (EPS0, FEAS_TOL, TABLE1_REFERENCE, Verdict, build_problem, feasibility_solve,
                  mu_max_bisect, table1, table1_csv)
from .sim import dde_integrate, random_history

EXIT_OK, EXIT_INVALID, EXIT_UNSTABLE, EXIT_INCONCLUSIVE, EXIT_COUNTEREXAMPLE = 0, 2, 3, 4, 5

F_TABLE_REFERENCE = ((0.1, 1.0909, 0.9574), (0.5, 1.3333, 0.8660), (1.0, 1.5, 0.8165), ("inf", 1.75, 0.7559))


class CliError(Exception):
    def __init__(self, message, code=EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _jsonable(obj):
    if obj is INF:
        return "inf"
    if isinstance(obj, Fraction):
        return float(obj)
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, float) and math.isnan(obj):
        return "nan"
    if isinstance(obj, (np.floating, np.integer)):
        return _jsonable(obj.item())
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "value") and not isinstance(obj, (int, float, str)):
        return obj.value
    return obj


def _dump(report) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"


def _write_atomic(directory, name, text):
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, os.path.join(directory, name))
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- configuration --------------------------------------------------------------

def _config(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return cfg


def _envelope(args, tolerances, **body):
    return {"tool": "delaymargin", "version": __version__, "command": args.command,
            "config": _config(args), "seed": getattr(args, "seed", None),
            "tolerances": tolerances, **body}


def _resolve(args, need_system=True):
    """System and uncertainty after applying flag overrides."""
    if args.system:
        sys_, unc = load_system(args.system)
    elif need_system:
        raise CliError("--system is required for this command")
    else:
        sys_, unc = example_system(0.2, "B")
    if args.d is not None and (args.case is not None or args.p is not None):
        raise CliError("--d cannot be combined with --case or --p")
    case, p = unc.case, unc.p
    if args.d is not None:
        case, p = case_for_d(args.d)
    elif args.case is not None:
        case = DelayCase(args.case)
        if case is DelayCase.B:
            if args.p is not None:
                raise CliError("--p is forbidden with --case B")
            p = INF
        else:
            if args.p is None:
                raise CliError(f"--case {case.value} requires --p")
            p = args.p
    elif args.p is not None:
        case = DelayCase.A if args.p < 0 else DelayCase.C
        p = args.p
    mu = unc.mu if args.mu is None else args.mu
    unc = DelayUncertainty(mu, case, p)
    unc.check_system(sys_)
    return sys_, unc


def _p_label(p):
    return "inf" if p is INF else float(p)


# -- subcommands -------------------------------------------------------------

def _freq_block(sys_, unc, scaled=True):
    k = k_margin(sys_)
    F = f_of_p(unc.p)
    raw = k / math.sqrt(float(F))
    out = {"method": "freq", "k": k, "F": float(F), "mu_max_unscaled": raw,
           "mu_max": min(raw, sys_.h)}
    if scaled:
        sm, X = scaled_freq_margin(sys_, unc.case, unc.p)
        out["mu_max_diagonal_scaling"] = min(sm, sys_.h)
        out["scaling"] = np.diag(X.X).tolist()
    return out


def _lmi_block(sys_, unc, args):
    res = mu_max_bisect(sys_, unc.case, unc.p, args.tol_mu, args.seed)
    return res.to_dict(), res


def _check_nominal(sys_):
    stab = nominal_stable(sys_)
    info = {"stable": stab.stable, "rightmost_root": stab.rightmost, "refined": stab.refined}
    return stab.stable, info


def cmd_analyze(args):
    sys_, unc = _resolve(args)
    tol = {"tol_stab": 1e-9, "tol_mu": args.tol_mu, "feasibility": FEAS_TOL, "eps0": EPS0}
    ok, nominal = _check_nominal(sys_)
    files = {}
    if not ok:
        files["analyze.json"] = _dump(_envelope(args, tol, nominal=nominal,
                                                error="nominal system not asymptotically stable"))
        return EXIT_UNSTABLE, files
    F = f_of_p(unc.p)
    sg = small_gain_check(sys_, unc, "diagonal")
    cert = feasibility_solve(build_problem(sys_, unc.mu, F), seed=args.seed)
    lmi_margin, _ = _lmi_block(sys_, unc, args)
    report = _envelope(
        args, tol, nominal=nominal, case=unc.case.value, p=_p_label(unc.p), mu=unc.mu,
        F=str(F), multiplier=margin_multiplier(unc.p),
        at_mu={"small_gain": {"stable": sg.stable, "norm": sg.best_norm},
               "lmi": {"verdict": cert.verdict.value, "margin": cert.margin,
                       "iterations": cert.iterations}},
        margins={"freq": _freq_block(sys_, unc), "lmi": lmi_margin},
    )
    files["analyze.json"] = _dump(report)
    code = EXIT_INCONCLUSIVE if cert.verdict is Verdict.inconclusive else EXIT_OK
    return code, files


def cmd_margin(args):
    sys_, unc = _resolve(args)
    tol = {"tol_stab": 1e-9, "tol_mu": args.tol_mu, "feasibility": FEAS_TOL, "eps0": EPS0}
    ok, nominal = _check_nominal(sys_)
    if not ok:
        return EXIT_UNSTABLE, {"margin.json": _dump(_envelope(
            args, tol, nominal=nominal, error="nominal system not asymptotically stable"))}
    margins = {}
    code = EXIT_OK
    if args.method in ("freq", "both"):
        margins["freq"] = _freq_block(sys_, unc)
    if args.method in ("lmi", "both"):
        margins["lmi"], res = _lmi_block(sys_, unc, args)
        if res.mu_max == 0.0 and res.inconclusive:
            code = EXIT_INCONCLUSIVE
    report = _envelope(args, tol, nominal=nominal, case=unc.case.value, p=_p_label(unc.p),
                       margins=margins)
    return code, {"margin.json": _dump(report)}


def cmd_verify_bound(args):
    sys_, unc = _resolve(args, need_system=False)
    if unc.mu <= 0:
        raise CliError("verify-bound needs mu > 0")
    rep = empirical_gain(sys_.h, unc, args.trials, args.seed, dt=args.dt)
    F = float(f_of_p(unc.p))
    kernel_rows = []
    kernel_fail = False
    n_kernel = min(args.trials, 20)
    kernel_dt = unc.mu / 2000
    for i in range(n_kernel):
        rng = np.random.default_rng([args.seed, 10_000 + i])
        traj = random_trajectory(rng, unc.case, unc.p, unc.mu, max(10 * unc.mu, 4 * sys_.h))
        sup, at = kernel_sup(traj, sys_.h, dt=kernel_dt)
        ok = sup <= F * unc.mu ** 2 * (1 + 1e-2)
        kernel_fail |= not ok
        kernel_rows.append({"trial": i, "label": traj.label, "sup_K": sup, "at": at, "ok": ok})
    tol = {"quadrature": rep.tol_quadrature, "kernel_rel": 1e-2, "kernel_dt": kernel_dt,
           "dt": args.dt}
    report = _envelope(args, tol, bound=rep.to_dict(),
                       kernel={"bound": F * unc.mu ** 2, "trials": kernel_rows,
                               "sup": max(r["sup_K"] for r in kernel_rows)})
    code = EXIT_COUNTEREXAMPLE if (rep.counterexample is not None or kernel_fail) else EXIT_OK
    return code, {"verify_bound.json": _dump(report)}


def cmd_simulate(args):
    sys_, unc = _resolve(args)
    T = 50.0 * sys_.h if args.T is None else args.T
    dt = sys_.h / 40 if args.dt is None else args.dt
    rng = np.random.default_rng(args.seed)
    mu = unc.mu
    gen = args.delay
    if gen == "zero" or mu == 0:
        traj = DelayTrajectory.constant(0.0, T, mu, DelayCase.B, INF, label="zero")
    elif gen == "max":
        traj = DelayTrajectory.constant(mu, T, mu, DelayCase.B, INF, label="max")
    elif gen == "min":
        traj = DelayTrajectory.constant(-mu, T, mu, DelayCase.B, INF, label="min")
    else:
        kind = None if gen == "random" else gen
        traj = random_trajectory(rng, unc.case, unc.p, mu, T, kind=kind)
    hist = random_history(rng, sys_, mu, dt)
    run = dde_integrate(sys_, traj, hist, dt, T)
    report = _envelope(args, {"dt": dt, "blowup": 1e12}, trajectory=traj.to_dict(),
                       decay_estimate=run.decay_estimate, diverged=run.diverged,
                       blowup_time=run.blowup_time, T=T,
                       note="a decaying run is evidence, not proof, of stability")
    return EXIT_OK, {"simulate.json": _dump(report), "simulate.csv": run.to_csv()}


def _reproduce_remark2():
    rows = []
    for p, F_ref, m_ref in F_TABLE_REFERENCE:
        pv = INF if p == "inf" else p
        F = float(f_of_p(pv))
        m = margin_multiplier(pv)
        rows.append([p, f"{F:.4f}", f"{m:.4f}", F_ref, m_ref,
                     f"{abs(F - F_ref):.2e}", f"{abs(m - m_ref):.2e}"])
    header = ["p", "F", "multiplier", "reference_F", "reference_multiplier", "abs_error_F",
              "abs_error_multiplier"]
    return _csv(header, rows), {"rows": len(rows)}


def _reproduce_remark1(dt):
    mu = 1.0
    rows = []
    for theta in (10.0, 100.0, 1000.0):
        y, traj = remark1_pair(theta, mu, dt)
        ratio = gain_ratio(y, traj, mu) / mu ** 2
        stated = ((theta - mu) ** 2 + (2.0 / 3.0) * mu ** 2) / theta ** 2
        exact = (theta - mu / 3.0) / theta
        rows.append([theta, f"{ratio:.8f}", f"{stated:.8f}", f"{abs(ratio - stated):.2e}",
                     f"{exact:.8f}", f"{abs(ratio - exact):.2e}"])
    header = ["theta", "ratio", "closed_form_stated", "abs_error_stated",
              "closed_form_exact", "abs_error_exact"]
    return _csv(header, rows), {"mu": mu, "dt": dt}


def _reproduce_remark3(dt):
    h = 1.0
    rows = []
    F = 1.5
    for mu in (0.25, 0.5, 1.0):
        y, traj = remark3_pair(mu, h, dt)
        from .bounds import delta_apply
        z = delta_apply(y, traj, h)
        ny = l2_norm_sq(y)
        nu = l2_norm_sq(z) / (mu * mu * F)
        expected = 2.0 * mu ** 3 / 3.0
        rows.append([mu, f"{ny:.8f}", f"{nu:.8f}", f"{expected:.8f}",
                     f"{abs(ny - expected):.2e}", f"{abs(nu - expected):.2e}"])
    header = ["mu", "y_norm_sq", "u_norm_sq", "expected", "abs_error_y", "abs_error_u"]
    return _csv(header, rows), {"h": h, "F": F, "dt": dt}


def cmd_reproduce(args):
    what = args.what
    tol = {"tol_mu": args.tol_mu, "feasibility": FEAS_TOL, "eps0": EPS0}
    if what == "remark2":
        text, extra = _reproduce_remark2()
    elif what == "remark1":
        text, extra = _reproduce_remark1(args.dt or 1e-3)
    elif what == "remark3":
        text, extra = _reproduce_remark3(args.dt or 1e-4)
    else:
        sys_, _ = example_system()
        rows = table1(sys_, args.tol_mu, args.seed)
        text = table1_csv(rows)
        extra = {"rows": [r["result"].to_dict() for r in rows],
                 "non_increasing": all(a["mu_max"] >= b["mu_max"] for a, b in zip(rows, rows[1:]))}
        if any(r["result"].inconclusive for r in rows):
            extra["note"] = "inconclusive verdicts were treated as infeasible"
    report = _envelope(args, tol, result=extra)
    return EXIT_OK, {f"reproduce_{what}.csv": text, f"reproduce_{what}.json": _dump(report)}


# -- parser ------------------------------------------------------------------------

def _positive(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return conv


def _d_value(text):
    if text.lower() == "inf":
        return "inf"
    return float(text)


def _common(sp, system=True):
    sp.add_argument("--system", metavar="PATH", help="system document (JSON)")
    sp.add_argument("--case", choices=["A", "B", "C"])
    sp.add_argument("--p", type=float)
    sp.add_argument("--d", type=_d_value, help="derivative bound 1+p, or inf")
    sp.add_argument("--mu", type=float)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=".", metavar="DIR")
    sp.add_argument("--tol-mu", dest="tol_mu", type=_positive(float), default=1e-3)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="delaymargin", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("analyze", help="nominal check, F(p), both margins")
    _common(sp)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("margin", help="margin by frequency sweep, LMI or both")
    _common(sp)
    sp.add_argument("--method", choices=["freq", "lmi", "both"], default="both")
    sp.set_defaults(func=cmd_margin)

    sp = sub.add_parser("verify-bound", help="Monte Carlo check of the operator bound")
    _common(sp)
    sp.add_argument("--trials", type=_positive(int), default=200)
    sp.add_argument("--dt", type=_positive(float), default=0.01)
    sp.set_defaults(func=cmd_verify_bound)

    sp = sub.add_parser("simulate", help="integrate under one delay trajectory")
    _common(sp)
    sp.add_argument("--delay", choices=["random", "zero", "max", "min", *TRAJECTORY_KINDS],
                    default="random")
    sp.add_argument("--T", type=_positive(float))
    sp.add_argument("--dt", type=_positive(float))
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("reproduce", help="regenerate published tables")
    sp.add_argument("what", choices=["table1", "remark2", "remark1", "remark3"])
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=".", metavar="DIR")
    sp.add_argument("--tol-mu", dest="tol_mu", type=_positive(float), default=1e-3)
    sp.add_argument("--dt", type=_positive(float))
    sp.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        code, files = args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (InvalidInput, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SingularityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    for name in sorted(files):
        _write_atomic(args.out, name, files[name])
    for name in sorted(files):
        print(os.path.join(args.out, name))
    return code


if __name__ == "__main__":
    sys.exit(main())
