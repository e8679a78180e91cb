"""Command line interface: ``fracop <command> ...``.

Commands print a human-readable summary, optionally write CSV with
``--output``, and exit 0 exactly when every requested check passes.
Family and experiment settings can come from a key-value ``--config`` file
(see :mod:`fracop.oplab.config`); command line flags override it.
"""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction

import numpy as np

from ..atoms import AtomError, AtomSpec, build_atom
from ..exactlin import FamilyError, build_normalization, validate_family, verify_projections
from ..kernelops import KernelParams
from .config import ConfigError, ExperimentConfig, parse_config_text
from .experiments import (Report, atom_checks, far_decay_experiment, reproduce_example,
                          scaling_exponent_experiment, uniform_atom_experiment)
from .operator import Bump, UnsupportedParameters, apply_Tr_many, lq_norm_Tr_atom

__all__ = ["main", "run_cli", "build_parser"]

# flag name -> config key
_CONFIG_FLAGS = {
    "family": "family", "n": "n", "partition": "partition", "family_seed": "family_seed",
    "r": "r", "p": "p", "atoms": "atoms", "dilations": "dilations", "samples": "samples",
    "tol": "tol", "threshold": "threshold", "q_perturbed": "q_perturbed", "seed": "seed",
    "output": "output",
}


def _add_family(sp: argparse.ArgumentParser) -> None:
    g = sp.add_argument_group("family")
    g.add_argument("--config", help="key-value config file")
    g.add_argument("--family", help="canonical | random | worked-example | inline")
    g.add_argument("--n", help="dimension")
    g.add_argument("--partition", help="block sizes, e.g. 1,1")
    g.add_argument("--family-seed", dest="family_seed", help="seed of a random family")
    g.add_argument("--matrix", action="append", default=[],
                   help="matrix in 'a,b; c,d' form (repeat for A1, A2, ...)")


def _add_atom(sp: argparse.ArgumentParser, p_default: str | None = "1") -> None:
    g = sp.add_argument_group("atom")
    g.add_argument("--p", default=p_default, help="atom exponent p")
    g.add_argument("--center", help="comma separated centre (default origin)")
    g.add_argument("--radius", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-moments", action="store_true",
                   help="skip the moment projection (negative control)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracop",
                                 description="Product-kernel fractional integral operators.")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("check", help="validate a matrix family")
    _add_family(sp)

    sp = sub.add_parser("normalize", help="build and verify C, B, B^-1")
    _add_family(sp)

    sp = sub.add_parser("atom", help="build an atom and report its moments")
    sp.add_argument("--dim", type=int, default=2, help="dimension")
    _add_atom(sp)
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--output")

    sp = sub.add_parser("apply", help="pointwise values of T_r")
    _add_family(sp)
    sp.add_argument("--r", required=True)
    _add_atom(sp)
    sp.add_argument("--bump", action="store_true", help="use a smooth bump instead of an atom")
    sp.add_argument("--x", required=True, help="targets 'x1,x2; y1,y2; ...'")
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--method", choices=("auto", "normalized", "direct"), default="auto")
    sp.add_argument("--output")

    sp = sub.add_parser("norms", help="L^q norm of T_r applied to an atom")
    _add_family(sp)
    sp.add_argument("--r", required=True)
    _add_atom(sp)
    sp.add_argument("--q", type=float, help="default: 1/q = 1/p - r")
    sp.add_argument("--tol", type=float, default=1e-3)
    sp.add_argument("--output")

    sp = sub.add_parser("experiment", help="verification suites")
    sp.add_argument("suite", choices=("uniform", "scaling", "far-decay"))
    _add_family(sp)
    for name in ("r", "p", "atoms", "dilations", "samples", "tol", "threshold", "seed",
                 "output"):
        sp.add_argument(f"--{name}")
    sp.add_argument("--q-perturbed", dest="q_perturbed")

    sp = sub.add_parser("reproduce-example", help="exact reproduction of the 3x3 example")
    sp.add_argument("--output")
    return ap


def _config(args) -> ExperimentConfig:
    """Merge the config file and flags; flags win."""
    entries: dict = {}
    source = "arguments"
    if getattr(args, "config", None):
        source = args.config
        try:
            with open(args.config) as fh:
                entries = parse_config_text(fh.read(), source)
        except OSError as exc:
            raise ConfigError(f"cannot read: {exc.strerror}", source=source) from exc
    for flag, key in _CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None and (key != "p" or args.command == "experiment"):
            entries[key] = (str(value), None)
    if getattr(args, "matrix", None):
        entries = {k: v for k, v in entries.items() if not (k[:1] == "A" and k[1:].isdigit())}
        for j, text in enumerate(args.matrix, start=1):
            entries[f"A{j}"] = (text, None)
    return ExperimentConfig.from_entries(entries, source=source)


def _vector(text: str, n: int, name: str) -> np.ndarray:
    try:
        v = np.array([float(Fraction(s)) for s in text.split(",")])
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot parse {text!r}", key=name) from exc
    if v.size != n:
        raise ConfigError(f"expected {n} coordinates, got {v.size}", key=name)
    return v


def _atom(args, n: int):
    center = np.zeros(n) if not args.center else _vector(args.center, n, "center")
    spec = AtomSpec(n, Fraction(args.p), tuple(center), args.radius, seed=args.seed)
    return build_atom(spec, enforce_moments=not args.no_moments)


def _emit(rep: Report, output: str | None) -> int:
    print(rep.summary_text())
    if output:
        rep.to_csv(output)
        print(f"wrote {output}")
    return 0 if rep.passed else 1


def _cmd_check(args) -> int:
    cfg = _config(args)
    rep = validate_family(cfg.family_spec())
    print(rep)
    for c in rep.failed():
        print(f"failing invariant: {c.name}")
    print(f"result: {'PASS' if rep.ok else 'FAIL'}")
    return 0 if rep.ok else 1


def _cmd_normalize(args) -> int:
    cfg = _config(args)
    spec = cfg.family_spec()
    norm = build_normalization(spec)
    ok = verify_projections(norm, spec)
    print(f"C =\n{norm.C}\nB =\n{norm.B}\nB^-1 =\n{norm.B_inv}")
    for j, P in enumerate(norm.projections, start=1):
        print(f"B^-1 A{j} C =\n{P}")
    print(f"result: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _cmd_atom(args) -> int:
    a = _atom(args, args.dim)
    rep = atom_checks(a, samples=args.samples, seed=args.seed)
    for k, v in a.to_record().items():
        print(f"  {k} = {v}")
    return _emit(rep, args.output)


def _cmd_apply(args) -> int:
    cfg = _config(args)
    params = KernelParams(cfg.family_spec(), cfg.r)
    n = params.n
    f = Bump(np.zeros(n) if not args.center else _vector(args.center, n, "center"),
             args.radius) if args.bump else _atom(args, n)
    X = np.array([_vector(row, n, "x") for row in args.x.split(";") if row.strip()])
    results = apply_Tr_many(params, f, X, args.tol, method=args.method)
    rep = Report("apply")
    for i, (x, res) in enumerate(zip(X, results)):
        rep.add(seed=args.seed, case=i, quantity="T_r", value=res.value,
                error=res.error_estimate, flag=res.flagged,
                params={"family": cfg.family, "r": str(cfg.r), "x": x})
        print(f"T_r f({', '.join(repr(float(v)) for v in x)}) = {res.value!r}"
              f"  (error {res.error_estimate:.2e}{', FLAGGED' if res.flagged else ''})")
    rep.checks["no_flagged_quadrature"] = not any(r.flagged for r in results)
    return _emit(rep, args.output)


def _cmd_norms(args) -> int:
    cfg = _config(args)
    params = KernelParams(cfg.family_spec(), cfg.r)
    a = _atom(args, params.n)
    est = lq_norm_Tr_atom(params, a, args.q, tol=args.tol)
    rep = Report("norms")
    pr = {"family": cfg.family, "r": str(cfg.r), "p": str(a.spec.p), "q": est.q,
          "delta": a.radius, "center": a.center}
    for name in ("near_value", "tail_bound", "total_upper"):
        rep.add(seed=args.seed, case=0, quantity=name, value=getattr(est, name),
                error=est.tol * getattr(est, name), flag=est.flagged, params=pr)
    rep.summary.update({"q": est.q, "near_value": est.near_value, "tail_bound": est.tail_bound,
                        "total_upper": est.total_upper, "achieved_tol": est.tol,
                        "R_max": est.R_max, "C_fit": est.C_fit, "N": est.N})
    rep.checks["finite"] = bool(np.isfinite(est.total_upper))
    rep.checks["not_flagged"] = not est.flagged
    return _emit(rep, args.output)


def _cmd_experiment(args) -> int:
    cfg = _config(args)
    run = {"uniform": uniform_atom_experiment, "scaling": scaling_exponent_experiment,
           "far-decay": far_decay_experiment}[args.suite]
    return _emit(run(cfg), cfg.output)


def _cmd_reproduce(args) -> int:
    return _emit(reproduce_example(), args.output)


_COMMANDS = {"check": _cmd_check, "normalize": _cmd_normalize, "atom": _cmd_atom,
             "apply": _cmd_apply, "norms": _cmd_norms, "experiment": _cmd_experiment,
             "reproduce-example": _cmd_reproduce}


def run_cli(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FamilyError, AtomError, UnsupportedParameters, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
