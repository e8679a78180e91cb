"""Verification experiments and their reports.

Every experiment returns a :class:`Report`: one :class:`Record` per
(case, quantity) carrying the seed and parameters needed to replay it, a
summary dictionary and named pass/fail checks.  Reports serialize to CSV
with the columns ``experiment, seed, case, quantity, <params...>, value,
error, flag``; float formatting is ``repr``, so identical inputs give
identical bytes.

Independent cases can run on a thread pool (``FRACOP_THREADS``); records
are always assembled in case order.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from math import isfinite
from typing import Callable, Sequence

import numpy as np
from scipy.stats import linregress

from ..atoms import (Atom, AtomSpec, build_atom, dilate_atom, lp_norm, moment_check,
                     moment_scale)
from ..exactlin import (RationalMatrix, build_normalization, intersect, null_space,
                        verify_projections, worked_example_family)
from ..jets import multi_indices
from ..kernelops import KernelParams, estimate_D
from .config import ExperimentConfig
from .operator import Bump, apply_Tr, apply_Tr_many, lq_norm_Tr_atom

__all__ = [
    "Record",
    "Report",
    "thread_count",
    "uniform_atom_experiment",
    "scaling_exponent_experiment",
    "dilation_norms",
    "stretch_slope",
    "perturbed_ratio_slope",
    "stretch",
    "suite_atoms",
    "far_decay_experiment",
    "reproduce_example",
    "atom_checks",
    "WORKED_EXAMPLE_EXPECTED",
]


def thread_count() -> int:
    """Worker count from ``FRACOP_THREADS`` (default 1, the reference setting)."""
    raw = os.environ.get("FRACOP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _ordered_map(fn: Callable, items: Sequence) -> list:
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class Record:
    experiment: str
    seed: int
    case: int
    quantity: str
    value: float
    error: float = 0.0
    flag: bool = False
    params: dict = field(default_factory=dict)


@dataclass
class Report:
    """Per-case records plus summary statistics and named checks."""

    experiment: str
    records: list[Record] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(self.checks.values())

    def add(self, **kw) -> None:
        self.records.append(Record(experiment=self.experiment, **kw))

    def values(self, quantity: str) -> np.ndarray:
        return np.array([r.value for r in self.records if r.quantity == quantity])

    def param_columns(self) -> list[str]:
        cols: list[str] = []
        for r in self.records:
            for k in r.params:
                if k not in cols:
                    cols.append(k)
        return cols

    def to_csv(self, path=None) -> str:
        """CSV text (also written to ``path`` when given)."""
        cols = self.param_columns()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["experiment", "seed", "case", "quantity", *cols, "value", "error", "flag"])
        for r in self.records:
            w.writerow([r.experiment, r.seed, r.case, r.quantity,
                        *(_fmt(r.params.get(c, "")) for c in cols),
                        _fmt(r.value), _fmt(r.error), int(bool(r.flag))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def summary_text(self) -> str:
        lines = [f"experiment: {self.experiment}"]
        lines += [f"  {k} = {_fmt(v)}" for k, v in self.summary.items()]
        lines += [f"  [{'PASS' if ok else 'FAIL'}] {k}" for k, ok in self.checks.items()]
        lines += [f"  note: {s}" for s in self.notes]
        lines.append(f"result: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _kernel_params(cfg: ExperimentConfig) -> KernelParams:
    return KernelParams(cfg.family_spec(), cfg.r)


def _case_params(cfg: ExperimentConfig, **extra) -> dict:
    base = {"family": cfg.family, "n": cfg.n, "r": str(cfg.r)}
    if cfg.family == "random":
        base["family_seed"] = cfg.family_seed
    base.update(extra)
    return base


# ---------------------------------------------------------------------------
# single atom checks
# ---------------------------------------------------------------------------

MOMENT_RTOL = 1e-10


def atom_checks(a: Atom, samples: int = 100_000, seed: int = 0) -> Report:
    """Moment and size conditions of one atom.

    Moments of order below ``N`` are checked about the origin and about the
    centre against ``MOMENT_RTOL * moment_scale``; the sup bound is checked
    against the certificate and on ``samples`` random points of the ball.
    """
    rep = Report("atom")
    n = a.n
    rec = {"n": n, "p": str(a.spec.p), "delta": a.radius, "center": a.center,
           "atom_seed": a.spec.seed, "projected": a.projected}
    worst = 0.0
    case = 0
    for label, about in (("origin", None), ("center", a.center)):
        for beta in multi_indices(n, a.spec.moment_order):
            m = moment_check(a, beta, about)
            sc = moment_scale(a, beta, about)
            worst = max(worst, float(abs(m) / sc))
            rep.add(seed=seed, case=case, quantity=f"moment_{label}_{''.join(map(str, beta))}",
                    value=m, error=MOMENT_RTOL * sc, flag=abs(m) > MOMENT_RTOL * sc, params=rec)
            case += 1
    rng = np.random.default_rng([seed, a.spec.seed, 17])
    U = rng.standard_normal((samples, n))
    U *= (rng.uniform(size=samples) ** (1.0 / n) / np.linalg.norm(U, axis=1))[:, None]
    vals = np.abs(a(a.center + a.radius * U))
    limit = a.spec.sup_limit
    exceed = int(np.sum(vals > limit))
    rep.add(seed=seed, case=case, quantity="sampled_sup", value=float(vals.max()), error=limit,
            flag=exceed > 0, params=rec)
    rep.add(seed=seed, case=case + 1, quantity="certified_sup", value=a.sup_bound, error=limit,
            flag=a.sup_bound > limit, params=rec)
    rep.summary.update({"N": a.spec.N, "worst_relative_moment": worst,
                        "sampled_sup_over_limit": float(vals.max()) / limit,
                        "certified_sup_over_limit": a.sup_bound / limit,
                        "sup_exceedances": exceed})
    rep.checks["moments_vanish"] = worst <= MOMENT_RTOL
    rep.checks["sup_certificate"] = a.sup_bound <= limit
    rep.checks["sup_samples"] = exceed == 0
    return rep


# ---------------------------------------------------------------------------
# uniform estimate over an atom suite
# ---------------------------------------------------------------------------

RADIUS_EXPONENTS = tuple(range(-4, 3))


def suite_atoms(cfg: ExperimentConfig, p: Fraction) -> list[Atom]:
    """``cfg.atoms`` p-atoms cycling through radii ``2^-4 .. 2^2``.

    Centres are ``delta * u`` with ``u`` uniform in the unit ball, drawn from
    ``cfg.seed``; the first atom of each radius cycle is origin centred.
    """
    rng = np.random.default_rng([cfg.seed, 7919])
    out = []
    for i in range(cfg.atoms):
        delta = 2.0 ** RADIUS_EXPONENTS[i % len(RADIUS_EXPONENTS)]
        u = rng.standard_normal(cfg.n)
        u *= rng.uniform() ** (1.0 / cfg.n) / np.linalg.norm(u)
        if i < len(RADIUS_EXPONENTS):
            u = np.zeros(cfg.n)
        out.append(build_atom(AtomSpec(cfg.n, p, tuple(delta * u), delta,
                                       seed=cfg.seed * 1000 + i)))
    return out


def uniform_atom_experiment(cfg: ExperimentConfig) -> Report:
    """``||T_r a||_q`` over a suite of atoms; pass iff max/min < ``cfg.threshold``.

    Flagged quadratures mark their record and are kept in the statistics.
    """
    params = _kernel_params(cfg)
    rep = Report("uniform")
    for p in cfg.p:
        q = cfg.q_for(p)
        atoms = suite_atoms(cfg, p)
        ests = _ordered_map(lambda a: lq_norm_Tr_atom(params, a, float(q), tol=cfg.tol), atoms)
        for i, (a, est) in enumerate(zip(atoms, ests)):
            pr = _case_params(cfg, p=str(p), q=str(q), delta=a.radius,
                              center=a.center, atom_seed=a.spec.seed)
            rep.add(seed=cfg.seed, case=i, quantity="norm_total_upper", value=est.total_upper,
                    error=est.tol * est.total_upper, flag=est.flagged, params=pr)
            rep.add(seed=cfg.seed, case=i, quantity="norm_near", value=est.near_value,
                    error=est.tol * est.near_value, flag=est.flagged, params=pr)
            rep.add(seed=cfg.seed, case=i, quantity="tail_bound", value=est.tail_bound,
                    flag=est.flagged, params=pr)
        vals = np.array([e.total_upper for e in ests])
        ratio = float(vals.max() / vals.min())
        tag = f"p={p}"
        rep.summary[f"max[{tag}]"] = float(vals.max())
        rep.summary[f"min[{tag}]"] = float(vals.min())
        rep.summary[f"ratio[{tag}]"] = ratio
        rep.summary[f"flagged[{tag}]"] = int(sum(e.flagged for e in ests))
        rep.checks[f"ratio_below_threshold[{tag}]"] = ratio < cfg.threshold
    return rep


# ---------------------------------------------------------------------------
# dilation structure
# ---------------------------------------------------------------------------

def stretch(a: Atom, t: float) -> Atom:
    """``f_t(y) = a(t y)`` for an origin-centred atom (no L^p renormalization)."""
    at = dilate_atom(a, t)
    if at is a:
        return a
    return Atom(at.spec, a.coefficients, a.scale, a.sup_bound, a.projected)


def _fit(ts: Sequence[float], vals: Sequence[float]):
    return linregress(np.log(np.asarray(ts, dtype=float)), np.log(np.asarray(vals)))


def dilation_norms(params: KernelParams, a: Atom, q: float, ts: Sequence[float],
                   tol: float = 1e-3) -> list:
    """NormEstimates of ``T_r a_t`` for ``a_t = t^(n/p) a(t .)``; constant in ``t`` at critical ``q``."""
    return _ordered_map(lambda t: lq_norm_Tr_atom(params, dilate_atom(a, t), q, tol=tol), ts)


def stretch_slope(params: KernelParams, a: Atom, q: float, ts: Sequence[float],
                  tol: float = 1e-3):
    """Fit of ``log ||T_r f_t||_q`` against ``log t`` for ``f_t = a(t .)``; returns (fit, estimates)."""
    ests = _ordered_map(lambda t: lq_norm_Tr_atom(params, stretch(a, t), q, tol=tol), ts)
    return _fit(ts, [e.total_upper for e in ests]), ests


def perturbed_ratio_slope(params: KernelParams, a: Atom, q: float, ts: Sequence[float],
                          tol: float = 1e-3):
    """Fit of ``log(||T_r a_t||_q / ||a_t||_p)`` against ``log t``; returns (fit, ratios, estimates).

    The slope is ``n (1/p - r - 1/q)``, zero only at the critical exponent.
    """
    p = float(a.spec.p)
    ests = dilation_norms(params, a, q, ts, tol)
    ratios = [e.total_upper / lp_norm(dilate_atom(a, t), p) for e, t in zip(ests, ts)]
    return _fit(ts, ratios), ratios, ests


def scaling_exponent_experiment(cfg: ExperimentConfig, *, delta: float = 1.0) -> Report:
    """Dilation behaviour of ``||T_r .||_q`` for one origin-centred atom per ``p``.

    Three runs share the dilation set ``cfg.dilations``:

    * ``||T_r a_t||_q`` for ``a_t = t^(n/p) a(t .)`` must be constant (2%),
    * the log-log slope of ``||T_r f_t||_q`` with ``f_t = a(t .)`` must be
      ``-(n r + n/q)`` (1% relative),
    * when ``cfg.q_perturbed`` is set, the slope of
      ``||T_r a_t||_q' / ||a_t||_p`` must differ from zero by more than five
      standard errors of the fit.
    """
    params = _kernel_params(cfg)
    n, r = cfg.n, cfg.r
    ts = [float(t) for t in cfg.dilations]
    rep = Report("scaling")
    for p in cfg.p:
        q = cfg.q_for(p)
        tag = f"p={p}"
        a = build_atom(AtomSpec(n, p, (0.0,) * n, delta, seed=cfg.seed))
        inv = dilation_norms(params, a, float(q), ts, cfg.tol)
        fit, st = stretch_slope(params, a, float(q), ts, cfg.tol)
        for i, (t, e1, e2) in enumerate(zip(ts, inv, st)):
            pr = _case_params(cfg, p=str(p), q=str(q), t=t, delta=delta)
            rep.add(seed=cfg.seed, case=i, quantity="norm_dilated_atom", value=e1.total_upper,
                    error=e1.tol * e1.total_upper, flag=e1.flagged, params=pr)
            rep.add(seed=cfg.seed, case=i, quantity="norm_stretched", value=e2.total_upper,
                    error=e2.tol * e2.total_upper, flag=e2.flagged, params=pr)
        v = np.array([e.total_upper for e in inv])
        spread = float(v.max() / v.min() - 1.0)
        expected = -(n * float(r) + n / float(q))
        rep.add(seed=cfg.seed, case=len(ts), quantity="slope", value=fit.slope,
                error=fit.stderr, flag=any(e.flagged for e in st),
                params=_case_params(cfg, p=str(p), q=str(q), expected=expected))
        rep.summary[f"dilation_spread[{tag}]"] = spread
        rep.summary[f"slope[{tag}]"] = float(fit.slope)
        rep.summary[f"expected_slope[{tag}]"] = expected
        rep.checks[f"dilation_invariance_2pct[{tag}]"] = spread < 0.02
        rep.checks[f"slope_within_1pct[{tag}]"] = abs(fit.slope - expected) < 0.01 * abs(expected)

        if cfg.q_perturbed is not None:
            qp = float(cfg.q_perturbed)
            fit2, ratios, est = perturbed_ratio_slope(params, a, qp, ts, cfg.tol)
            drift = n * (1 / float(p) - float(r) - 1 / qp)
            for i, (t, e, rt) in enumerate(zip(ts, est, ratios)):
                rep.add(seed=cfg.seed, case=i, quantity="ratio_perturbed_q", value=rt,
                        error=e.tol * rt, flag=e.flagged,
                        params=_case_params(cfg, p=str(p), q=qp, t=t, delta=delta))
            rep.add(seed=cfg.seed, case=len(ts), quantity="slope_perturbed_q", value=fit2.slope,
                    error=fit2.stderr, flag=any(e.flagged for e in est),
                    params=_case_params(cfg, p=str(p), q=qp, expected=drift))
            rep.summary[f"perturbed_slope[{tag}]"] = float(fit2.slope)
            rep.summary[f"perturbed_slope_stderr[{tag}]"] = float(fit2.stderr)
            rep.summary[f"predicted_drift[{tag}]"] = drift
            rep.checks[f"perturbed_q_drift_detected[{tag}]"] = \
                abs(fit2.slope) > 5.0 * float(fit2.stderr)
    return rep


# ---------------------------------------------------------------------------
# far-field decay and the moment condition
# ---------------------------------------------------------------------------

def far_decay_slope(params: KernelParams, f, direction, radii) -> tuple[float, float, np.ndarray]:
    """Log-log slope of ``|T_r f(R u)|`` over ``R`` in ``radii``: (slope, stderr, values)."""
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    X = np.outer(np.asarray(radii, dtype=float), u)
    vals = np.array([abs(res.value) for res in apply_Tr_many(params, f, X)])
    fit = _fit(radii, vals)
    return float(fit.slope), float(fit.stderr), vals


def far_decay_experiment(cfg: ExperimentConfig, *, radii: Sequence[float] | None = None,
                         direction: Sequence[float] | None = None) -> Report:
    """Far-field decay of ``T_r a`` with and without the moment projection.

    At ``p = 1`` an atom has zero mean and ``T_r a`` decays like
    ``|x|^(-n(1-r)-1)``; the unprojected profile only reaches
    ``|x|^(-n(1-r))``.  Pass iff the fitted slopes differ by more than 0.5
    and each lies within 0.25 of its prediction.
    """
    params = _kernel_params(cfg)
    n, r = cfg.n, float(cfg.r)
    D = estimate_D(params)
    if radii is None:
        radii = np.geomspace(16.0 * D, 256.0 * D, 9)
    if direction is None:
        rng = np.random.default_rng([cfg.seed, 31])
        direction = np.abs(rng.standard_normal(n)) + 0.5
    spec = AtomSpec(n, Fraction(1), (0.0,) * n, 1.0, seed=cfg.seed)
    rep = Report("far_decay")
    expect = {"projected": -n * (1 - r) - 1, "unprojected": -n * (1 - r)}
    slopes = {}
    for i, (label, enforce) in enumerate((("projected", True), ("unprojected", False))):
        a = build_atom(spec, enforce_moments=enforce)
        slope, se, vals = far_decay_slope(params, a, direction, radii)
        slopes[label] = slope
        for k, (R, v) in enumerate(zip(radii, vals)):
            rep.add(seed=cfg.seed, case=i, quantity=f"abs_T_{label}", value=float(v),
                    params=_case_params(cfg, p="1", R=float(R)))
        rep.add(seed=cfg.seed, case=i, quantity=f"slope_{label}", value=slope, error=se,
                params=_case_params(cfg, p="1", expected=expect[label]))
        rep.summary[f"slope_{label}"] = slope
        rep.checks[f"slope_{label}_near_prediction"] = abs(slope - expect[label]) < 0.25
    sep = slopes["unprojected"] - slopes["projected"]
    rep.summary["separation"] = sep
    rep.checks["separation_above_half"] = sep > 0.5
    return rep


# ---------------------------------------------------------------------------
# worked 3x3 example
# ---------------------------------------------------------------------------

def _m(rows) -> RationalMatrix:
    return RationalMatrix.from_rows([[Fraction(v) for v in row] for row in rows])


WORKED_EXAMPLE_EXPECTED = {
    "sum": _m([[6, 3, -2], [-5, 2, 3], [-5, -4, 2]]),
    "null_spaces": (((1, 0, 4), (0, 1, 4)), ((1, 1, 0), (0, 0, 1)), ((1, 0, 1), (0, 1, 0))),
    "intersections": {(1, 2): ((1, 1, 8),), (1, 3): ((4, -3, 4),), (2, 3): ((1, 1, 1),)},
    "C": _m([[1, 4, 1], [1, -3, 1], [1, 4, 8]]),
    "B": _m([[7, 7, -7], [0, -14, 21], [-7, 0, 7]]),
    "B_inv": _m([["2/21", "1/21", "-1/21"], ["1/7", 0, "1/7"], ["2/21", "1/21", "2/21"]]),
    "projections": (_m([[1, 0, 0], [0, 0, 0], [0, 0, 0]]),
                    _m([[0, 0, 0], [0, 1, 0], [0, 0, 0]]),
                    _m([[0, 0, 0], [0, 0, 0], [0, 0, 1]])),
}


def _first_difference(name: str, got: RationalMatrix, want: RationalMatrix) -> str | None:
    if got.shape != want.shape:
        return f"{name}: shape {got.shape} != {want.shape}"
    for i in range(want.rows):
        for j in range(want.cols):
            if got[i, j] != want[i, j]:
                return f"{name}[{i},{j}] = {got[i, j]} != {want[i, j]}"
    return None


def _basis_difference(name: str, got, want) -> str | None:
    got = tuple(tuple(v) for v in got)
    want = tuple(tuple(Fraction(x) for x in v) for v in want)
    if len(got) != len(want):
        return f"{name}: {len(got)} basis vectors != {len(want)}"
    for k, (g, w) in enumerate(zip(got, want)):
        if g != w:
            return f"{name} basis vector {k}: {tuple(map(str, g))} != {tuple(map(str, w))}"
    return None


def reproduce_example(tol: float = 1e-6) -> Report:
    """Exact reproduction of the built-in 3x3 family, then a smoke ``T_r`` at ``r = 1/2``.

    Every comparison is exact; the first differing entry of each quantity is
    stored in the report notes.
    """
    spec = worked_example_family()
    E = WORKED_EXAMPLE_EXPECTED
    rep = Report("reproduce_example")
    diffs: dict[str, str | None] = {}

    diffs["sum"] = _first_difference("A1+A2+A3", spec.matrix_sum(), E["sum"])
    for j, (A, want) in enumerate(zip(spec.matrices, E["null_spaces"])):
        diffs[f"null_space[N{j + 1}]"] = _basis_difference(f"N{j + 1}", null_space(A).basis, want)
    N = [null_space(A) for A in spec.matrices]
    for (i, j), want in E["intersections"].items():
        got = intersect(N[i - 1], N[j - 1]).basis
        diffs[f"intersection[N{i}nN{j}]"] = _basis_difference(f"N{i}nN{j}", got, want)
    norm = build_normalization(spec)
    diffs["C"] = _first_difference("C", norm.C, E["C"])
    diffs["B"] = _first_difference("B", norm.B, E["B"])
    diffs["B_inv"] = _first_difference("B^-1", norm.B_inv, E["B_inv"])
    for j, want in enumerate(E["projections"]):
        diffs[f"projection[P{j + 1}]"] = _first_difference(f"B^-1 A{j + 1} C",
                                                           norm.projections[j], want)
    diffs["verify_projections"] = None if verify_projections(norm, spec) else \
        "verify_projections returned False"

    for case, (name, d) in enumerate(diffs.items()):
        rep.checks[name] = d is None
        rep.add(seed=0, case=case, quantity=name, value=0.0 if d is None else 1.0,
                flag=d is not None, params={"family": "worked-example"})
        if d is not None:
            rep.notes.append(d)

    params = KernelParams(spec, Fraction(1, 2))
    f = Bump(np.zeros(3), 0.5)
    x = np.array([0.3, -0.2, 0.45])
    res = apply_Tr(params, f, x, tol)
    ok = isfinite(res.value) and res.value > 0 and not res.flagged
    rep.add(seed=0, case=len(diffs), quantity="smoke_apply_Tr", value=res.value,
            error=res.error_estimate, flag=res.flagged,
            params={"family": "worked-example", "r": "1/2", "x": x})
    rep.checks["smoke_apply_positive_finite"] = ok
    rep.summary["smoke_apply_Tr"] = res.value
    rep.summary["conclusion"] = ("T_r maps H^p(R^3) boundedly into L^q(R^3) "
                                 "for 0 < p < 1/r with 1/q = 1/p - r")
    return rep
