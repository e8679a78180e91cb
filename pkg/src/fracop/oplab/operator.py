"""Evaluation of ``T_r f(x) = int k(x, y) f(y) dy`` and of ``||T_r f||_q``.

Two quadrature paths are available.  The *normalized* path substitutes
``y = C w`` with the normalizing matrices of the family, which turns every
factor into ``|x - B P_j w|^(e_j)``: all singular sets become coordinate
aligned, so the integrator can split the mesh at them and use power-law
rules.  The *direct* path integrates in ``y`` with the raw singular sets
``{A_j y = x}``; for a tilted ``C`` the support becomes a thin ellipsoid
in ``w``, where the direct path is cheaper and more reliable unless a
singular set actually crosses the support.  The default ``"auto"`` method
picks per target.

Targets far from every image ``A_i z`` of the support ball use a fixed
polar product rule instead: there the integrand is smooth, and the rule
integrates the low-order Taylor part of the kernel exactly, so the
cancellation coming from vanishing moments is preserved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import pi
from typing import Callable

import numpy as np

from ..atoms import Atom
from ..exactlin import Normalization, block_slices
from ..kernelops import (N_MAX, KernelParams, RemainderFit, estimate_D,
                         fit_remainder_constant, unit_sphere_area)
from ..quadrature import (AffineSet, Box, QuadResult, adaptive_integrate,
                          adaptive_integrate_many, ball_rule)

__all__ = [
    "Bump",
    "Pullback",
    "NormEstimate",
    "UnsupportedParameters",
    "apply_Tr",
    "apply_Tr_many",
    "conjugated_apply",
    "far_field_values",
    "lq_norm",
    "lq_norm_Tr_atom",
    "remainder_fit",
]

FAR_KAPPA = 1.5
FAR_ORDER = 24
INNER_ORDER = 9
INNER_CANCEL = 0.1
# initial pieces per axis when the support is a tilted ellipsoid in its bounding box;
# coarser meshes can miss a sliver of the support in every rule node and stop early
TILTED_SPLIT = 8
# a singular set closer than this many |A_j| delta to the support counts as crossing it
SINGULAR_ETA = 0.05
# per-target evaluation budget; three-dimensional singular targets need a few million
MAX_EVALS = 4_000_000


class UnsupportedParameters(ValueError):
    """The far-field tail integral diverges for the requested exponents."""


@dataclass(frozen=True, eq=False)
class Bump:
    """``amplitude * (1 - |y - c|^2 / rho^2)^6`` on ``B(c, rho)``, zero outside."""

    center: np.ndarray
    radius: float
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))

    @property
    def n(self) -> int:
        return self.center.size

    def __call__(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        s = 1.0 - np.sum((np.atleast_2d(Y) - self.center) ** 2, axis=1) / self.radius ** 2
        out = self.amplitude * np.clip(s, 0.0, None) ** 6
        return out[0] if Y.ndim == 1 else out

    def support_box(self) -> Box:
        return Box.around(self.center, self.radius)


@dataclass(frozen=True, eq=False)
class Pullback:
    """``f_M(y) = f(M^{-1} y)`` for an invertible matrix ``M``."""

    f: Callable
    M: np.ndarray
    M_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "M_inv", np.linalg.inv(M))

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def __call__(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        return self.f(Y @ self.M_inv.T)

    def support_box(self) -> Box:
        return _mapped_box(self.f, self.M)


def _mapped_box(f, M: np.ndarray) -> Box:
    """Bounding box of ``M (supp f)``: exact for balls, parallelepiped bound otherwise."""
    if hasattr(f, "center") and hasattr(f, "radius"):
        c = M @ np.asarray(f.center, dtype=float)
        return Box.around(c, f.radius * np.linalg.norm(M, axis=1))
    box = f.support_box()
    c = 0.5 * (box.lower + box.upper)
    h = 0.5 * (box.upper - box.lower)
    return Box.around(M @ c, np.abs(M) @ h)


def _is_ball_supported(f) -> bool:
    return hasattr(f, "center") and hasattr(f, "radius")


@lru_cache(maxsize=None)
def _c_inverse(params: KernelParams) -> np.ndarray:
    return params.normalization.C.inverse().to_numpy()


@lru_cache(maxsize=None)
def _tilted(params: KernelParams) -> bool:
    C = params.conj_mats[0]
    return bool(np.count_nonzero(C) > params.n)


@lru_cache(maxsize=None)
def _block_sets(params: KernelParams):
    """Template singular sets ``{w : B P_j w = x}`` (right-hand side filled per target)."""
    B = params.conj_mats[1]
    n = params.n
    out = []
    for j, sl in enumerate(block_slices(params.partition)):
        A = np.zeros((n, n))
        A[:, sl] = B[:, sl]
        out.append(AffineSet(A, np.zeros(n), float(params.exponents[j])))
    return out


@lru_cache(maxsize=None)
def _direct_sets(params: KernelParams):
    n = params.n
    return [AffineSet(A, np.zeros(n), float(e)) for A, e in zip(params.mats, params.exponents)]


def _normalized_integrals(params: KernelParams, h: Callable, box_w: Box, targets: np.ndarray,
                          tol: float, **kwargs) -> list[QuadResult]:
    """``|det C| int prod_j |x - B P_j w|^(e_j) h(w) dw`` for each target ``x``."""
    B = params.conj_mats[1]
    slices = block_slices(params.partition)
    Bblocks = [B[:, sl] for sl in slices]
    e = params.exponents
    det = abs(float(params.normalization.det_C))
    templates = _block_sets(params)
    sets = [[S.with_rhs(x) for S in templates] for x in targets]

    def integrand(W, owner):
        out = h(W)
        nz = np.flatnonzero(out)
        if nz.size:
            X = targets[owner[nz]]
            Wn = W[nz]
            fac = np.ones(nz.size)
            with np.errstate(divide="ignore"):
                for j, sl in enumerate(slices):
                    d = np.linalg.norm(X - Wn[:, sl] @ Bblocks[j].T, axis=1)
                    fac *= d ** e[j]
            out[nz] *= fac
        return out

    res = adaptive_integrate_many(integrand, [box_w] * len(targets), tol, sets, **kwargs)
    return [_scaled(r, det) for r in res]


def _scaled(r: QuadResult, c: float) -> QuadResult:
    return QuadResult(r.value * c, r.error_estimate * c, r.cells, r.singular_cells,
                      r.evaluations, r.converged)


def _direct_integrals(params: KernelParams, f: Callable, targets: np.ndarray, tol: float,
                      **kwargs) -> list[QuadResult]:
    box = f.support_box()
    mats = params.mats
    e = params.exponents
    templates = _direct_sets(params)
    sets = [[S.with_rhs(x) for S in templates] for x in targets]

    def integrand(Y, owner):
        out = f(Y)
        nz = np.flatnonzero(out)
        if nz.size:
            X = targets[owner[nz]]
            Yn = Y[nz]
            fac = np.ones(nz.size)
            with np.errstate(divide="ignore"):
                for A, ei in zip(mats, e):
                    fac *= np.linalg.norm(X - Yn @ A.T, axis=1) ** ei
            out[nz] *= fac
        return out

    return adaptive_integrate_many(integrand, [box] * len(targets), tol, sets, **kwargs)


def far_field_values(params: KernelParams, f, X, order: int = FAR_ORDER) -> np.ndarray:
    """``T_r f`` at targets far from every ``A_i B(z, delta)`` by a fixed polar rule."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    nodes, weights = ball_rule(params.n, order, order)
    Y = f.center + f.radius * nodes
    wf = weights * f.radius ** params.n * f(Y)
    keep = wf != 0
    Y, wf = Y[keep], wf[keep]
    AY = np.einsum("ikl,ml->imk", params.mats, Y)          # (m, M, n)
    out = np.empty(X.shape[0])
    step = max(1, 2_000_000 // max(1, Y.shape[0]))
    for a in range(0, X.shape[0], step):
        Xb = X[a:a + step]
        K = np.ones((Xb.shape[0], Y.shape[0]))
        for i, ei in enumerate(params.exponents):
            d = np.linalg.norm(Xb[:, None, :] - AY[i][None, :, :], axis=-1)
            K *= d ** ei
        out[a:a + step] = K @ wf
    return out


def _far_mask(params: KernelParams, f, X: np.ndarray, kappa: float = FAR_KAPPA) -> np.ndarray:
    if not _is_ball_supported(f):
        return np.zeros(X.shape[0], dtype=bool)
    D = _D(params)
    centers = params.mats @ np.asarray(f.center, dtype=float)
    d = np.linalg.norm(X[:, None, :] - centers[None], axis=-1).min(axis=1)
    return d >= kappa * D * f.radius


@lru_cache(maxsize=None)
def _D(params: KernelParams) -> float:
    return estimate_D(params)


def _singular_targets(params: KernelParams, f, X: np.ndarray) -> np.ndarray:
    """Targets where some set ``{A_j y = x}`` (nearly) meets the support ball.

    Such targets need the power-law rules of the normalized path; elsewhere
    the integrand is smooth on the support and the direct path is cheaper.
    """
    if not _is_ball_supported(f):
        return np.ones(X.shape[0], dtype=bool)
    z = np.asarray(f.center, dtype=float)
    delta = float(f.radius)
    out = np.zeros(X.shape[0], dtype=bool)
    for S, A in zip(_direct_sets(params), params.mats):
        scale = SINGULAR_ETA * np.linalg.norm(A, 2) * delta
        for i, x in enumerate(X):
            if not out[i]:
                T = S.with_rhs(x)
                out[i] = T.height <= scale and T.distance(z) <= delta
    return out


def apply_Tr_many(params: KernelParams, f, X, tol: float = 1e-8, *, method: str = "auto",
                  far_rule: bool = True, cancel_floor: float = 1e-6,
                  **kwargs) -> list[QuadResult]:
    """``T_r f`` at every row of ``X``.

    ``method`` is ``"normalized"`` (integrate in ``w = C^{-1} y``),
    ``"direct"`` or ``"auto"``.  ``"auto"`` uses the normalized path when
    ``C`` is diagonal; otherwise only at targets whose singular sets cross
    the support, and the direct path elsewhere.  With ``far_rule``, targets
    at distance at least ``FAR_KAPPA * D * delta`` from every image centre
    use :func:`far_field_values` (ball-supported ``f`` only); those results
    report zero error and one cell.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != params.n:
        raise ValueError(f"targets must have {params.n} coordinates")
    if method not in ("auto", "normalized", "direct"):
        raise ValueError(f"unknown method {method!r}")
    kwargs.setdefault("max_evals", MAX_EVALS)
    results: list[QuadResult | None] = [None] * X.shape[0]
    far = _far_mask(params, f, X) if far_rule else np.zeros(X.shape[0], dtype=bool)
    if far.any():
        vals = far_field_values(params, f, X[far])
        for i, v in zip(np.flatnonzero(far), vals):
            results[i] = QuadResult(float(v), 0.0, 1, 0, 0, True)
    near = np.flatnonzero(~far)
    if method == "auto":
        use_norm = np.ones(X.shape[0], dtype=bool)
        if _tilted(params):
            use_norm = _singular_targets(params, f, X)
    else:
        use_norm = np.full(X.shape[0], method == "normalized")
    groups = [(near[use_norm[near]], True), (near[~use_norm[near]], False)]
    for idx, normalized in groups:
        if not idx.size:
            continue
        if normalized:
            Cinv = _c_inverse(params)
            C = params.conj_mats[0]
            box_w = _mapped_box(f, Cinv)
            kw = dict(kwargs)
            if "breakpoints" not in kw and _tilted(params):
                kw["breakpoints"] = [list(np.linspace(lo, hi, TILTED_SPLIT + 1)[1:-1])
                                     for lo, hi in zip(box_w.lower, box_w.upper)]
            res = _normalized_integrals(params, lambda W: f(W @ C.T), box_w, X[idx], tol,
                                        cancel_floor=cancel_floor, **kw)
        else:
            res = _direct_integrals(params, f, X[idx], tol, cancel_floor=cancel_floor, **kwargs)
        for i, r in zip(idx, res):
            results[i] = r
    return results


def apply_Tr(params: KernelParams, f, x, tol: float = 1e-8, **kwargs) -> QuadResult:
    """``T_r f(x)``; check ``result.flagged`` for an exhausted budget."""
    return apply_Tr_many(params, f, np.atleast_2d(np.asarray(x, dtype=float)), tol, **kwargs)[0]


def conjugated_apply(params: KernelParams, norm: Normalization, f, x, tol: float = 1e-8,
                     **kwargs) -> tuple[QuadResult, QuadResult]:
    """Both sides of the normalization identity at ``x``.

    First: ``|det C| int prod_j |B (x - P_j w)|^(e_j) f(w) dw``, integrated
    in normalized coordinates.  Second: ``T_r`` applied to
    ``f_C = f o C^{-1}`` and evaluated at ``B x``, integrated directly in
    ``y``.  The two must agree.
    """
    C = norm.C.to_numpy()
    B = norm.B.to_numpy()
    x = np.asarray(x, dtype=float)
    det = abs(float(norm.det_C))
    slices = block_slices(params.partition)
    n = params.n
    Bx = B @ x

    sets = []
    for j, sl in enumerate(slices):
        A = np.zeros((n, n))
        A[:, sl] = B[:, sl]
        sets.append(AffineSet(A, Bx, float(params.exponents[j])))
    e = params.exponents

    def lhs_integrand(W):
        out = f(W)
        with np.errstate(divide="ignore"):
            for j, sl in enumerate(slices):
                Pw = np.zeros_like(W)
                Pw[:, sl] = W[:, sl]
                out = out * np.linalg.norm((x - Pw) @ B.T, axis=1) ** e[j]
        return out

    box = f.support_box() if not _is_ball_supported(f) else Box.around(f.center, f.radius)
    first = _scaled(adaptive_integrate(lhs_integrand, box, tol, sets, **kwargs), det)
    second = _direct_integrals(params, Pullback(f, C), Bx[None, :], tol, **kwargs)[0]
    return first, second


# ---------------------------------------------------------------------------
# L^q norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormEstimate:
    """``||T_r f||_q`` split into a quadrature part and an analytic tail bound."""

    q: float
    near_value: float
    tail_bound: float
    total_upper: float
    tol: float
    flagged: bool = False
    R_max: float = float("nan")
    C_fit: float = float("nan")
    N: int = 0
    evaluations: int = 0

    def __post_init__(self):
        if min(self.near_value, self.tail_bound) < 0:
            raise ValueError("norm parts must be nonnegative")


@lru_cache(maxsize=None)
def remainder_fit(params: KernelParams, N: int) -> RemainderFit:
    """Cached far-field remainder constant for ``params`` and order ``N``."""
    return fit_remainder_constant(params, N)


def _weighted_moment(f, N: int) -> float:
    """``int |y - z|^N |f(y)| dy`` by a high-order rule on the support ball."""
    n = f.center.size
    X, W = ball_rule(n, 40, 40)
    Y = f.center + f.radius * X
    return float(np.sum(W * f.radius ** n * (f.radius * np.linalg.norm(X, axis=1)) ** N
                        * np.abs(f(Y))))


def _polar_map(U: np.ndarray, n: int):
    from ..quadrature import _spherical_map
    return _spherical_map(U, n)


def _range_angles(params: KernelParams) -> list[float]:
    """Polar angles of one-dimensional ranges of the ``A_i`` (plane only)."""
    if params.n != 2:
        return []
    out = set()
    for A in params.mats:
        u, s, _ = np.linalg.svd(A)
        if s[1] <= 1e-12 * s[0]:
            th = float(np.arctan2(u[1, 0], u[0, 0])) % (2 * pi)
            out.add(th)
            out.add((th + pi) % (2 * pi))
    return sorted(out)


def lq_norm(params: KernelParams, f, q: float, tol: float = 1e-4, *, N: int | None = None,
            inner_tol: float | None = None, max_evals: int = 10 ** 6) -> NormEstimate:
    """Upper estimate of ``||T_r f||_q`` for ``f`` supported in ``B(z, delta)``.

    The quadrature part integrates ``|T_r f|^q`` over ``B(0, R_max)`` with
    ``R_max = max(8 D delta + max_i |A_i z|, 2)``, in polar coordinates with
    dyadic radial breakpoints.  Beyond ``R_max`` the far-field remainder
    bound with the fitted constant gives

        tail^q = (C M_N)^q |S^(n-1)| sum_k rho_k^(n - s q) / (s q - n),

    ``s = n(1-r) + N``, ``rho_k = R_max - |A_k z|`` and
    ``M_N = int |y - z|^N |f(y)| dy``.  ``N`` defaults to the moment order of
    an atom (0 for other functions).
    """
    if N is None:
        N = f.spec.N if isinstance(f, Atom) and f.projected else 0
    n = params.n
    s = n * (1.0 - params.r) + N
    if N > N_MAX:
        raise UnsupportedParameters(f"moment order N={N} exceeds the supported maximum {N_MAX}")
    if not q * s > n:
        raise UnsupportedParameters(
            f"tail integral diverges: q (n(1-r) + N) = {q * s:.6g} <= n = {n}")
    z = np.asarray(f.center, dtype=float)
    delta = float(f.radius)
    D = _D(params)
    images = np.linalg.norm(params.mats @ z, axis=1)
    R = max(8.0 * D * delta + float(images.max()), 2.0)

    inner_tol = tol * 0.3 if inner_tol is None else inner_tol
    flags = []
    evals = [0]

    def integrand(U):
        X, jac = _polar_map(U, n)
        res = apply_Tr_many(params, f, X, inner_tol, cancel_floor=INNER_CANCEL,
                            order=INNER_ORDER)
        flags.extend(r.flagged for r in res)
        evals[0] += sum(r.evaluations for r in res)
        vals = np.array([r.value for r in res])
        return np.abs(vals) ** q * jac

    radial = []
    rho = R / 2.0
    while rho > delta / 8.0:
        radial.append(rho)
        rho /= 2.0
    lower = np.zeros(n)
    upper = np.array([R] + [pi] * (n - 2) + [2 * pi])
    breaks = [radial] + [None] * (n - 2) + [_range_angles(params) or None]
    res = adaptive_integrate(integrand, Box(lower, upper), tol, breakpoints=breaks,
                             max_evals=max_evals)
    near_q = max(res.value, 0.0)

    fit = remainder_fit(params, N)
    M = _weighted_moment(f, N)
    rhos = R - images
    tail_q = (fit.C * M) ** q * unit_sphere_area(n) * float(np.sum(rhos ** (n - s * q))) \
        / (s * q - n)
    near = near_q ** (1.0 / q)
    tail = tail_q ** (1.0 / q)
    total = (near_q + tail_q) ** (1.0 / q)
    achieved = res.error_estimate / near_q if near_q > 0 else float("inf")
    return NormEstimate(q=q, near_value=near, tail_bound=tail, total_upper=total,
                        tol=achieved, flagged=res.flagged or any(flags), R_max=R,
                        C_fit=fit.C, N=N, evaluations=evals[0] + res.evaluations)


def lq_norm_Tr_atom(params: KernelParams, a: Atom, q: float | None = None,
                    tol: float = 1e-4, **kwargs) -> NormEstimate:
    """``||T_r a||_q`` for a p-atom; ``q`` defaults to ``1 / (1/p - r)``."""
    if q is None:
        inv = 1 / a.spec.p - params.r_exact
        if inv <= 0:
            raise UnsupportedParameters(f"need p < 1/r, got p={a.spec.p}, r={params.r_exact}")
        q = float(1 / inv)
    return lq_norm(params, a, q, tol, **kwargs)
