"""Adaptive cubature for integrands with power-law singularities on affine sets.

The engine works on boxes.  Every cell carries a tensor Gauss-Legendre rule;
its error is estimated by re-integrating the two halves obtained by bisecting
along each coordinate, and the cell is split along the direction where that
comparison disagrees most.  This anisotropic splitting grades the mesh toward
hyperplane singularities in logarithmically many steps.

Singular sets are described as ``{y : A y = rhs}``.  Sets whose normal space
is spanned by coordinate axes are *aligned*: the initial mesh is split at
them, so singular points never coincide with quadrature nodes, and a cell
having a face on an exactly singular codimension-one set integrates that
direction with a Gauss-Jacobi rule carrying the power-law weight.

:func:`adaptive_integrate_many` refines many independent integrals in one
batched loop ("owners"); the integrand then receives the owner index of each
node.  Accumulation order is fixed, so results are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import pi
from typing import Callable, Sequence

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

__all__ = [
    "Box",
    "AffineSet",
    "QuadResult",
    "QuadratureError",
    "adaptive_integrate",
    "adaptive_integrate_many",
    "integrate_ball",
    "ball_rule",
    "BlockKernel",
    "riesz_kernel",
    "riesz_block_apply",
    "tensor_apply",
]

DEFAULT_MAX_EVALS = 10 ** 6
MAX_DIM = 4
_CHUNK = 400_000


class QuadratureError(RuntimeError):
    """Tolerance not reached within the evaluation budget."""

    def __init__(self, result: "QuadResult"):
        self.result = result
        super().__init__(f"quadrature not converged: value={result.value:.6g}, "
                         f"error estimate={result.error_estimate:.3g}, cells={result.cells}")


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box corners must be 1-d arrays of equal length")
        if not np.all(lo < hi):
            raise ValueError(f"degenerate box: lower={lo}, upper={hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def around(cls, center, halfwidths) -> "Box":
        c = np.asarray(center, dtype=float)
        h = np.broadcast_to(np.asarray(halfwidths, dtype=float), c.shape)
        return cls(c - h, c + h)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))


@dataclass(frozen=True, eq=False)
class AffineSet:
    """``{y : A y = rhs}`` near which the integrand behaves like ``dist ** power``.

    If ``rhs`` is not in the range of ``A`` the set is empty and the integrand
    is only nearly singular along the least-squares set; ``height`` is the
    residual ``|rhs - A A^+ rhs|``.
    """

    A: np.ndarray
    rhs: np.ndarray
    power: float | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        rhs = np.atleast_1d(np.asarray(self.rhs, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "rhs", rhs)
        pinv = np.linalg.pinv(A)
        proj = pinv @ A
        object.__setattr__(self, "_pinv", pinv)
        object.__setattr__(self, "_proj", proj)
        object.__setattr__(self, "_base", pinv @ rhs)
        object.__setattr__(self, "_axes", self._aligned_axes(proj))

    @staticmethod
    def _aligned_axes(P: np.ndarray):
        diag = np.diag(P)
        if not np.allclose(P, np.diag(diag), atol=1e-12):
            return None
        if not np.all((np.abs(diag) < 1e-12) | (np.abs(diag - 1.0) < 1e-12)):
            return None
        return tuple(int(k) for k in np.flatnonzero(diag > 0.5))

    def with_rhs(self, rhs) -> "AffineSet":
        """Same matrix and power, new right-hand side (reuses the factorization)."""
        out = object.__new__(AffineSet)
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        for name in ("A", "power", "_pinv", "_proj", "_axes"):
            object.__setattr__(out, name, getattr(self, name))
        object.__setattr__(out, "rhs", rhs)
        object.__setattr__(out, "_base", self._pinv @ rhs)
        return out

    @classmethod
    def point(cls, p, power: float | None = None) -> "AffineSet":
        p = np.atleast_1d(np.asarray(p, dtype=float))
        return cls(np.eye(p.size), p, power)

    @classmethod
    def coordinate(cls, dim: int, k: int, value: float, power: float | None = None) -> "AffineSet":
        A = np.zeros((1, dim))
        A[0, k] = 1.0
        return cls(A, [value], power)

    @property
    def height(self) -> float:
        return float(np.linalg.norm(self.rhs - self.A @ self._base))

    def distance(self, Y) -> np.ndarray:
        """Euclidean distance to the least-squares set ``{A y = P rhs}``."""
        Y = np.asarray(Y, dtype=float)
        return np.linalg.norm((Y - self._base) @ self._proj.T, axis=-1)

    def aligned(self) -> dict[int, float] | None:
        """``{coordinate: value}`` if the set fixes exactly some coordinates."""
        if self._axes is None:
            return None
        return {k: float(self._base[k]) for k in self._axes}

    def blur(self, k: int) -> float:
        """Width of the near-singular layer in coordinate ``k`` (aligned codim-1 sets)."""
        col = np.linalg.norm(self.A[:, k])
        return self.height / col if col > 0 else np.inf


@dataclass(frozen=True)
class QuadResult:
    value: float
    error_estimate: float
    cells: int
    singular_cells: int = 0
    evaluations: int = 0
    converged: bool = True

    @property
    def flagged(self) -> bool:
        return not self.converged


# ---------------------------------------------------------------------------
# 1-d reference rules on [0, 1]
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _gauss_legendre01(g: int):
    x, w = roots_legendre(g)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=None)
def _jacobi_left01(g: int, p: float):
    """Rule for ``int_0^1 f`` where ``f ~ t**p`` at ``t = 0``; weights absorb ``t**-p``."""
    x, w = roots_jacobi(g, 0.0, p)
    t = (x + 1.0) / 2.0
    return t, w * 2.0 ** (-(1.0 + p)) * t ** (-p)


class _RuleTable:
    """1-d rules indexed by small integer type codes.

    Codes ``0 .. T-1`` are order-``g`` rules (Gauss-Legendre, then left/right
    Gauss-Jacobi per power); codes ``T .. 2T-1`` are the same rules at the
    higher order ``g_hi``.  Lower-order rules are padded with zero weights.
    """

    def __init__(self, g: int, g_hi: int, powers: Sequence[float]):
        self.g, self.g_hi = g, g_hi
        self.left, self.right = {}, {}
        ps = sorted(set(powers))
        for i, p in enumerate(ps):
            self.left[p] = 1 + 2 * i
            self.right[p] = 2 + 2 * i
        self.T = 1 + 2 * len(ps)
        nodes = np.full((2 * self.T, g_hi), 0.5)
        weights = np.zeros((2 * self.T, g_hi))
        for base, order in ((0, g), (self.T, g_hi)):
            t, w = _gauss_legendre01(order)
            nodes[base, :order], weights[base, :order] = t, w
            for p in ps:
                t, w = _jacobi_left01(order, p)
                nodes[base + self.left[p], :order] = t
                weights[base + self.left[p], :order] = w
                nodes[base + self.right[p], :order] = 1.0 - t[::-1]
                weights[base + self.right[p], :order] = w[::-1]
        self.nodes = nodes
        self.weights = weights


# ---------------------------------------------------------------------------
# batched engine
# ---------------------------------------------------------------------------

class _Owners:
    """Per-owner singular data flattened into arrays for vectorized typing."""

    def __init__(self, singular_sets: Sequence[Sequence[AffineSet]], dim: int):
        self.sets = [list(s) for s in singular_sets]
        self.breaks: list[list[list[float]]] = []
        jac: list[list[tuple[int, float, float]]] = []
        powers = []
        for sets in self.sets:
            br = [[] for _ in range(dim)]
            merged: dict[tuple[int, float], float] = {}
            for S in sets:
                al = S.aligned()
                if al is None:
                    continue
                for k, v in al.items():
                    br[k].append(v)
                if len(al) == 1 and S.power is not None and S.height == 0.0:
                    (k, v), = al.items()
                    merged[(k, v)] = merged.get((k, v), 0.0) + S.power
            self.breaks.append(br)
            entries = [(k, v, p) for (k, v), p in merged.items() if p > -1.0 and p != 0.0]
            jac.append(entries)
            powers.extend(p for _, _, p in entries)
        self.powers = powers
        S = max((len(j) for j in jac), default=0)
        O = len(self.sets)
        self.jk = np.full((O, S), -1, dtype=int)
        self.jv = np.zeros((O, S))
        self.jp = np.zeros((O, S))
        for o, entries in enumerate(jac):
            for s, (k, v, p) in enumerate(entries):
                self.jk[o, s], self.jv[o, s], self.jp[o, s] = k, v, p

    def types(self, lo, hi, owner, table: _RuleTable) -> np.ndarray:
        M, d = lo.shape
        types = np.zeros((M, d), dtype=int)
        if self.jk.shape[1] == 0:
            return types
        for s in range(self.jk.shape[1]):
            k = self.jk[owner, s]
            v = self.jv[owner, s]
            p = self.jp[owner, s]
            valid = k >= 0
            if not valid.any():
                continue
            kk = np.where(valid, k, 0)
            rows = np.arange(M)
            at_lo = valid & (lo[rows, kk] == v)
            at_hi = valid & (hi[rows, kk] == v)
            for pw in np.unique(p[at_lo | at_hi]):
                sel = at_lo & (p == pw)
                types[rows[sel], kk[sel]] = table.left[float(pw)]
                sel = at_hi & (p == pw)
                types[rows[sel], kk[sel]] = table.right[float(pw)]
        return types


class _Engine:
    def __init__(self, f, dim: int, owners: _Owners, order: int):
        self.f = f
        self.d = dim
        self.owners = owners
        self.g = order
        self.table = _RuleTable(order, order + 4, owners.powers)
        self.idx = np.indices((order,) * dim).reshape(dim, -1).T     # (G, d)
        self.idx_hi = []
        for k in range(dim):
            shape = [order] * dim
            shape[k] = order + 4
            self.idx_hi.append(np.indices(shape).reshape(dim, -1).T)
        self.evals = 0

    def rule(self, lo, hi, owner, types=None, hi_dir: int | None = None):
        """Tensor-rule integral and absolute integral of each box; non-finite flag.

        With ``hi_dir = k`` direction ``k`` uses the higher-order rules.
        """
        M = lo.shape[0]
        if types is None:
            types = self.owners.types(lo, hi, owner, self.table)
        idx = self.idx
        if hi_dir is not None:
            types = types.copy()
            types[:, hi_dir] += self.table.T
            idx = self.idx_hi[hi_dir]
        G = idx.shape[0]
        Q = np.empty(M)
        A = np.empty(M)
        bad = np.zeros(M, dtype=bool)
        step = max(1, _CHUNK // G)
        for a in range(0, M, step):
            b = min(M, a + step)
            l, h, o, ty = lo[a:b], hi[a:b], owner[a:b], types[a:b]
            tn = self.table.nodes[ty[:, None, :], idx[None, :, :]]
            tw = self.table.weights[ty[:, None, :], idx[None, :, :]]
            width = h - l
            Y = l[:, None, :] + width[:, None, :] * tn
            W = np.prod(tw * width[:, None, :], axis=2)
            F = np.asarray(self.f(Y.reshape(-1, self.d), np.repeat(o, G)), dtype=float)
            F = F.reshape(b - a, G)
            fin = np.isfinite(F)
            if not fin.all():
                bad[a:b] = ~fin.all(axis=1)
                F = np.where(fin, F, 0.0)
            Q[a:b] = np.sum(W * F, axis=1)
            A[a:b] = np.sum(np.abs(W * F), axis=1)
            self.evals += (b - a) * G
        return Q, A, bad

    def refine(self, lo, hi, owner):
        """Refined estimates per direction and the half-cell integrals.

        Returns ``(Qref, Aref, Qhalf, bad, L, H)``.  ``Qhalf[:, k]`` holds the
        integrals of the two halves along ``k`` (shape ``(M, d, 2)``) with
        boxes ``L``/``H``; ``Qref[:, k]`` is the refined estimate along ``k``:
        the sum of the halves, or a higher-order rule on the whole cell when
        direction ``k`` carries a power-law rule (a half next to the
        singularity would otherwise be the least accurate piece).
        """
        M, d = lo.shape
        mid = 0.5 * (lo + hi)
        L = np.repeat(lo[:, None, None, :], 2, axis=2).repeat(d, axis=1).copy()
        H = np.repeat(hi[:, None, None, :], 2, axis=2).repeat(d, axis=1).copy()
        for k in range(d):
            H[:, k, 0, k] = mid[:, k]
            L[:, k, 1, k] = mid[:, k]
        Q, A, bad = self.rule(L.reshape(-1, d), H.reshape(-1, d), np.repeat(owner, 2 * d))
        Qhalf = Q.reshape(M, d, 2)
        Ahalf = A.reshape(M, d, 2)
        bad = bad.reshape(M, d, 2).any(axis=(1, 2))
        Qref = Qhalf.sum(axis=2)
        Aref = Ahalf.sum(axis=2)
        types = self.owners.types(lo, hi, owner, self.table)
        for k in range(d):
            sel = np.flatnonzero(types[:, k] != 0)
            if sel.size:
                q, a, b = self.rule(lo[sel], hi[sel], owner[sel], types[sel], hi_dir=k)
                Qref[sel, k] = q
                Aref[sel, k] = a
                bad[sel] |= b
        return Qref, Aref, Qhalf, bad, L, H


def _initial_cells(domains_lo, domains_hi, owners: _Owners, extra_breaks):
    los, his, own = [], [], []
    for o in range(domains_lo.shape[0]):
        lo, hi = domains_lo[o], domains_hi[o]
        axes = []
        for k in range(lo.size):
            pts = {lo[k], hi[k]}
            cand = list(owners.breaks[o][k])
            if extra_breaks is not None and extra_breaks[k] is not None:
                cand += list(extra_breaks[k])
            pts.update(v for v in cand if lo[k] < v < hi[k])
            axes.append(np.array(sorted(pts)))
        grids = np.meshgrid(*[np.arange(a.size - 1) for a in axes], indexing="ij")
        cells = np.stack([g.ravel() for g in grids], axis=1)
        los.append(np.stack([axes[k][cells[:, k]] for k in range(lo.size)], axis=1))
        his.append(np.stack([axes[k][cells[:, k] + 1] for k in range(lo.size)], axis=1))
        own.append(np.full(cells.shape[0], o))
    return np.concatenate(los), np.concatenate(his), np.concatenate(own)


def adaptive_integrate_many(f: Callable[[np.ndarray, np.ndarray], np.ndarray],
                            domains: Sequence[Box],
                            tol: float = 1e-8,
                            singular_sets: Sequence[Sequence[AffineSet]] | None = None,
                            *, atol: float | Sequence[float] = 0.0,
                            max_evals: int = DEFAULT_MAX_EVALS,
                            order: int = 5,
                            breakpoints: Sequence[Sequence[float] | None] | None = None,
                            max_depth: int = 60,
                            cancel_floor: float = 1e-6) -> list[QuadResult]:
    """Integrate one integrand per domain, refining all of them in one batched loop.

    ``f(Y, owner)`` receives nodes ``Y`` of shape ``(M, d)`` and the owner
    index of each node; it returns ``M`` values (``inf``/``nan`` on exact
    singular hits is allowed and forces refinement).  Owner ``o`` stops when
    its error estimate is below ``max(tol * max(|I|, cancel_floor * |I|_abs), atol)``.
    ``max_evals`` is a per-owner budget.
    """
    O = len(domains)
    if O == 0:
        return []
    d = domains[0].dim
    if d > MAX_DIM:
        raise ValueError(f"direct quadrature supports dimension <= {MAX_DIM}, got {d}")
    if any(b.dim != d for b in domains):
        raise ValueError("all domains must have the same dimension")
    if singular_sets is None:
        singular_sets = [[] for _ in range(O)]
    if len(singular_sets) != O:
        raise ValueError("need one list of singular sets per domain")
    atol = np.broadcast_to(np.asarray(atol, dtype=float), (O,))
    dlo = np.stack([b.lower for b in domains])
    dhi = np.stack([b.upper for b in domains])
    min_width = (dhi - dlo) * 2.0 ** (-max_depth)

    owners = _Owners(singular_sets, d)
    eng = _Engine(f, d, owners, order)
    lo, hi, own = _initial_cells(dlo, dhi, owners, breakpoints)
    Qb, _, badb = eng.rule(lo, hi, own)
    budget = max_evals * O

    def analyse(lo, hi, own, Qb, badb):
        Qref, Aref, Qh, badh, L, H = eng.refine(lo, hi, own)
        dif = np.abs(Qref - Qb[:, None])                         # (M, d)
        kbest = np.argmax(dif, axis=1)
        rows = np.arange(lo.shape[0])
        err = dif[rows, kbest]
        absval = Aref[rows, kbest]
        forced = badb | badh
        err = np.where(forced, np.maximum(err, absval), err)
        return dict(lo=lo, hi=hi, own=own, kbest=kbest, err=err, absval=absval, forced=forced,
                    val=Qref[rows, kbest],
                    Q0=Qh[rows, kbest, 0], Q1=Qh[rows, kbest, 1], bad=badh,
                    L0=L[rows, kbest, 0], L1=L[rows, kbest, 1],
                    H0=H[rows, kbest, 0], H1=H[rows, kbest, 1])

    C = analyse(lo, hi, own, Qb, badb)
    done = np.zeros(O, dtype=bool)
    while True:
        own = C["own"]
        err = C["err"]
        V = np.bincount(own, weights=C["val"], minlength=O)
        E = np.bincount(own, weights=err, minlength=O)
        Aabs = np.bincount(own, weights=C["absval"], minlength=O)
        target = np.maximum(tol * np.maximum(np.abs(V), cancel_floor * Aabs), atol)
        done = E <= target
        if done.all() or eng.evals >= budget:
            break

        rows = np.arange(own.size)
        kbest = C["kbest"]
        splittable = (C["hi"] - C["lo"])[rows, kbest] > min_width[own, kbest]
        active = ~done[own] & splittable
        if not active.any():
            break
        # per owner: split the worst cells carrying half of the owner's error
        cand = np.flatnonzero(active)
        cand = cand[np.lexsort((-err[cand], own[cand]))]
        e = err[cand]
        o = own[cand]
        cum = np.cumsum(e)
        start = np.r_[0, np.flatnonzero(np.diff(o)) + 1]
        offsets = np.repeat(cum[start] - e[start], np.diff(np.r_[start, cand.size]))
        before = cum - e - offsets
        Eo = np.bincount(o, weights=e, minlength=O)
        sel = cand[(before < 0.5 * Eo[o]) | C["forced"][cand]]

        keep = np.ones(own.size, dtype=bool)
        keep[sel] = False
        new = analyse(np.concatenate([C["L0"][sel], C["L1"][sel]]),
                      np.concatenate([C["H0"][sel], C["H1"][sel]]),
                      np.concatenate([own[sel], own[sel]]),
                      np.concatenate([C["Q0"][sel], C["Q1"][sel]]),
                      np.concatenate([C["bad"][sel], C["bad"][sel]]))
        merged = {k: np.concatenate([C[k][keep], new[k]]) for k in C}
        # keep cells grouped by owner so accumulation order is deterministic
        perm = np.argsort(merged["own"], kind="stable")
        C = {k: v[perm] for k, v in merged.items()}

    lo, hi, own = C["lo"], C["hi"], C["own"]
    counts = np.bincount(own, minlength=O)
    centers = 0.5 * (lo + hi)
    halfdiag = 0.5 * np.linalg.norm(hi - lo, axis=1)
    results = []
    per_owner_evals = eng.evals // O
    for o in range(O):
        mask = own == o
        sing = 0
        if owners.sets[o]:
            touch = np.zeros(mask.sum(), dtype=bool)
            for S in owners.sets[o]:
                touch |= S.distance(centers[mask]) <= halfdiag[mask]
            sing = int(touch.sum())
        results.append(QuadResult(value=float(V[o]), error_estimate=float(E[o]),
                                  cells=int(counts[o]), singular_cells=sing,
                                  evaluations=per_owner_evals, converged=bool(done[o])))
    return results


def adaptive_integrate(f: Callable[[np.ndarray], np.ndarray], domain: Box, tol: float = 1e-8,
                       singular_sets: Sequence[AffineSet] = (), *, strict: bool = False,
                       **kwargs) -> QuadResult:
    """Integrate a vectorized ``f(Y)`` (``Y`` of shape ``(M, d)``) over a box.

    Returns a :class:`QuadResult`; an unconverged result is flagged
    (``result.flagged``) or raises :class:`QuadratureError` when ``strict``.
    """
    res = adaptive_integrate_many(lambda Y, _o: f(Y), [domain], tol, [list(singular_sets)],
                                  **kwargs)[0]
    if strict and res.flagged:
        raise QuadratureError(res)
    return res


# ---------------------------------------------------------------------------
# balls
# ---------------------------------------------------------------------------

def _spherical_map(U: np.ndarray, n: int):
    """Map ``(rho, phi_1, ..., phi_{n-1})`` to Cartesian points and the Jacobian."""
    rho = U[:, 0]
    X = np.empty((U.shape[0], n))
    s = rho.copy()
    jac = rho ** (n - 1)
    for k in range(n - 1):
        phi = U[:, 1 + k]
        if k < n - 2:
            X[:, k] = s * np.cos(phi)
            jac = jac * np.sin(phi) ** (n - 2 - k)
            s = s * np.sin(phi)
        else:
            X[:, k] = s * np.cos(phi)
            X[:, k + 1] = s * np.sin(phi)
    return X, jac


def _angle_box(n: int, radius: float) -> Box:
    upper = [radius] + [pi] * (n - 2) + [2 * pi]
    return Box(np.zeros(n), np.array(upper))


def integrate_ball(f: Callable[[np.ndarray], np.ndarray], center, radius: float,
                   tol: float = 1e-8, *, center_power: float | None = None,
                   **kwargs) -> QuadResult:
    """Integrate ``f`` over ``B(center, radius)`` in spherical coordinates.

    ``center_power`` declares ``f ~ |y - center|**center_power`` at the centre;
    the Jacobian ``rho**(n-1)`` is folded into the power-law rule.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    n = center.size
    if n == 1:
        sets = [] if center_power is None else [AffineSet.point(center, center_power)]
        return adaptive_integrate(f, Box(center - radius, center + radius), tol, sets, **kwargs)
    box = _angle_box(n, radius)

    def g(U):
        X, jac = _spherical_map(U, n)
        return f(center + X) * jac

    sets = []
    if center_power is not None:
        sets.append(AffineSet.coordinate(n, 0, 0.0, center_power + n - 1))
    return adaptive_integrate(g, box, tol, sets, **kwargs)


@lru_cache(maxsize=None)
def _ball_rule_cached(n: int, radial: int, angular: int):
    xr, wr = roots_jacobi(radial, 0.0, float(n - 1))
    rho = (xr + 1.0) / 2.0
    wrho = wr * 2.0 ** (-float(n))                          # int_0^1 rho^(n-1) g
    if n == 1:
        X = np.concatenate([-rho, rho])[:, None]
        W = np.concatenate([wrho, wrho])
        return X, W
    parts_nodes = [rho]
    parts_w = [wrho]
    for k in range(n - 2):
        # polar angles: weight sin^(n-2-k), integrate in t = cos(phi) with Gegenbauer weight
        a = (n - 3 - k) / 2.0
        xt, wt = roots_jacobi(angular, a, a)
        parts_nodes.append(np.arccos(xt))
        parts_w.append(wt)
    m = 2 * angular
    th = 2 * pi * (np.arange(m) + 0.5) / m
    parts_nodes.append(th)
    parts_w.append(np.full(m, 2 * pi / m))
    grids = np.meshgrid(*parts_nodes, indexing="ij")
    wgrids = np.meshgrid(*parts_w, indexing="ij")
    U = np.stack([g.ravel() for g in grids], axis=1)
    W = np.prod(np.stack([w.ravel() for w in wgrids], axis=1), axis=1)
    X, _ = _spherical_map(U, n)
    X.setflags(write=False)
    W.setflags(write=False)
    return X, W


def ball_rule(n: int, radial: int = 16, angular: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Fixed product rule on the unit ball of R^n: nodes ``(M, n)`` and weights.

    Gauss-Jacobi in the radius (weight ``rho**(n-1)``), Gauss-Gegenbauer in
    the polar angles and the trapezoid rule in the azimuth, so polynomials
    of degree ``< 2*min(radial, angular)`` are integrated exactly.
    """
    return _ball_rule_cached(int(n), int(radial), int(angular))


# ---------------------------------------------------------------------------
# block kernels and iterated application
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BlockKernel:
    """Kernel on ``R^d x R^d``: ``func(x, Y)`` plus an optional singular set builder."""

    dim: int
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    singular: Callable[[np.ndarray], AffineSet | None] | None = None

    def singular_set(self, x) -> list[AffineSet]:
        if self.singular is None:
            return []
        S = self.singular(np.asarray(x, dtype=float))
        return [] if S is None else [S]


def riesz_kernel(alpha: float, d: int) -> BlockKernel:
    """Unnormalized Riesz kernel ``|x - y|**(alpha - d)`` on R^d."""
    if not 0 < alpha < d:
        raise ValueError(f"need 0 < alpha < d, got alpha={alpha}, d={d}")

    def func(x, Y):
        r = np.linalg.norm(Y - x, axis=-1)
        with np.errstate(divide="ignore"):
            return r ** (alpha - d)

    return BlockKernel(d, func, lambda x: AffineSet.point(x, alpha - d))


def _support_box(g) -> Box:
    if hasattr(g, "support_box"):
        return g.support_box()
    c = np.atleast_1d(np.asarray(g.center, dtype=float))
    return Box.around(c, g.radius)


def riesz_block_apply(alpha: float, g, x, tol: float = 1e-8, **kwargs) -> QuadResult:
    """``int |x - y|**(alpha - d) g(y) dy`` for ``g`` supported in ``B(g.center, g.radius)``."""
    box = _support_box(g)
    K = riesz_kernel(alpha, box.dim)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return adaptive_integrate(lambda Y: K.func(x, Y) * g(Y), box, tol, K.singular_set(x), **kwargs)


def tensor_apply(block_kernels: Sequence[BlockKernel], f: Callable[[np.ndarray], np.ndarray],
                 x, support: Box, tol: float = 1e-8, **kwargs) -> QuadResult:
    """Apply ``K_1 (x) ... (x) K_m`` to ``f`` by iterated block integration.

    The last block is integrated innermost; each level integrates the next
    block for the whole batch of outer nodes at once.  ``support`` is a box
    containing the support of ``f`` whose coordinates follow the block order.
    """
    dims = [K.dim for K in block_kernels]
    x = np.asarray(x, dtype=float)
    if sum(dims) != x.size or support.dim != x.size:
        raise ValueError("block dimensions must add up to the ambient dimension")
    offs = np.cumsum([0] + dims)
    inner_tol = tol * 0.1
    flags = []

    def level(j: int, prefix: np.ndarray) -> np.ndarray:
        """Integral over blocks j.. for each row of ``prefix`` (values of blocks < j)."""
        K = block_kernels[j]
        sl = slice(offs[j], offs[j + 1])
        xb = x[sl]
        box = Box(support.lower[sl], support.upper[sl])
        sets = K.singular_set(xb)
        P = prefix.shape[0]

        def integrand(Y, owner):
            head = prefix[owner]
            if j == len(block_kernels) - 1:
                vals = f(np.concatenate([head, Y], axis=1))
            else:
                vals = level(j + 1, np.concatenate([head, Y], axis=1))
            return K.func(xb, Y) * vals

        t = tol if j == 0 else inner_tol
        res = adaptive_integrate_many(integrand, [box] * P, t, [sets] * P, **kwargs)
        flags.extend(r.flagged for r in res)
        return np.array([r.value for r in res])

    if len(block_kernels) == 1:
        return adaptive_integrate(lambda Y: block_kernels[0].func(x, Y) * f(Y), support, tol,
                                  block_kernels[0].singular_set(x), **kwargs)
    top = adaptive_integrate_many(
        lambda Y, owner: block_kernels[0].func(x[offs[0]:offs[1]], Y) * level(1, Y),
        [Box(support.lower[:offs[1]], support.upper[:offs[1]])], tol,
        [block_kernels[0].singular_set(x[offs[0]:offs[1]])], **kwargs)[0]
    return QuadResult(value=top.value, error_estimate=top.error_estimate, cells=top.cells,
                      singular_cells=top.singular_cells, evaluations=top.evaluations,
                      converged=top.converged and not any(flags))
