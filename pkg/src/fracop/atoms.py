"""Smooth p-atoms with certified sup bounds and vanishing moments.

An atom on the ball ``B(z, delta)`` is

    a(y) = s * P(u) * (1 - |u|^2)^6,    u = (y - z) / delta,   |u| < 1,

and zero outside.  ``P`` is a random polynomial of degree ``N + 2`` made
orthogonal to every monomial of degree ``<= N - 1`` for the weight
``(1 - |u|^2)^6`` on the unit ball; that is exactly the vanishing of the
moments of ``a`` up to order ``N - 1 = floor(n (1/p - 1))``.  Ball moments of
monomials have closed forms, so the Gram system is assembled without
quadrature.  The scale ``s`` makes a certified upper bound of ``|a|`` equal
to half of ``|B|^(-1/p)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from math import comb, floor, gamma, pi, sqrt
from typing import Sequence

import numpy as np

from .jets import multi_indices
from .quadrature import ball_rule

__all__ = [
    "AtomSpec",
    "Atom",
    "AtomError",
    "moment_degree",
    "ball_volume",
    "ball_monomial_moment",
    "build_atom",
    "moment_check",
    "moment_scale",
    "dilate_atom",
    "sup_certificate",
    "lp_norm",
]

BUMP_POWER = 6
SUP_SAFETY = 0.5
CERT_GRID_POINTS = 200_000
MAX_RETRIES = 16


class AtomError(ValueError):
    """Invalid atom parameters or an operation outside its domain."""


def _exponent(p) -> Fraction:
    if isinstance(p, Fraction):
        return p
    if isinstance(p, (int, str)):
        return Fraction(p)
    return Fraction(p).limit_denominator(10 ** 9)


def moment_degree(n: int, p) -> int:
    """``floor(n (1/p - 1))``, the largest order of vanishing moments (exact arithmetic)."""
    p = _exponent(p)
    if not 0 < p <= 1:
        raise AtomError(f"p must lie in (0, 1], got {p}")
    return floor(n * (1 / p - 1))


def ball_volume(n: int, radius: float = 1.0) -> float:
    return pi ** (n / 2) / gamma(n / 2 + 1) * radius ** n


@lru_cache(maxsize=None)
def _sphere_moment(beta: tuple[int, ...]) -> float:
    if any(b % 2 for b in beta):
        return 0.0
    num = 2.0
    for b in beta:
        num *= gamma((b + 1) / 2)
    return num / gamma(sum(b + 1 for b in beta) / 2)


def ball_monomial_moment(beta: Sequence[int], bump_power: int = 0) -> float:
    """``int_{|u|<1} u^beta (1 - |u|^2)^k du`` in closed form."""
    beta = tuple(int(b) for b in beta)
    n = len(beta)
    sig = _sphere_moment(beta)
    if sig == 0.0:
        return 0.0
    deg = sum(beta)
    return sig * sum(comb(bump_power, j) * (-1) ** j / (deg + 2 * j + n)
                     for j in range(bump_power + 1))


def _monomials(U: np.ndarray, powers: np.ndarray) -> np.ndarray:
    out = np.ones((U.shape[0], powers.shape[0]))
    for k in range(powers.shape[1]):
        col = U[:, k:k + 1]
        for e in range(1, powers[:, k].max() + 1):
            out[:, powers[:, k] >= e] *= col
    return out


@dataclass(frozen=True)
class AtomSpec:
    n: int
    p: Fraction
    center: tuple[float, ...]
    radius: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "p", _exponent(self.p))
        center = tuple(float(c) for c in np.atleast_1d(self.center))
        object.__setattr__(self, "center", center)
        if len(center) != self.n:
            raise AtomError(f"center has {len(center)} coordinates, expected {self.n}")
        if not self.radius > 0:
            raise AtomError(f"radius must be positive, got {self.radius}")
        moment_degree(self.n, self.p)

    @property
    def moment_order(self) -> int:
        """``N - 1``: moments of order up to this value vanish."""
        return moment_degree(self.n, self.p)

    @property
    def N(self) -> int:
        return self.moment_order + 1

    @property
    def volume(self) -> float:
        return ball_volume(self.n, self.radius)

    @property
    def sup_limit(self) -> float:
        """``|B|^(-1/p)``, the largest sup norm allowed for a p-atom on this ball."""
        return self.volume ** (-1.0 / float(self.p))


@dataclass(frozen=True, eq=False)
class Atom:
    """Evaluable p-atom; ``coefficients`` are those of ``P`` in the monomials ``powers``."""

    spec: AtomSpec
    coefficients: np.ndarray
    scale: float
    sup_bound: float
    projected: bool = True
    powers: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)
        pw = _profile_powers(self.spec.n, self.spec.N)
        if pw.shape[0] != c.size:
            raise AtomError("coefficient count does not match the profile degree")
        object.__setattr__(self, "powers", pw)

    @property
    def center(self) -> np.ndarray:
        return np.array(self.spec.center)

    @property
    def radius(self) -> float:
        return self.spec.radius

    @property
    def n(self) -> int:
        return self.spec.n

    def profile(self, U) -> np.ndarray:
        """Unscaled profile ``P(u) (1 - |u|^2)^k`` on the unit ball, 0 outside."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        s = 1.0 - np.sum(U * U, axis=1)
        vals = _monomials(U, self.powers) @ self.coefficients
        return np.where(s > 0, vals * np.clip(s, 0.0, None) ** BUMP_POWER, 0.0)

    def __call__(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        single = Y.ndim == 1
        U = (np.atleast_2d(Y) - self.center) / self.radius
        out = self.scale * self.profile(U)
        return out[0] if single else out

    def support_box(self):
        from .quadrature import Box
        return Box.around(self.center, self.radius)

    def to_record(self) -> dict:
        """Flat record for reports and config files."""
        rec = {"n": self.n, "p": str(self.spec.p), "radius": repr(float(self.radius)),
               "seed": self.spec.seed, "scale": repr(float(self.scale)),
               "sup_bound": repr(float(self.sup_bound)), "projected": int(self.projected)}
        for k, c in enumerate(self.spec.center):
            rec[f"center{k}"] = repr(float(c))
        for k, c in enumerate(self.coefficients):
            rec[f"coef{k}"] = repr(float(c))
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Atom":
        n = int(rec["n"])
        center = [float(rec[f"center{k}"]) for k in range(n)]
        spec = AtomSpec(n, Fraction(rec["p"]), tuple(center), float(rec["radius"]),
                        int(rec["seed"]))
        ncoef = _profile_powers(n, spec.N).shape[0]
        coef = np.array([float(rec[f"coef{k}"]) for k in range(ncoef)])
        return cls(spec, coef, float(rec["scale"]), float(rec["sup_bound"]),
                   bool(int(rec.get("projected", 1))))


@lru_cache(maxsize=None)
def _profile_powers(n: int, N: int) -> np.ndarray:
    pw = np.array(multi_indices(n, N + 2), dtype=int)
    pw.setflags(write=False)
    return pw


@lru_cache(maxsize=None)
def _gram(n: int, N: int):
    """Weighted moments ``<u^a, u^b>`` between profile monomials and low monomials."""
    high = multi_indices(n, N + 2)
    low = multi_indices(n, N - 1)
    M = np.array([[ball_monomial_moment(tuple(a + b for a, b in zip(x, y)), BUMP_POWER)
                   for y in high] for x in low])
    return M, len(low)


def _project(c: np.ndarray, n: int, N: int) -> np.ndarray:
    """Remove the weighted projection onto monomials of degree ``<= N - 1``."""
    M, k = _gram(n, N)
    G = M[:, :k]
    d = np.linalg.solve(G, M @ c)
    # one refinement step keeps residual moments at rounding level
    out = c.copy()
    out[:k] -= d
    out[:k] -= np.linalg.solve(G, M @ out)
    return out


def _gradient(U: np.ndarray, powers: np.ndarray, coefficients: np.ndarray) -> np.ndarray:
    grads = np.empty_like(U)
    for k in range(U.shape[1]):
        lowered = powers.copy()
        lowered[:, k] = np.maximum(lowered[:, k] - 1, 0)
        grads[:, k] = _monomials(U, lowered) @ (coefficients * powers[:, k])
    return grads


def _bump_bounds(k: int) -> tuple[float, float]:
    """Bounds of ``|grad b|`` and ``|Hess b|`` for ``b(u) = (1 - |u|^2)^k`` on the ball."""
    s = 1.0 / (2 * k - 1)
    grad = 2 * k * sqrt(s) * (1 - s) ** (k - 1)
    t = 1.0 / (k - 1) if k > 2 else 1.0
    hess = 2 * k + 4 * k * (k - 1) * t * (1 - t) ** (k - 2)
    return grad, hess


def sup_certificate(coefficients: np.ndarray, n: int, N: int,
                    grid_points: int = CERT_GRID_POINTS) -> float:
    """Certified upper bound of ``g(u) = |P(u)| (1 - |u|^2)^k`` over the unit ball.

    ``g`` extended by zero is C^2 on R^n.  Every point lies within
    ``rho = h sqrt(n) / 2`` of a node ``v`` of the cubic grid of spacing
    ``h``, so ``|g(u)| <= |g(v)| + |grad g(v)| rho + H rho^2 / 2`` with ``H``
    a bound on the Hessian norm over the ball.
    """
    k = BUMP_POWER
    powers = _profile_powers(n, N)
    per_axis = max(3, int(round(grid_points ** (1.0 / n))))
    axis = np.linspace(-1.0, 1.0, per_axis)
    rho = (axis[1] - axis[0]) * sqrt(n) / 2.0
    grids = np.meshgrid(*([axis] * n), indexing="ij")
    U = np.stack([g.ravel() for g in grids], axis=1)
    s = 1.0 - np.sum(U * U, axis=1)
    inside = s > 0
    U, s = U[inside], s[inside]
    P = _monomials(U, powers) @ coefficients
    dP = _gradient(U, powers, coefficients)
    b = s ** k
    db = -2.0 * k * s[:, None] ** (k - 1) * U
    g = np.abs(P * b)
    dg = np.linalg.norm(dP * b[:, None] + P[:, None] * db, axis=1)
    absc = np.abs(coefficients)
    deg = powers.sum(axis=1).astype(float)
    # on the ball |P| <= sum|c|, |grad P| <= sum|c||a|, |Hess P| <= sum|c||a|^2
    gb, hb = _bump_bounds(k)
    H = float(absc @ deg ** 2) + 2 * gb * float(absc @ deg) + hb * float(absc.sum())
    return float(np.max(g + dg * rho)) + H * rho ** 2 / 2.0


def build_atom(spec: AtomSpec, *, enforce_moments: bool = True) -> Atom:
    """Random smooth p-atom on ``B(spec.center, spec.radius)``, deterministic in ``spec.seed``.

    ``enforce_moments=False`` skips the moment projection and yields a
    bounded bump that is *not* an atom (used as a negative control).
    """
    n, N = spec.n, spec.N
    powers = _profile_powers(n, N)
    for attempt in range(MAX_RETRIES):
        rng = np.random.default_rng([spec.seed, attempt])
        c = rng.standard_normal(powers.shape[0])
        if enforce_moments:
            c = _project(c, n, N)
        if np.max(np.abs(c)) > 1e-8:
            break
    else:
        raise AtomError(f"degenerate profile after {MAX_RETRIES} draws (seed {spec.seed})")
    cert = sup_certificate(c, n, N)
    scale = SUP_SAFETY * spec.sup_limit / cert
    return Atom(spec, c, scale, SUP_SAFETY * spec.sup_limit, projected=enforce_moments)


def _ball_nodes(a: Atom, degree: int):
    order = degree // 2 + 2
    X, W = ball_rule(a.n, order, order)
    return a.center + a.radius * X, W * a.radius ** a.n, X


def moment_check(a: Atom, beta: Sequence[int], about=None) -> float:
    """``int (y - about)^beta a(y) dy`` (``about`` defaults to the origin).

    The integrand is a polynomial on the ball, so the product rule used here
    is exact up to rounding.
    """
    beta = np.asarray(beta, dtype=int)
    if beta.size != a.n or np.any(beta < 0):
        raise AtomError(f"bad multi-index {tuple(beta)}")
    Y, W, X = _ball_nodes(a, a.spec.N + 2 + 2 * BUMP_POWER + int(beta.sum()))
    shift = np.zeros(a.n) if about is None else np.asarray(about, dtype=float)
    mono = np.prod((Y - shift) ** beta, axis=1)
    vals = a.scale * a.profile(X)
    return float(np.sum(W * mono * vals))


def moment_scale(a: Atom, beta: Sequence[int], about=None) -> float:
    """Natural size of a moment: ``sup|a| * delta^n * R^|beta|``.

    ``R`` is the radius for moments about the centre and ``|about - z| +
    delta`` otherwise, so the tolerance stays meaningful under translation.
    """
    shift = np.zeros(a.n) if about is None else np.asarray(about, dtype=float)
    R = np.linalg.norm(a.center - shift) + a.radius
    return a.sup_bound * a.radius ** a.n * R ** int(np.sum(beta))


def dilate_atom(a: Atom, t: float) -> Atom:
    """``a_t(y) = t^(n/p) a(t y)`` for an origin-centred atom; radius becomes ``delta / t``."""
    if not t > 0:
        raise AtomError(f"dilation factor must be positive, got {t}")
    if np.any(a.center != 0):
        raise AtomError("dilation is defined about the origin only; atom is not centred there")
    if t == 1:
        return a
    factor = t ** (a.n / float(a.spec.p))
    spec = replace(a.spec, radius=a.radius / t)
    return Atom(spec, a.coefficients, a.scale * factor, a.sup_bound * factor, a.projected)


def lp_norm(a: Atom, p0: float, order: int = 40) -> float:
    """``||a||_{p0}`` by a high-order product rule on the support ball."""
    Y, W, X = _ball_nodes(a, 2 * order)
    vals = np.abs(a.scale * a.profile(X))
    return float(np.sum(W * vals ** p0) ** (1.0 / p0))
