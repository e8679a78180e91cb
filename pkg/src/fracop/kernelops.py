"""Pointwise machinery for the product kernel

    k(x, y) = prod_i |x - A_i y| ** e_i,    e_i = -n_i (1 - r),

built on an admissible family ``A_1..A_m`` (see :mod:`fracop.exactlin`):
evaluation, y-derivatives through jet arithmetic, Taylor polynomials, the
geometric constant ``D``, near/far region labels and the far-field remainder
bound.  Block and matrix indices are 0-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from math import gamma, pi

import numpy as np

from .exactlin import (FamilySpec, Normalization, block_slices, build_normalization,
                       canonical_projection)
from .jets import Jet, quadratic_jet

N_MAX = 3
"""Largest derivative order supported by :func:`kernel_derivatives`."""


class KernelSingularity(ArithmeticError):
    """Evaluation point lies on a singular set ``{x = A_i y}``."""

    def __init__(self, factor: int, message: str | None = None):
        self.factor = factor
        super().__init__(message or f"x lies on the singular set of factor {factor}")


class RegionError(ValueError):
    """A far-field formula was used outside its region of validity."""


def _exact(r) -> Fraction:
    if isinstance(r, Fraction):
        return r
    if isinstance(r, str):
        return Fraction(r)
    if isinstance(r, int):
        return Fraction(r)
    return Fraction(r).limit_denominator(10 ** 9)


@dataclass(frozen=True, eq=False)
class KernelParams:
    """Family plus order ``r``; ``alpha_i = r n_i`` and ``e_i = alpha_i - n_i``.

    With ``beta_i = n_i - alpha_i`` the kernel is the product kernel of
    exponents ``beta_i`` whose sum is ``n - n r``, i.e. a fractional operator
    of total order ``beta = n r``.
    """

    spec: FamilySpec
    r: float
    mats: np.ndarray = field(init=False, repr=False)
    r_exact: Fraction = field(init=False, repr=False)

    def __post_init__(self):
        r_exact = _exact(self.r)
        if not 0 < r_exact < 1:
            raise ValueError(f"r must lie in (0, 1), got {self.r}")
        object.__setattr__(self, "r_exact", r_exact)
        object.__setattr__(self, "r", float(r_exact))
        mats = self.spec.to_numpy()
        mats.setflags(write=False)
        object.__setattr__(self, "mats", mats)

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def m(self) -> int:
        return self.spec.m

    @property
    def partition(self) -> tuple[int, ...]:
        return self.spec.partition

    @property
    def alphas(self) -> np.ndarray:
        return self.r * np.array(self.partition, dtype=float)

    @property
    def exponents(self) -> np.ndarray:
        return np.array([float(e) for e in self.exponents_exact])

    @property
    def exponents_exact(self) -> tuple[Fraction, ...]:
        return tuple(-nj * (1 - self.r_exact) for nj in self.partition)

    @property
    def betas_exact(self) -> tuple[Fraction, ...]:
        return tuple(nj - self.r_exact * nj for nj in self.partition)

    @property
    def beta_total_exact(self) -> Fraction:
        return self.n * self.r_exact

    @property
    def homogeneity(self) -> float:
        """Degree of the kernel: ``k(tx, ty) = t**homogeneity k(x, y)``."""
        return -self.n * (1.0 - self.r)

    @cached_property
    def normalization(self) -> Normalization:
        return build_normalization(self.spec)

    @cached_property
    def conj_mats(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Float copies of ``C``, ``B`` and ``B^{-1}``."""
        nm = self.normalization
        return nm.C.to_numpy(), nm.B.to_numpy(), nm.B_inv.to_numpy()

    def is_canonical(self) -> bool:
        return all(A == canonical_projection(self.partition, j)
                   for j, A in enumerate(self.spec.matrices))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def factor_distances(params: KernelParams, x, Y) -> np.ndarray:
    """``|x - A_i y|`` for every factor; shape ``(m, *Y.shape[:-1])``."""
    x = np.asarray(x, dtype=float)
    Y = np.asarray(Y, dtype=float)
    AY = np.einsum("ikl,...l->i...k", params.mats, Y)
    return np.linalg.norm(x - AY, axis=-1)


def kernel_values(params: KernelParams, x, Y) -> np.ndarray:
    """Vectorized kernel at one ``x`` and points ``Y``; ``inf`` on singular sets."""
    d = factor_distances(params, x, Y)
    e = params.exponents.reshape((-1,) + (1,) * (d.ndim - 1))
    with np.errstate(divide="ignore"):
        return np.prod(d ** e, axis=0)


def kernel_eval(params: KernelParams, x, y) -> float:
    """``k(x, y)``; raises :class:`KernelSingularity` if ``x = A_i y`` for some i."""
    d = factor_distances(params, x, y)
    for i, di in enumerate(d):
        if di == 0.0:
            raise KernelSingularity(i)
    return float(np.prod(d ** params.exponents))


def tensor_kernel(params: KernelParams, x, y) -> float:
    """Blockwise Riesz product ``prod_j |x^j - y^j| ** e_j``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    val = 1.0
    for j, sl in enumerate(block_slices(params.partition)):
        dj = np.linalg.norm(x[sl] - y[sl])
        if dj == 0.0:
            raise KernelSingularity(j, f"x and y agree on block {j}")
        val *= dj ** params.exponents[j]
    return float(val)


# ---------------------------------------------------------------------------
# derivatives and Taylor polynomials
# ---------------------------------------------------------------------------

def kernel_jet(params: KernelParams, x, z, order: int) -> Jet:
    """Jet of ``h -> k(x, z + h)`` at ``h = 0``; ``x``, ``z`` may carry a batch axis."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    x, z = np.broadcast_arrays(x, z)
    batch = x.shape[:-1]
    n = params.n
    result = Jet.constant(n, order, np.ones(batch))
    for i, A in enumerate(params.mats):
        v = x - z @ A.T                      # x - A z
        c = np.sum(v * v, axis=-1)
        if np.any(c == 0.0):
            raise KernelSingularity(i)
        lin = np.moveaxis(-2.0 * (v @ A), -1, 0)
        S = quadratic_jet(order, c, lin, A.T @ A)
        result = result * S.power(params.exponents[i] / 2.0)
    return result


def kernel_derivatives(params: KernelParams, x, z, order: int) -> Jet:
    """All y-derivatives of ``k(x, .)`` up to total ``order`` at ``y = z``.

    Use ``jet.derivative(beta)`` for ``d^beta k(x, z)``.
    """
    if not 0 <= order <= N_MAX:
        raise ValueError(f"derivative order must be in [0, {N_MAX}], got {order}")
    return kernel_jet(params, x, z, order)


def taylor_eval(params: KernelParams, x, z, y, degree: int) -> np.ndarray | float:
    """Degree-``degree`` Taylor polynomial of ``y -> k(x, y)`` about ``z``, at ``y``."""
    if not 0 <= degree <= N_MAX:
        raise ValueError(f"Taylor degree must be in [0, {N_MAX}], got {degree}")
    jet = kernel_jet(params, x, z, degree)
    h = np.moveaxis(np.asarray(y, dtype=float) - np.asarray(z, dtype=float), -1, 0)
    val = jet.evaluate(h)
    return float(val) if np.ndim(val) == 0 else val


def remainder_rhs(params: KernelParams, x, z, y, N: int, k_star: int,
                  delta: float | None = None, D: float | None = None) -> float:
    """``|y - z|**N * |x - A_k z| ** (-n(1-r) - N)`` with ``k = k_star``.

    When ``delta`` is given the far-field precondition is enforced: ``y`` in
    ``B(z, delta)`` and ``x`` labelled ``FAR(k_star)``.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    if delta is not None:
        geom = AtomGeometry(z, delta, estimate_D(params) if D is None else D)
        if np.linalg.norm(y - z) > delta:
            raise RegionError("y is outside the atom ball")
        label = classify_region(geom, params, x)
        if label != RegionLabel("FAR", k_star):
            raise RegionError(f"x is labelled {label}, not FAR({k_star})")
    s = params.n * (1.0 - params.r) + N
    dist = np.linalg.norm(x - params.mats[k_star] @ z)
    return float(np.linalg.norm(y - z) ** N * dist ** (-s))


def far_exponent_exact(params: KernelParams, N: int) -> Fraction:
    """Exponent of the far-field bound, ``sum_i e_i - N = -n(1-r) - N``."""
    return sum(params.exponents_exact) - N


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def _mats_of(obj) -> np.ndarray:
    if isinstance(obj, KernelParams):
        return obj.mats
    if isinstance(obj, FamilySpec):
        return obj.to_numpy()
    return np.asarray(obj, dtype=float)


def power_iteration_norm(A: np.ndarray, iters: int = 500, seed: int = 0) -> float:
    """Largest singular value via power iteration on the Gram matrix ``A^T A``."""
    G = A.T @ A
    v = np.random.default_rng(seed).standard_normal(G.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new = float(v @ G @ v)
        if abs(new - lam) <= 1e-15 * max(new, 1e-300):
            lam = new
            break
        lam = new
    return float(np.sqrt(lam))


def estimate_D(family, *, cross_check: bool = True) -> float:
    """``max_i max_{|y|=1} |A_i y|`` as a certified (slightly inflated) upper bound.

    The dense singular value computation is cross-checked against power
    iteration; disagreement beyond 1e-6 relative raises ``RuntimeError``.
    """
    mats = _mats_of(family)
    svd = max(float(np.linalg.norm(A, 2)) for A in mats)
    if cross_check:
        pit = max(power_iteration_norm(A) for A in mats)
        if abs(pit - svd) > 1e-6 * svd:
            raise RuntimeError(f"singular value oracles disagree: svd={svd}, power={pit}")
    return svd * (1.0 + 1e-12)


def lower_frame_constant(M: np.ndarray) -> float:
    """Largest ``c`` with ``c |x| <= |M x|``: the smallest singular value (diagnostic)."""
    return float(np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)[-1])


@dataclass(frozen=True, eq=False)
class AtomGeometry:
    """Atom ball ``B(z, delta)`` with the family constant ``D``."""

    center: np.ndarray
    radius: float
    D: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def inflation(self) -> float:
        return 4.0 * self.D * self.radius

    def image_centers(self, params: KernelParams) -> np.ndarray:
        """``A_i z`` for every factor, shape ``(m, n)``."""
        return params.mats @ self.center


@dataclass(frozen=True)
class RegionLabel:
    tag: str      # "NEAR" or "FAR"
    index: int

    def __str__(self):
        return f"{self.tag}({self.index})"


def classify_regions(geom: AtomGeometry, params: KernelParams, X) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized labels: boolean ``near`` array and the block index array."""
    X = np.asarray(X, dtype=float)
    c = geom.image_centers(params)
    d = np.linalg.norm(X[..., None, :] - c, axis=-1)       # (..., m)
    inside = d < geom.inflation
    near = inside.any(axis=-1)
    first_inside = np.argmax(inside, axis=-1)
    closest = np.argmin(d, axis=-1)                        # ties -> smallest index
    return near, np.where(near, first_inside, closest)


def classify_region(geom: AtomGeometry, params: KernelParams, x) -> RegionLabel:
    """``NEAR(i)`` if x lies in the open ball ``B(A_i z, 4 D delta)`` (smallest such i),
    otherwise ``FAR(k)`` with ``k`` the closest image centre (smallest index on ties)."""
    near, idx = classify_regions(geom, params, x)
    return RegionLabel("NEAR" if bool(near) else "FAR", int(idx))


def comparability_ratios(geom: AtomGeometry, params: KernelParams, x, xi) -> np.ndarray:
    """``|x - A_i xi| / |x - A_i z|`` for each factor."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    num = np.linalg.norm(x - params.mats @ xi, axis=-1)
    den = np.linalg.norm(x - params.mats @ geom.center, axis=-1)
    return num / den


def geometric_comparability_check(geom: AtomGeometry, params: KernelParams, x, xi) -> bool:
    """True iff ``|x - A_i xi| >= (3/4)|x - A_i z|`` for all i.

    Always true for far points ``x`` and ``xi`` in the atom ball; a ``False``
    means the geometry is wrong somewhere.
    """
    return bool(np.all(comparability_ratios(geom, params, x, xi) >= 0.75))


def tensor_domination_check(params: KernelParams, x, y) -> bool:
    """``k(x, y) <= prod_j |x^j - y^j|**e_j`` for a canonical-projection family.

    Uses a 1e-14 relative slack for rounding in the equality case.
    """
    if not params.is_canonical():
        raise ValueError("tensor domination needs the canonical projection family")
    lhs = kernel_eval(params, x, y)
    rhs = tensor_kernel(params, x, y)
    return lhs <= rhs * (1.0 + 1e-14)


# ---------------------------------------------------------------------------
# far-field remainder constant
# ---------------------------------------------------------------------------

def sample_far_configurations(params: KernelParams, count: int, rng: np.random.Generator,
                              D: float | None = None, max_ratio: float = 8.0):
    """Random ``(x, z, delta, y, k)`` with ``y`` in ``B(z, delta)`` and ``x`` labelled FAR(k).

    ``x`` is placed at distance ``4 D delta * s`` from a random image centre,
    ``s`` log-uniform in ``[1, max_ratio]``, and kept only if it is far from
    every image centre.
    """
    n, m = params.n, params.m
    D = estimate_D(params) if D is None else D
    xs, zs, ds, ys, ks = [], [], [], [], []
    while len(xs) < count:
        z = rng.standard_normal(n)
        delta = float(np.exp(rng.uniform(np.log(0.05), np.log(2.0))))
        u = rng.standard_normal(n)
        y = z + delta * rng.uniform() ** (1.0 / n) * u / np.linalg.norm(u)
        i = rng.integers(m)
        w = rng.standard_normal(n)
        rho = 4.0 * D * delta * np.exp(rng.uniform(0.0, np.log(max_ratio)))
        x = params.mats[i] @ z + rho * w / np.linalg.norm(w)
        geom = AtomGeometry(z, delta, D)
        label = classify_region(geom, params, x)
        if label.tag != "FAR":
            continue
        xs.append(x); zs.append(z); ds.append(delta); ys.append(y); ks.append(label.index)
    return np.array(xs), np.array(zs), np.array(ds), np.array(ys), np.array(ks)


def remainder_ratios(params: KernelParams, N: int, xs, zs, ys, ks) -> np.ndarray:
    """``|k(x,y) - q_N(x,y)| / remainder_rhs`` for a batch of far configurations."""
    jet = kernel_jet(params, xs, zs, max(N - 1, 0))
    h = (ys - zs).T
    q = jet.evaluate(h, degree=N - 1) if N >= 1 else np.zeros(len(xs))
    k = np.array([kernel_eval(params, x, y) for x, y in zip(xs, ys)])
    s = params.n * (1.0 - params.r) + N
    centers = np.einsum("bkl,bl->bk", params.mats[ks], zs)
    rhs = np.linalg.norm(ys - zs, axis=1) ** N * np.linalg.norm(xs - centers, axis=1) ** (-s)
    return np.abs(k - q) / rhs


@dataclass(frozen=True)
class RemainderFit:
    C: float
    max_ratio: float
    samples: int
    N: int


def fit_remainder_constant(params: KernelParams, N: int, samples: int = 500, seed: int = 0,
                           margin: float = 2.0) -> RemainderFit:
    """Empirical constant in ``|k - q_N| <= C |y-z|^N |x - A_k z|^(-n(1-r)-N)``.

    ``C`` is ``margin`` times the largest ratio seen on ``samples`` random far
    configurations.
    """
    rng = np.random.default_rng(seed)
    xs, zs, _, ys, ks = sample_far_configurations(params, samples, rng)
    ratios = remainder_ratios(params, N, xs, zs, ys, ks)
    mx = float(ratios.max())
    return RemainderFit(C=margin * mx, max_ratio=mx, samples=samples, N=N)


def validate_remainder_constant(params: KernelParams, fit: RemainderFit, samples: int = 500,
                                seed: int = 1) -> int:
    """Number of violations of the fitted bound on fresh samples."""
    rng = np.random.default_rng(seed)
    xs, zs, _, ys, ks = sample_far_configurations(params, samples, rng)
    ratios = remainder_ratios(params, fit.N, xs, zs, ys, ks)
    return int(np.sum(ratios > fit.C))


def unit_sphere_area(n: int) -> float:
    """Surface measure of the unit sphere in R^n."""
    return 2.0 * pi ** (n / 2.0) / gamma(n / 2.0)
