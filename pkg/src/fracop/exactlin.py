"""Exact rational linear algebra for singular matrix families.

Everything here works on :class:`fractions.Fraction` entries; no floating point
is involved, so ranks, null spaces and the normalizing matrices ``B`` and ``C``
come out bit-exact.

A *family* is a list of ``n x n`` matrices ``A_1, ..., A_m`` together with a
partition ``n = n_1 + ... + n_m``.  It is admissible when

* ``rank(A_j) = n_j``,
* ``A_1 + ... + A_m`` is invertible,
* the subspaces ``W_k = intersection of ker(A_j) over j != k`` form a direct
  sum equal to the whole space.

For an admissible family, stacking bases of ``W_1, ..., W_m`` as the columns
of ``C`` and putting ``B = (A_1 + ... + A_m) C`` gives ``B^{-1} A_j C = P_j``,
the coordinate projection onto block ``j``.

Matrix text format: rows separated by ``;``, entries by ``,``; each entry an
integer or a ``p/q`` fraction, e.g. ``"4,4,-1; 0,0,0; -4,-4,1"``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd, lcm
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "FamilyError",
    "NormalizationError",
    "RationalMatrix",
    "Subspace",
    "FamilySpec",
    "Normalization",
    "CheckResult",
    "ValidationReport",
    "as_fraction",
    "parse_matrix",
    "rank",
    "null_space",
    "intersect",
    "block_slices",
    "canonical_projection",
    "canonical_family",
    "worked_example_family",
    "family_from_factors",
    "random_family",
    "validate_family",
    "build_normalization",
    "verify_projections",
]


class FamilyError(ValueError):
    """The matrix family does not satisfy the admissibility hypotheses."""


class NormalizationError(ValueError):
    """A user-supplied basis choice cannot produce a normalization."""


Vector = tuple[Fraction, ...]


def as_fraction(value) -> Fraction:
    """Convert ints, Fractions, ``"p/q"`` / decimal strings to a Fraction.

    Floats are converted exactly (binary value), so pass strings when a
    decimal such as ``0.1`` is meant literally.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, str):
        text = value.strip()
        if not text:
            raise ValueError("empty matrix entry")
        try:
            return Fraction(text)
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"bad rational entry {value!r}") from exc
    if isinstance(value, (float, np.floating)):
        return Fraction(float(value))
    raise TypeError(f"cannot convert {type(value).__name__} to Fraction")


def _primitive(vec: Sequence[Fraction]) -> Vector:
    """Scale to a primitive integer vector with positive leading entry."""
    den = 1
    for v in vec:
        den = lcm(den, v.denominator)
    ints = [int(v * den) for v in vec]
    g = 0
    for v in ints:
        g = gcd(g, v)
    if g == 0:
        return tuple(Fraction(0) for _ in vec)
    lead = next(v for v in ints if v != 0)
    if lead < 0:
        g = -g
    return tuple(Fraction(v // g) for v in ints)


# ---------------------------------------------------------------------------
# elimination kernels
# ---------------------------------------------------------------------------

def _integer_rows(rows: Sequence[Sequence[Fraction]]) -> list[list[int]]:
    out = []
    for row in rows:
        den = 1
        for v in row:
            den = lcm(den, v.denominator)
        out.append([int(v * den) for v in row])
    return out


def _bareiss(rows: Sequence[Sequence[Fraction]], ncols: int) -> tuple[list[list[int]], list[int]]:
    """Fraction-free row echelon form.

    Each row is first cleared of denominators (this only rescales rows, so
    row space and kernel are unchanged).  Pivots are chosen by partial
    pivoting on absolute value.  Returns the integer echelon rows and the
    pivot columns.
    """
    m = _integer_rows(rows)
    nrows = len(m)
    pivots: list[int] = []
    prev = 1
    r = 0
    for c in range(ncols):
        if r == nrows:
            break
        best = max(range(r, nrows), key=lambda i: abs(m[i][c]))
        if m[best][c] == 0:
            continue
        m[r], m[best] = m[best], m[r]
        piv = m[r][c]
        for i in range(r + 1, nrows):
            mic = m[i][c]
            row_i = m[i]
            row_r = m[r]
            for j in range(c, ncols):
                # exact division is guaranteed by Sylvester's identity
                row_i[j] = (piv * row_i[j] - mic * row_r[j]) // prev
        for i in range(r + 1, nrows):
            m[i][c] = 0
        prev = piv
        pivots.append(c)
        r += 1
    return m[:r], pivots


def _rref(rows: Sequence[Sequence[Fraction]], ncols: int) -> tuple[list[list[Fraction]], list[int]]:
    """Reduced row echelon form (exact), from the fraction-free echelon form."""
    ech, pivots = _bareiss(rows, ncols)
    red = [[Fraction(v) for v in row] for row in ech]
    for i in range(len(red) - 1, -1, -1):
        c = pivots[i]
        piv = red[i][c]
        red[i] = [v / piv for v in red[i]]
        for k in range(i):
            f = red[k][c]
            if f:
                red[k] = [a - f * b for a, b in zip(red[k], red[i])]
    return red, pivots


# ---------------------------------------------------------------------------
# matrices and subspaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RationalMatrix:
    """Immutable exact matrix; ``entries`` holds the rows."""

    entries: tuple[tuple[Fraction, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(as_fraction(v) for v in row) for row in self.entries)
        if rows and any(len(row) != len(rows[0]) for row in rows):
            raise ValueError("ragged matrix rows")
        object.__setattr__(self, "entries", rows)

    @classmethod
    def from_rows(cls, rows: Iterable[Iterable]) -> "RationalMatrix":
        return cls(tuple(tuple(row) for row in rows))

    @classmethod
    def from_columns(cls, cols: Sequence[Sequence]) -> "RationalMatrix":
        return cls(tuple(zip(*cols)))

    @classmethod
    def identity(cls, n: int) -> "RationalMatrix":
        return cls(tuple(tuple(Fraction(int(i == j)) for j in range(n)) for i in range(n)))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "RationalMatrix":
        return cls(tuple(tuple(Fraction(0) for _ in range(cols)) for _ in range(rows)))

    @classmethod
    def parse(cls, text: str) -> "RationalMatrix":
        return parse_matrix(text)

    @property
    def rows(self) -> int:
        return len(self.entries)

    @property
    def cols(self) -> int:
        return len(self.entries[0]) if self.entries else 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def __getitem__(self, idx: tuple[int, int]) -> Fraction:
        i, j = idx
        return self.entries[i][j]

    def column(self, j: int) -> Vector:
        return tuple(row[j] for row in self.entries)

    def transpose(self) -> "RationalMatrix":
        return RationalMatrix(tuple(zip(*self.entries)))

    def __add__(self, other: "RationalMatrix") -> "RationalMatrix":
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} + {other.shape}")
        return RationalMatrix(tuple(tuple(a + b for a, b in zip(r, s))
                                    for r, s in zip(self.entries, other.entries)))

    def __sub__(self, other: "RationalMatrix") -> "RationalMatrix":
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} - {other.shape}")
        return RationalMatrix(tuple(tuple(a - b for a, b in zip(r, s))
                                    for r, s in zip(self.entries, other.entries)))

    def __neg__(self) -> "RationalMatrix":
        return RationalMatrix(tuple(tuple(-a for a in r) for r in self.entries))

    def scale(self, factor) -> "RationalMatrix":
        f = as_fraction(factor)
        return RationalMatrix(tuple(tuple(f * a for a in r) for r in self.entries))

    def __matmul__(self, other):
        if isinstance(other, RationalMatrix):
            if self.cols != other.rows:
                raise ValueError(f"shape mismatch {self.shape} @ {other.shape}")
            cols = list(zip(*other.entries))
            return RationalMatrix(tuple(tuple(sum((a * b for a, b in zip(r, c)), Fraction(0))
                                              for c in cols) for r in self.entries))
        vec = tuple(as_fraction(v) for v in other)
        if len(vec) != self.cols:
            raise ValueError("vector length mismatch")
        return tuple(sum((a * b for a, b in zip(r, vec)), Fraction(0)) for r in self.entries)

    def rank(self) -> int:
        return len(_bareiss(self.entries, self.cols)[1])

    def det(self) -> Fraction:
        if self.rows != self.cols:
            raise ValueError("determinant of a non-square matrix")
        n = self.rows
        if n == 0:
            return Fraction(1)
        scale = Fraction(1)
        for row in self.entries:
            den = 1
            for v in row:
                den = lcm(den, v.denominator)
            scale *= den
        m = _integer_rows(self.entries)
        sign = 1
        prev = 1
        for c in range(n):
            best = max(range(c, n), key=lambda i: abs(m[i][c]))
            if m[best][c] == 0:
                return Fraction(0)
            if best != c:
                m[c], m[best] = m[best], m[c]
                sign = -sign
            for i in range(c + 1, n):
                for j in range(c + 1, n):
                    m[i][j] = (m[c][c] * m[i][j] - m[i][c] * m[c][j]) // prev
                m[i][c] = 0
            prev = m[c][c]
        return Fraction(sign * m[n - 1][n - 1]) / scale

    def is_invertible(self) -> bool:
        return self.rows == self.cols and self.rank() == self.rows

    def inverse(self) -> "RationalMatrix":
        n = self.rows
        if self.cols != n:
            raise ValueError("inverse of a non-square matrix")
        aug = [list(row) + [Fraction(int(i == j)) for j in range(n)]
               for i, row in enumerate(self.entries)]
        red, pivots = _rref(aug, 2 * n)
        if pivots[:n] != list(range(n)) or len(pivots) < n:
            raise ZeroDivisionError("matrix is singular")
        return RationalMatrix(tuple(tuple(row[n:]) for row in red[:n]))

    def to_numpy(self) -> np.ndarray:
        """Round-to-nearest float64 copy."""
        return np.array([[float(v) for v in row] for row in self.entries], dtype=float).reshape(
            self.rows, self.cols)

    def to_text(self) -> str:
        return "; ".join(",".join(str(v) for v in row) for row in self.entries)

    def __str__(self) -> str:
        cells = [[str(v) for v in row] for row in self.entries]
        width = max((len(c) for row in cells for c in row), default=1)
        return "\n".join("[" + " ".join(c.rjust(width) for c in row) + "]" for row in cells)


def parse_matrix(text: str) -> RationalMatrix:
    """Parse the ``"a,b,c; d,e,f"`` text format."""
    rows = [r for r in text.strip().split(";")]
    if not text.strip():
        raise ValueError("empty matrix text")
    parsed = []
    for i, row in enumerate(rows):
        if not row.strip():
            raise ValueError(f"empty row {i + 1} in matrix text {text!r}")
        try:
            parsed.append(tuple(as_fraction(v) for v in row.split(",")))
        except ValueError as exc:
            raise ValueError(f"row {i + 1}: {exc}") from None
    if any(len(r) != len(parsed[0]) for r in parsed):
        raise ValueError(f"ragged rows in matrix text {text!r}")
    return RationalMatrix(tuple(parsed))


def rank(A: RationalMatrix) -> int:
    return A.rank()


@dataclass(frozen=True)
class Subspace:
    """A linear subspace of Q^n given by a basis (rows of ``basis``)."""

    ambient_dim: int
    basis: tuple[Vector, ...] = ()

    def __post_init__(self):
        basis = tuple(tuple(as_fraction(v) for v in vec) for vec in self.basis)
        if any(len(v) != self.ambient_dim for v in basis):
            raise ValueError("basis vector length differs from ambient dimension")
        if basis and len(_bareiss(basis, self.ambient_dim)[1]) != len(basis):
            raise ValueError("basis vectors are linearly dependent")
        object.__setattr__(self, "basis", basis)

    @classmethod
    def full(cls, n: int) -> "Subspace":
        return cls(n, RationalMatrix.identity(n).entries)

    @classmethod
    def span(cls, n: int, vectors: Iterable[Sequence]) -> "Subspace":
        """Subspace spanned by arbitrary (possibly dependent) vectors, canonical basis."""
        vecs = [tuple(as_fraction(v) for v in vec) for vec in vectors]
        if not vecs:
            return cls(n, ())
        red, pivots = _rref(vecs, n)
        return cls(n, tuple(_primitive(row) for row in red[:len(pivots)]))

    @property
    def dim(self) -> int:
        return len(self.basis)

    def canonical(self) -> "Subspace":
        return Subspace.span(self.ambient_dim, self.basis)

    def contains(self, vec: Sequence) -> bool:
        v = tuple(as_fraction(x) for x in vec)
        return len(_bareiss(self.basis + (v,), self.ambient_dim)[1]) == self.dim

    def same_span(self, other: "Subspace") -> bool:
        if self.ambient_dim != other.ambient_dim or self.dim != other.dim:
            return False
        return all(self.contains(v) for v in other.basis)

    def annihilator(self) -> "Subspace":
        """Vectors orthogonal to every basis vector."""
        return null_space_rows(self.basis, self.ambient_dim)


def null_space_rows(rows: Sequence[Sequence[Fraction]], ncols: int) -> Subspace:
    """Kernel of the matrix with the given rows (``rows`` may be empty)."""
    if not rows:
        return Subspace.full(ncols)
    red, pivots = _rref(rows, ncols)
    free = [c for c in range(ncols) if c not in pivots]
    vecs = []
    for f in free:
        x = [Fraction(0)] * ncols
        x[f] = Fraction(1)
        for row, c in zip(red, pivots):
            x[c] = -row[f]
        vecs.append(x)
    return Subspace.span(ncols, vecs)


def null_space(A: RationalMatrix) -> Subspace:
    """Exact kernel ``{x : A x = 0}`` with the canonical (reduced echelon) basis."""
    return null_space_rows(A.entries, A.cols)


def intersect(U: Subspace, V: Subspace) -> Subspace:
    """Exact intersection, as the kernel of the stacked annihilators."""
    if U.ambient_dim != V.ambient_dim:
        raise ValueError(f"ambient dimension mismatch: {U.ambient_dim} vs {V.ambient_dim}")
    rows = U.annihilator().basis + V.annihilator().basis
    return null_space_rows(rows, U.ambient_dim)


def subspace_sum_rank(spaces: Sequence[Subspace], n: int) -> int:
    vecs = [v for s in spaces for v in s.basis]
    if not vecs:
        return 0
    return len(_bareiss(vecs, n)[1])


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------

def block_slices(partition: Sequence[int]) -> list[slice]:
    out, start = [], 0
    for nj in partition:
        out.append(slice(start, start + nj))
        start += nj
    return out


def canonical_projection(partition: Sequence[int], j: int) -> RationalMatrix:
    """Projection of R^n onto the coordinates of block ``j`` (0-based)."""
    n = sum(partition)
    sl = block_slices(partition)[j]
    return RationalMatrix(tuple(tuple(Fraction(int(r == c and sl.start <= r < sl.stop))
                                      for c in range(n)) for r in range(n)))


@dataclass(frozen=True)
class FamilySpec:
    """Matrices ``A_1..A_m`` plus the dimension partition ``n_1..n_m``.

    Only shapes are checked on construction; :func:`validate_family` checks
    the admissibility hypotheses.
    """

    n: int
    partition: tuple[int, ...]
    matrices: tuple[RationalMatrix, ...]

    def __post_init__(self):
        object.__setattr__(self, "partition", tuple(int(v) for v in self.partition))
        mats = tuple(m if isinstance(m, RationalMatrix) else RationalMatrix.from_rows(m)
                     for m in self.matrices)
        object.__setattr__(self, "matrices", mats)
        if len(mats) != len(self.partition):
            raise FamilyError(f"{len(mats)} matrices but partition has {len(self.partition)} parts")

    @classmethod
    def from_text(cls, matrices: Sequence[str], partition: Sequence[int]) -> "FamilySpec":
        mats = tuple(parse_matrix(t) for t in matrices)
        n = mats[0].rows if mats else 0
        return cls(n, tuple(partition), mats)

    @property
    def m(self) -> int:
        return len(self.matrices)

    def matrix_sum(self) -> RationalMatrix:
        total = RationalMatrix.zeros(self.n, self.n)
        for A in self.matrices:
            total = total + A
        return total

    def null_spaces(self) -> list[Subspace]:
        return [null_space(A) for A in self.matrices]

    def complementary_intersections(self) -> list[Subspace]:
        """``W_k = intersection of ker(A_j), j != k`` for each k."""
        kernels = self.null_spaces()
        out = []
        for k in range(self.m):
            W = Subspace.full(self.n)
            for j, N in enumerate(kernels):
                if j != k:
                    W = intersect(W, N)
            out.append(W)
        return out

    def to_numpy(self) -> np.ndarray:
        return np.stack([A.to_numpy() for A in self.matrices])


def canonical_family(partition: Sequence[int]) -> FamilySpec:
    """The model family ``A_j = P_j``."""
    partition = tuple(partition)
    return FamilySpec(sum(partition), partition,
                      tuple(canonical_projection(partition, j) for j in range(len(partition))))


def worked_example_family() -> FamilySpec:
    """The 3x3 singular family with partition (1, 1, 1) used as a worked example."""
    return FamilySpec.from_text(
        ["4,4,-1; 0,0,0; -4,-4,1",
         "1,-1,0; -2,2,0; 0,0,0",
         "1,0,-1; -3,0,3; -1,0,1"],
        (1, 1, 1),
    )


def family_from_factors(B0: RationalMatrix, C0: RationalMatrix,
                        partition: Sequence[int]) -> FamilySpec:
    """``A_j = B0 P_j C0^{-1}``; admissible whenever B0 and C0 are invertible."""
    C0_inv = C0.inverse()
    partition = tuple(partition)
    mats = tuple(B0 @ canonical_projection(partition, j) @ C0_inv for j in range(len(partition)))
    return FamilySpec(sum(partition), partition, mats)


def random_family(n: int, partition: Sequence[int], seed: int, *,
                  entry_bound: int = 3, max_tries: int = 100) -> FamilySpec:
    """Random admissible family built from invertible integer factors.

    ``B0`` and ``C0`` have entries in ``[-entry_bound, entry_bound]``; singular
    draws are redrawn up to ``max_tries`` times.
    """
    partition = tuple(int(v) for v in partition)
    if sum(partition) != n:
        raise FamilyError(f"partition {partition} does not sum to n={n}")
    rng = np.random.default_rng(seed)

    def draw() -> RationalMatrix:
        for _ in range(max_tries):
            M = RationalMatrix.from_rows(rng.integers(-entry_bound, entry_bound + 1, size=(n, n)).tolist())
            if M.det() != 0:
                return M
        raise RuntimeError(f"seed {seed}: no invertible draw after {max_tries} tries")

    B0 = draw()
    C0 = draw()
    return family_from_factors(B0, C0, partition)


# ---------------------------------------------------------------------------
# validation and normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def __str__(self) -> str:
        return "\n".join(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}"
                         for c in self.checks)


def validate_family(spec: FamilySpec) -> ValidationReport:
    """Check every admissibility hypothesis; failures become report entries."""
    rep = ValidationReport()
    add = rep.checks.append
    n, m, part = spec.n, spec.m, spec.partition

    add(CheckResult("family_size", 1 < m <= n, f"m={m}, n={n}"))
    add(CheckResult("partition", len(part) == m and all(v > 0 for v in part) and sum(part) == n,
                    f"partition={part}, sum={sum(part)}"))
    square = all(A.shape == (n, n) for A in spec.matrices)
    add(CheckResult("square", square, f"shapes={[A.shape for A in spec.matrices]}"))
    if not square:
        return rep

    for j, A in enumerate(spec.matrices):
        rk = A.rank()
        want = part[j] if j < len(part) else None
        add(CheckResult(f"rank[A{j + 1}]", rk == want,
                        f"rank={rk}, dim ker={n - rk}, expected rank {want}"))

    S = spec.matrix_sum()
    det = S.det()
    add(CheckResult("sum_invertible", det != 0, f"det(sum)={det}"))

    W = spec.complementary_intersections()
    for k, Wk in enumerate(W):
        want = part[k] if k < len(part) else None
        add(CheckResult(f"intersection_dim[W{k + 1}]", Wk.dim == want,
                        f"dim={Wk.dim}, expected {want}"))
    total = sum(Wk.dim for Wk in W)
    rk = subspace_sum_rank(W, n)
    add(CheckResult("direct_sum", total == n and rk == n,
                    f"sum of dims={total}, rank of concatenated bases={rk}, n={n}"))
    return rep


@dataclass(frozen=True)
class Normalization:
    """Exact certificate ``B^{-1} A_j C = P_j``."""

    C: RationalMatrix
    B: RationalMatrix
    B_inv: RationalMatrix
    projections: tuple[RationalMatrix, ...]

    @property
    def det_C(self) -> Fraction:
        return self.C.det()


def build_normalization(spec: FamilySpec,
                        basis_choice: Sequence[Sequence[Sequence]] | None = None) -> Normalization:
    """Construct ``C`` (basis columns of the ``W_k`` in block order) and ``B = (sum A_j) C``.

    ``basis_choice[k]`` optionally lists the exact basis vectors for ``W_k``;
    by default the canonical reduced echelon basis is used.
    """
    report = validate_family(spec)
    if not report.ok:
        names = ", ".join(c.name for c in report.failed())
        raise FamilyError(f"family is not admissible (failed: {names})")

    n, part = spec.n, spec.partition
    if basis_choice is None:
        blocks = [list(Wk.basis) for Wk in spec.complementary_intersections()]
    else:
        if len(basis_choice) != spec.m:
            raise NormalizationError(f"basis_choice has {len(basis_choice)} blocks, expected {spec.m}")
        blocks = []
        for k, vecs in enumerate(basis_choice):
            vecs = [tuple(as_fraction(v) for v in vec) for vec in vecs]
            if len(vecs) != part[k]:
                raise NormalizationError(f"block {k + 1}: {len(vecs)} vectors, expected {part[k]}")
            for v in vecs:
                if len(v) != n:
                    raise NormalizationError(f"block {k + 1}: vector {v} has wrong length")
                for j, A in enumerate(spec.matrices):
                    if j != k and any(A @ v):
                        raise NormalizationError(
                            f"block {k + 1}: vector {tuple(map(str, v))} is not in ker(A{j + 1})")
            blocks.append(vecs)
        cols = [v for b in blocks for v in b]
        if len(_bareiss(cols, n)[1]) != n:
            raise NormalizationError("basis_choice vectors are linearly dependent")

    C = RationalMatrix.from_columns([v for b in blocks for v in b])
    B = spec.matrix_sum() @ C
    B_inv = B.inverse()
    projections = tuple(B_inv @ A @ C for A in spec.matrices)
    return Normalization(C=C, B=B, B_inv=B_inv, projections=projections)


def verify_projections(norm: Normalization, spec: FamilySpec) -> bool:
    """Exact check of ``B B^{-1} = I``, ``B = (sum A_j) C`` and ``B^{-1} A_j C = P_j``."""
    n = spec.n
    if norm.C.shape != (n, n) or norm.B_inv.shape != (n, n):
        return False
    if norm.B @ norm.B_inv != RationalMatrix.identity(n):
        return False
    if norm.B != spec.matrix_sum() @ norm.C:
        return False
    for j, A in enumerate(spec.matrices):
        if norm.B_inv @ A @ norm.C != canonical_projection(spec.partition, j):
            return False
    return True
