"""Truncated multivariate Taylor polynomials ("jets"), batched over sample points.

A jet of order N in d variables stores the coefficients of every monomial
``h^beta`` with ``|beta| <= N``; coefficient arrays carry trailing batch axes
so one call handles many expansion points at once.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import product
from math import factorial, prod

import numpy as np


def multi_indices(nvars: int, order: int) -> list[tuple[int, ...]]:
    """All multi-indices of total degree <= order, graded then lexicographic."""
    out = []
    for deg in range(order + 1):
        out.extend(sorted((b for b in product(range(deg + 1), repeat=nvars) if sum(b) == deg),
                          reverse=True))
    return out


@lru_cache(maxsize=None)
def _space(nvars: int, order: int):
    mons = multi_indices(nvars, order)
    index = {b: i for i, b in enumerate(mons)}
    ia, ib, ic = [], [], []
    for i, a in enumerate(mons):
        for j, b in enumerate(mons):
            c = tuple(x + y for x, y in zip(a, b))
            if sum(c) <= order:
                ia.append(i)
                ib.append(j)
                ic.append(index[c])
    degrees = np.array([sum(b) for b in mons])
    return mons, index, (np.array(ia), np.array(ib), np.array(ic)), degrees


def _gen_binom(e: float, k: int) -> float:
    return prod(e - i for i in range(k)) / factorial(k)


class Jet:
    """Truncated Taylor polynomial; ``coef`` has shape ``(n_monomials, *batch)``."""

    __slots__ = ("nvars", "order", "coef")

    def __init__(self, nvars: int, order: int, coef: np.ndarray):
        self.nvars = nvars
        self.order = order
        self.coef = np.asarray(coef, dtype=float)

    @classmethod
    def constant(cls, nvars, order, value):
        value = np.asarray(value, dtype=float)
        mons = _space(nvars, order)[0]
        coef = np.zeros((len(mons),) + value.shape)
        coef[0] = value
        return cls(nvars, order, coef)

    @property
    def monomials(self):
        return _space(self.nvars, self.order)[0]

    def _like(self, coef):
        return Jet(self.nvars, self.order, coef)

    def __add__(self, other):
        if isinstance(other, Jet):
            return self._like(self.coef + other.coef)
        c = self.coef.copy()
        c[0] = c[0] + other
        return self._like(c)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Jet):
            return self._like(self.coef - other.coef)
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return self._like(self.coef * other)
        ia, ib, ic = _space(self.nvars, self.order)[2]
        terms = self.coef[ia] * other.coef[ib]
        out = np.zeros_like(self.coef)
        np.add.at(out, ic, terms)
        return self._like(out)

    __rmul__ = __mul__

    def power(self, e: float) -> "Jet":
        """``self ** e`` for real e; requires a positive constant term."""
        c0 = self.coef[0]
        if np.any(c0 <= 0):
            raise ValueError("power of a jet needs a positive constant term")
        d = self - c0
        d.coef[0] = 0.0
        result = Jet.constant(self.nvars, self.order, c0 ** e)
        term = Jet.constant(self.nvars, self.order, np.ones_like(c0))
        for k in range(1, self.order + 1):
            term = term * d
            result = result + term * (_gen_binom(e, k) * c0 ** (e - k))
        return result

    def truncate(self, degree: int) -> "Jet":
        degrees = _space(self.nvars, self.order)[3]
        c = self.coef.copy()
        c[degrees > degree] = 0.0
        return self._like(c)

    def coefficient(self, beta) -> np.ndarray:
        return self.coef[_space(self.nvars, self.order)[1][tuple(beta)]]

    def derivative(self, beta) -> np.ndarray:
        """Partial derivative ``d^beta`` at the expansion point."""
        return self.coefficient(beta) * prod(factorial(b) for b in beta)

    def evaluate(self, h: np.ndarray, degree: int | None = None) -> np.ndarray:
        """Value of the polynomial at displacement ``h`` (shape ``(nvars, *batch)``)."""
        h = np.asarray(h, dtype=float)
        total = 0.0
        for i, beta in enumerate(self.monomials):
            if degree is not None and sum(beta) > degree:
                continue
            mono = 1.0
            for k, b in enumerate(beta):
                if b:
                    mono = mono * h[k] ** b
            total = total + self.coef[i] * mono
        return total


def quadratic_jet(order: int, const, linear, hessian) -> Jet:
    """Jet of ``const + linear . h + h^T G h`` with symmetric ``G = hessian``.

    ``const`` has shape ``batch``, ``linear`` ``(d, *batch)``, ``hessian``
    ``(d, d, *batch)`` or ``(d, d)``.
    """
    linear = np.asarray(linear, dtype=float)
    d = linear.shape[0]
    _, index, _, _ = _space(d, order)
    const = np.asarray(const, dtype=float)
    coef = np.zeros((len(index),) + const.shape)
    coef[0] = const
    if order >= 1:
        for k in range(d):
            e = [0] * d
            e[k] = 1
            coef[index[tuple(e)]] = linear[k]
    if order >= 2:
        G = np.asarray(hessian, dtype=float)
        for k in range(d):
            for l in range(k, d):
                e = [0] * d
                e[k] += 1
                e[l] += 1
                coef[index[tuple(e)]] = G[k, l] if k == l else 2.0 * G[k, l]
    return Jet(d, order, coef)
