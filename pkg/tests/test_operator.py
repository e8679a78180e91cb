from fractions import Fraction

import numpy as np
import pytest

from fracop.atoms import AtomSpec, build_atom, dilate_atom
from fracop.exactlin import (Normalization, RationalMatrix, canonical_family, random_family,
                             worked_example_family)
from fracop.kernelops import KernelParams, far_exponent_exact
from fracop.oplab.experiments import far_decay_slope
from fracop.oplab.operator import (Bump, NormEstimate, Pullback, UnsupportedParameters,
                                   apply_Tr, apply_Tr_many, conjugated_apply, far_field_values,
                                   lq_norm, lq_norm_Tr_atom)
from fracop.quadrature import Box, riesz_kernel, tensor_apply

HALF = Fraction(1, 2)
CANON2 = KernelParams(canonical_family((1, 1)), HALF)
WORKED = KernelParams(worked_example_family(), HALF)


def test_bump_and_pullback():
    f = Bump([0.0, 0.0], 2.0, amplitude=3.0)
    assert f(np.zeros(2)) == 3.0
    assert f(np.array([2.0, 0.1])) == 0.0
    M = np.array([[2.0, 1.0], [0.0, 1.0]])
    g = Pullback(f, M)
    y = np.array([[0.5, 0.3]])
    assert g(y)[0] == pytest.approx(f(np.linalg.solve(M, y[0])))
    box = g.support_box()
    assert np.allclose(box.upper, [2 * np.sqrt(5), 2.0])


def test_canonical_value_against_explicit_integral():
    # T f(0) = int |y1|^-1/2 |y2|^-1/2 f(y) dy for the canonical 2-block family
    f = Bump([0.0, 0.0], 1.0)
    K = riesz_kernel(0.5, 1)
    ref = tensor_apply([K, K], f, np.zeros(2), Box([-1, -1], [1, 1]), 1e-9).value
    assert apply_Tr(CANON2, f, [0.0, 0.0], 1e-9).value == pytest.approx(ref, rel=1e-7)


@pytest.mark.parametrize("params", [CANON2, WORKED])
def test_positive_input_gives_positive_output(params):
    f = Bump(np.full(params.n, 0.2), 0.7)
    X = np.random.default_rng(1).uniform(-2, 2, (8, params.n))
    assert all(r.value > 0 for r in apply_Tr_many(params, f, X, 1e-6))


def test_linearity():
    a = build_atom(AtomSpec(2, 1, (0.0, 0.0), 1.0, seed=1))
    b = Bump([0.3, 0.0], 0.5)
    x = [0.4, -0.7]
    ta = apply_Tr(CANON2, a, x, 1e-10).value
    tb = apply_Tr(CANON2, b, x, 1e-10).value

    class Mix:
        center, radius = np.zeros(2), 1.0

        def __call__(self, Y):
            return 2 * a(Y) - 3 * b(Y)

        def support_box(self):
            return Box.around(self.center, 1.0)

    lhs = apply_Tr(CANON2, Mix(), x, 1e-10).value
    assert lhs == pytest.approx(2 * ta - 3 * tb, rel=1e-7, abs=1e-10)


@pytest.mark.parametrize("partition", [(1, 1), (1, 2)])
def test_dominated_by_tensor_riesz(partition):
    # |x - P_j y| >= |x_j - y_j|, so T|f| lies below the tensor Riesz operator of |f|
    params = KernelParams(canonical_family(partition), HALF)
    n = params.n
    f = Bump(np.full(n, 0.1), 0.8)
    kernels = [riesz_kernel(float(HALF) * nj, nj) for nj in partition]
    for x in np.random.default_rng(2).uniform(-1.5, 1.5, (3, n)):
        t = apply_Tr(params, f, x, 1e-7).value
        ref = tensor_apply(kernels, f, x, f.support_box(), 1e-7).value
        assert 0 < t <= ref * (1 + 1e-6)


@pytest.mark.parametrize("t", [0.37, 1.7, 3.1])
def test_pointwise_homogeneity(t):
    a = build_atom(AtomSpec(2, 1, (0.0, 0.0), 1.0, seed=4))
    at = dilate_atom(a, t)
    X = np.array([[0.3, -0.2], [0.05, 0.6], [1.3, 0.4]]) / t
    lhs = np.array([r.value for r in apply_Tr_many(CANON2, at, X, 1e-9)])
    rhs = np.array([r.value for r in apply_Tr_many(CANON2, a, t * X, 1e-9)])
    assert np.allclose(lhs, t ** (2 / 1 - 2 * 0.5) * rhs, rtol=1e-6)


def test_conjugation_identity_on_worked_family():
    f = Bump(np.zeros(3), 0.5)
    for x in np.random.default_rng(3).uniform(-1, 1, (5, 3)):
        first, second = conjugated_apply(WORKED, WORKED.normalization, f, x, 1e-7)
        assert not first.flagged and not second.flagged
        assert first.value == pytest.approx(second.value, rel=1e-6)


def test_first_expression_scales_with_det_c():
    norm = WORKED.normalization
    rows = [list(r) for r in norm.C.entries]
    for r in rows:
        r[0] *= 2
    doubled = Normalization(RationalMatrix.from_rows(rows), norm.B, norm.B_inv,
                            norm.projections)
    assert doubled.det_C == 2 * norm.det_C
    f = Bump(np.zeros(3), 0.5)
    x = np.array([0.2, -0.3, 0.4])
    a = conjugated_apply(WORKED, norm, f, x, 1e-6)[0].value
    b = conjugated_apply(WORKED, doubled, f, x, 1e-6)[0].value
    assert b == pytest.approx(2 * a, rel=1e-12)


def test_conjugation_is_trivial_for_canonical_family():
    f = Bump([0.2, -0.1], 0.6)
    x = np.array([0.5, 0.25])
    first, second = conjugated_apply(CANON2, CANON2.normalization, f, x, 1e-9)
    plain = apply_Tr(CANON2, f, x, 1e-9, far_rule=False).value
    assert first.value == pytest.approx(plain, rel=1e-7)
    assert second.value == pytest.approx(plain, rel=1e-7)


@pytest.mark.parametrize("params", [WORKED, KernelParams(random_family(3, (1, 2), 7), 0.4)])
def test_normalized_and_direct_paths_agree(params):
    f = Bump(np.full(params.n, -0.1), 0.6)
    X = np.random.default_rng(5).uniform(-1, 1, (4, params.n))
    rn = apply_Tr_many(params, f, X, 1e-7, max_evals=4_000_000)
    rd = apply_Tr_many(params, f, X, 1e-7, method="direct", max_evals=4_000_000)
    for a, b in zip(rn, rd):
        assert not a.flagged and not b.flagged
        assert a.value == pytest.approx(b.value, rel=1e-6)


def test_auto_method_on_targets_inside_the_ranges():
    # x = A_j y0 with y0 in the support: the j-th singular set crosses the support
    f = Bump(np.full(3, -0.1), 0.6)
    rng = np.random.default_rng(1)
    X = np.array([A @ (f.center + 0.3 * rng.standard_normal(3)) for A in WORKED.mats])
    auto = apply_Tr_many(WORKED, f, X, 1e-6)
    ref = apply_Tr_many(WORKED, f, X, 1e-7, method="normalized", max_evals=16_000_000)
    for a, b in zip(auto, ref):
        assert not a.flagged
        assert a.value == pytest.approx(b.value, rel=1e-5)


def test_unknown_method_and_bad_targets():
    f = Bump([0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        apply_Tr(CANON2, f, [1.0, 1.0], method="spectral")
    with pytest.raises(ValueError):
        apply_Tr(CANON2, f, [1.0, 1.0, 1.0])


@pytest.mark.parametrize("params", [CANON2, WORKED])
def test_far_rule_matches_adaptive_quadrature(params):
    a = build_atom(AtomSpec(params.n, 1, tuple([0.1] * params.n), 0.25, seed=2))
    X = np.random.default_rng(6).standard_normal((4, params.n))
    X = 12 * X / np.linalg.norm(X, axis=1)[:, None]
    fast = far_field_values(params, a, X)
    slow = [r.value for r in apply_Tr_many(params, a, X, 1e-11, far_rule=False,
                                           cancel_floor=1e-12)]
    assert np.allclose(fast, slow, rtol=1e-6, atol=1e-9 * np.max(np.abs(slow)))


def test_far_decay_of_atom_follows_tail_exponent():
    a = build_atom(AtomSpec(2, 1, (0.0, 0.0), 1.0, seed=0))
    radii = np.geomspace(20, 300, 8)
    slope, _, _ = far_decay_slope(CANON2, a, [1.0, 0.7], radii)
    assert slope == pytest.approx(float(far_exponent_exact(CANON2, a.spec.N)), abs=0.05)


def test_norm_estimate_invariants():
    with pytest.raises(ValueError):
        NormEstimate(q=2.0, near_value=-1.0, tail_bound=0.0, total_upper=0.0, tol=0.0)


def test_norm_of_atom_is_consistent():
    a = build_atom(AtomSpec(2, 1, (0.0, 0.0), 1.0, seed=0))
    est = lq_norm_Tr_atom(CANON2, a, tol=1e-2)
    assert est.q == pytest.approx(2.0)
    assert est.N == 1
    assert est.total_upper >= max(est.near_value, est.tail_bound)
    assert est.total_upper ** 2 == pytest.approx(est.near_value ** 2 + est.tail_bound ** 2)
    assert est.tail_bound < est.near_value
    assert not est.flagged
    assert est.R_max >= 2.0


def test_unsupported_parameters():
    a = build_atom(AtomSpec(2, 1, (0.0, 0.0), 1.0))
    with pytest.raises(UnsupportedParameters):
        lq_norm(CANON2, a, q=0.9, tol=1e-2)
    low = build_atom(AtomSpec(3, Fraction(2, 5), (0.0, 0.0, 0.0), 1.0))
    params3 = KernelParams(canonical_family((1, 1, 1)), Fraction(1, 4))
    assert low.spec.N > 3
    with pytest.raises(UnsupportedParameters):
        lq_norm_Tr_atom(params3, low, tol=1e-2)
