from math import gamma, log, pi, sqrt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracop.quadrature import (AffineSet, BlockKernel, Box, QuadratureError, adaptive_integrate,
                               adaptive_integrate_many, ball_rule, integrate_ball,
                               riesz_block_apply, riesz_kernel, tensor_apply)


class Indicator:
    """Indicator of ``[center - radius, center + radius]^d``."""

    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = radius

    def support_box(self):
        return Box.around(self.center, self.radius)

    def __call__(self, Y):
        return np.ones(np.atleast_2d(Y).shape[0])


class SmoothBump:
    def __init__(self, center, radius, power=4):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = radius
        self.power = power

    def support_box(self):
        return Box.around(self.center, self.radius)

    def __call__(self, Y):
        s = 1 - np.sum((np.atleast_2d(Y) - self.center) ** 2, axis=1) / self.radius ** 2
        return np.clip(s, 0, None) ** self.power


class OddBump(SmoothBump):
    """Mean-zero bump ``y_1 * bump(y)``."""

    def __call__(self, Y):
        Y = np.atleast_2d(Y)
        return super().__call__(Y) * (Y[:, 0] - self.center[0])


# -- closed-form references ------------------------------------------------------

def test_endpoint_power_singularity():
    res = adaptive_integrate(lambda Y: Y[:, 0] ** -0.5, Box([0.0], [1.0]), 1e-8,
                             [AffineSet.point([0.0], -0.5)])
    assert res.value == pytest.approx(2.0, rel=1e-6)
    assert not res.flagged


def test_disk_inverse_distance():
    res = integrate_ball(lambda Y: np.linalg.norm(Y, axis=1) ** -1, [0.0, 0.0], 1.0, 1e-8,
                         center_power=-1.0)
    assert res.value == pytest.approx(2 * pi, rel=1e-6)


def test_disk_inverse_distance_in_cartesian_box():
    # int over [-1,1]^2 of |y|^-1 = 8 log(1 + sqrt 2)
    res = adaptive_integrate(lambda Y: np.linalg.norm(Y, axis=1) ** -1,
                             Box([-1.0, -1.0], [1.0, 1.0]), 1e-9, [AffineSet.point([0, 0], -1.0)])
    assert res.value == pytest.approx(8 * log(1 + sqrt(2)), rel=1e-7)


def test_product_of_line_singularities():
    f = lambda Y: np.abs(Y[:, 0]) ** -0.5 * np.abs(Y[:, 1]) ** -0.5
    sets = [AffineSet.coordinate(2, 0, 0.0, -0.5), AffineSet.coordinate(2, 1, 0.0, -0.5)]
    res = adaptive_integrate(f, Box([-1.0, -1.0], [1.0, 1.0]), 1e-8, sets)
    assert res.value == pytest.approx(16.0, rel=1e-6)


def test_interior_offset_singularities():
    f = lambda Y: np.abs(Y[:, 0] - 0.3) ** -0.5 * np.abs(Y[:, 1] + 0.2) ** -0.7
    sets = [AffineSet.coordinate(2, 0, 0.3, -0.5), AffineSet.coordinate(2, 1, -0.2, -0.7)]
    res = adaptive_integrate(f, Box([-1.0, -1.0], [1.0, 1.0]), 1e-8, sets)
    exact = (2 * sqrt(1.3) + 2 * sqrt(0.7)) * ((0.8 ** 0.3 + 1.2 ** 0.3) / 0.3)
    assert res.value == pytest.approx(exact, rel=1e-7)


def test_oblique_singular_line_is_flagged_not_hidden():
    # |y1 - y2|^-1/2 over [0,1]^2 = 8/3; oblique sets only get plain bisection,
    # so a tight request must come back flagged with an honest error estimate
    with np.errstate(divide="ignore"):
        res = adaptive_integrate(lambda Y: np.abs(Y[:, 0] - Y[:, 1]) ** -0.5,
                                 Box([0, 0], [1, 1]), 1e-6,
                                 [AffineSet(np.array([[1.0, -1.0]]), [0.0], -0.5)],
                                 max_evals=200_000)
    assert res.flagged
    assert abs(res.value - 8 / 3) <= res.error_estimate


def test_three_dimensional_point_singularity():
    # int_{B(0,1)} |y|^-2 dy = 4 pi in R^3
    res = integrate_ball(lambda Y: np.sum(Y * Y, axis=1) ** -1, np.zeros(3), 1.0, 1e-8,
                         center_power=-2.0)
    assert res.value == pytest.approx(4 * pi, rel=1e-6)


def test_riesz_indicator_at_origin():
    res = riesz_block_apply(0.5, Indicator([0.0], 1.0), [0.0], 1e-8)
    assert res.value == pytest.approx(4.0, rel=1e-6)


def test_smooth_polynomial_exact():
    res = adaptive_integrate(lambda Y: Y[:, 0] ** 3 * Y[:, 1] ** 2 + 1.0, Box([0, 0], [2, 1]),
                             1e-12)
    assert res.value == pytest.approx(4 * 1 / 3 + 2, rel=1e-13)


# -- flags and errors ------------------------------------------------------------

def test_budget_exhaustion_is_flagged():
    f = lambda Y: np.abs(Y[:, 0] - 0.3371) ** -0.9
    res = adaptive_integrate(f, Box([0.0], [1.0]), 1e-14, max_evals=200)
    assert res.flagged
    with pytest.raises(QuadratureError):
        adaptive_integrate(f, Box([0.0], [1.0]), 1e-14, max_evals=200, strict=True)


def test_dimension_cap():
    with pytest.raises(ValueError):
        adaptive_integrate(lambda Y: np.ones(len(Y)), Box(np.zeros(5), np.ones(5)), 1e-3)


def test_box_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        Box([1.0], [0.0])


def test_result_invariants():
    res = adaptive_integrate(lambda Y: np.exp(Y[:, 0]), Box([0.0], [1.0]), 1e-10)
    assert res.error_estimate >= 0 and res.cells >= 1
    assert res.value == pytest.approx(np.e - 1, rel=1e-12)


def test_batched_owners_match_single_calls():
    boxes = [Box([0.0], [1.0]), Box([-1.0], [2.0]), Box([0.5], [3.0])]
    sets = [[AffineSet.point([0.0], -0.5)], [AffineSet.point([0.0], -0.5)],
            [AffineSet.point([0.5], -0.5)]]
    shifts = np.array([0.0, 0.0, 0.5])
    res = adaptive_integrate_many(lambda Y, o: np.abs(Y[:, 0] - shifts[o]) ** -0.5, boxes,
                                  1e-9, sets)
    exact = [2.0, 2 + 2 * sqrt(2), 2 * sqrt(2.5)]
    for r, e in zip(res, exact):
        assert r.value == pytest.approx(e, rel=1e-8)


# -- properties ------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-0.9, 0.9))
def test_linearity(a, b, c):
    box = Box([-1.0], [1.0])
    sets = [AffineSet.point([c], -0.5)]
    f = lambda Y: np.abs(Y[:, 0] - c) ** -0.5
    g = lambda Y: np.cos(Y[:, 0])
    tol = 1e-9
    rf = adaptive_integrate(f, box, tol, sets).value
    rg = adaptive_integrate(g, box, tol, sets).value
    rs = adaptive_integrate(lambda Y: a * f(Y) + b * g(Y), box, tol, sets).value
    assert rs == pytest.approx(a * rf + b * rg, rel=1e-7, abs=1e-8)


def test_refinement_monotonicity():
    f = lambda Y: np.linalg.norm(Y, axis=1) ** -1
    exact = 8 * log(1 + sqrt(2))
    errs = []
    for tol in (1e-3, 5e-4, 2.5e-4, 1.25e-4, 6.25e-5):
        r = adaptive_integrate(f, Box([-1.0, -1.0], [1.0, 1.0]), tol,
                               [AffineSet.point([0, 0], -1.0)])
        errs.append(abs(r.value - exact))
    assert all(e2 <= e1 * 1.0000001 for e1, e2 in zip(errs, errs[1:])), errs


@pytest.mark.parametrize("n", [1, 2, 3])
def test_ball_rule_moments(n):
    X, W = ball_rule(n, 12, 12)
    # int_{B} |y|^(2k) = |S^(n-1)| / (2k + n)
    area = 2 * pi ** (n / 2) / gamma(n / 2)
    for k in range(4):
        assert np.sum(W * np.sum(X * X, axis=1) ** k) == pytest.approx(area / (2 * k + n),
                                                                       rel=1e-13)
    assert abs(np.sum(W * X[:, 0] ** 3)) < 1e-14


# -- Riesz blocks and tensor application -----------------------------------------------

def test_riesz_far_field_expansion():
    g = SmoothBump([0.0, 0.0], 1.0)
    mass = pi / 5  # int (1 - |y|^2)^4 over the unit disk
    rel = []
    for R in (10.0, 40.0, 160.0):
        x = np.array([R, 0.0])
        v = riesz_block_apply(0.5, g, x, 1e-10).value
        rel.append(abs(v / (R ** -1.5 * mass) - 1))
    assert rel[0] > rel[1] > rel[2]
    assert rel[2] < 1e-3


def test_riesz_mean_zero_decay_slope():
    g = OddBump([0.0], 1.0)
    radii = np.array([8.0, 16.0, 32.0, 64.0])
    vals = [abs(riesz_block_apply(0.5, g, [R], 1e-11).value) for R in radii]
    slope = np.polyfit(np.log(radii), np.log(vals), 1)[0]
    # one vanishing moment buys one extra power of decay
    assert slope == pytest.approx(0.5 - 1 - 1, abs=0.02)


def test_riesz_kernel_range():
    with pytest.raises(ValueError):
        riesz_kernel(1.5, 1)


def test_tensor_apply_unit_kernels():
    one = BlockKernel(1, lambda x, Y: np.ones(Y.shape[0]))
    res = tensor_apply([one, one], lambda Y: np.ones(Y.shape[0]), np.zeros(2),
                       Box([0.0, 0.0], [1.0, 1.0]), 1e-10)
    assert res.value == pytest.approx(1.0, rel=1e-12)


def test_tensor_apply_separable_is_product():
    g1 = SmoothBump([0.1], 0.8)
    g2 = SmoothBump([-0.2], 0.6)
    x = np.array([0.3, 0.1])
    K1, K2 = riesz_kernel(0.5, 1), riesz_kernel(0.25, 1)
    f = lambda Y: g1(Y[:, :1]) * g2(Y[:, 1:])
    support = Box([-0.7, -0.8], [0.9, 0.4])
    res = tensor_apply([K1, K2], f, x, support, 1e-8)
    expected = riesz_block_apply(0.5, g1, x[:1], 1e-10).value * \
        riesz_block_apply(0.25, g2, x[1:], 1e-10).value
    assert res.value == pytest.approx(expected, rel=1e-6)


def test_tensor_apply_matches_direct_quadrature():
    f = lambda Y: np.clip(1 - np.sum(Y ** 2, axis=1), 0, None) ** 3 * (1 + Y[:, 0] * Y[:, 1] + Y[:, 1])
    x = np.array([0.25, -0.4])
    K = riesz_kernel(0.5, 1)
    support = Box([-1.0, -1.0], [1.0, 1.0])
    iterated = tensor_apply([K, K], f, x, support, 1e-7).value
    direct = adaptive_integrate(
        lambda Y: np.abs(Y[:, 0] - x[0]) ** -0.5 * np.abs(Y[:, 1] - x[1]) ** -0.5 * f(Y),
        support, 1e-8, [AffineSet.coordinate(2, 0, x[0], -0.5),
                        AffineSet.coordinate(2, 1, x[1], -0.5)]).value
    assert iterated == pytest.approx(direct, rel=1e-4)


def test_tensor_apply_dimension_mismatch():
    K = riesz_kernel(0.5, 1)
    with pytest.raises(ValueError):
        tensor_apply([K, K], lambda Y: np.ones(len(Y)), np.zeros(3), Box([0, 0], [1, 1]))
