from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracop.exactlin import (FamilyError, FamilySpec, NormalizationError, RationalMatrix,
                             Subspace, as_fraction, build_normalization, canonical_family,
                             canonical_projection, family_from_factors, intersect, null_space,
                             parse_matrix, random_family, rank, validate_family,
                             verify_projections, worked_example_family)

A1, A2, A3 = worked_example_family().matrices

PARTITIONS = [(1, 1), (1, 1, 1), (2, 1), (1, 2), (2, 2), (1, 1, 2), (1, 1, 1, 1)]


def vecs(*rows):
    return tuple(tuple(Fraction(v) for v in r) for r in rows)


# -- parsing and arithmetic ---------------------------------------------------

def test_parse_matrix_text_format():
    M = parse_matrix("4,4,-1; 0,0,0; -4,-4,1")
    assert M.shape == (3, 3)
    assert M[2, 0] == -4
    assert parse_matrix("1/2, -3/4; 0, 5")[0, 1] == Fraction(-3, 4)


def test_text_round_trip():
    M = parse_matrix("2/21,1/21,-1/21; 1/7,0,1/7; 2/21,1/21,2/21")
    assert parse_matrix(M.to_text()) == M


@pytest.mark.parametrize("text", ["1,2; 3", "1,x; 0,1", "", "1,,2; 3,4,5"])
def test_parse_matrix_rejects_malformed(text):
    with pytest.raises(ValueError):
        parse_matrix(text)


def test_as_fraction_is_exact_for_decimal_strings():
    assert as_fraction("0.1") == Fraction(1, 10)
    assert as_fraction(3) == Fraction(3)
    assert as_fraction("-7/14") == Fraction(-1, 2)


int_matrices = st.integers(2, 4).flatmap(
    lambda n: st.lists(st.lists(st.integers(-5, 5), min_size=n, max_size=n),
                       min_size=n, max_size=n))


@settings(max_examples=60, deadline=None)
@given(int_matrices)
def test_det_and_rank_match_floating_oracle(rows):
    M = RationalMatrix.from_rows(rows)
    A = np.array(rows, dtype=float)
    assert float(M.det()) == pytest.approx(np.linalg.det(A), abs=1e-6)
    assert rank(M) == np.linalg.matrix_rank(A)


@settings(max_examples=60, deadline=None)
@given(int_matrices)
def test_inverse_is_exact(rows):
    M = RationalMatrix.from_rows(rows)
    if M.det() == 0:
        with pytest.raises(ZeroDivisionError):
            M.inverse()
    else:
        assert M @ M.inverse() == RationalMatrix.identity(M.rows)


@settings(max_examples=60, deadline=None)
@given(int_matrices)
def test_rank_nullity(rows):
    M = RationalMatrix.from_rows(rows)
    K = null_space(M)
    assert rank(M) + K.dim == M.cols
    for v in K.basis:
        assert all(x == 0 for x in M @ v)


# -- null spaces and intersections ---------------------------------------------

def test_null_spaces_of_worked_example():
    assert null_space(A1).basis == vecs((1, 0, 4), (0, 1, 4))
    assert null_space(A2).basis == vecs((1, 1, 0), (0, 0, 1))
    assert null_space(A3).basis == vecs((1, 0, 1), (0, 1, 0))


def test_null_space_of_invertible_matrix_is_trivial():
    assert null_space(RationalMatrix.identity(3)).dim == 0


def test_null_space_of_zero_matrix_is_everything():
    assert null_space(RationalMatrix.zeros(3, 3)).dim == 3


def test_intersections_of_worked_example():
    N1, N2, N3 = (null_space(A) for A in (A1, A2, A3))
    assert intersect(N1, N2).basis == vecs((1, 1, 8))
    assert intersect(N1, N3).basis == vecs((4, -3, 4))
    assert intersect(N2, N3).basis == vecs((1, 1, 1))


def test_intersection_is_idempotent():
    U = null_space(A1)
    assert intersect(U, U).same_span(U)


def test_intersection_dimension_mismatch():
    with pytest.raises(ValueError):
        intersect(Subspace.full(2), Subspace.full(3))


def test_subspace_rejects_dependent_basis():
    with pytest.raises(ValueError):
        Subspace(2, ((1, 2), (2, 4)))


# -- validation -----------------------------------------------------------------

def test_worked_example_validates():
    rep = validate_family(worked_example_family())
    assert rep.ok, str(rep)


@pytest.mark.parametrize("partition", PARTITIONS)
def test_canonical_family_validates(partition):
    assert validate_family(canonical_family(partition)).ok


def test_duplicated_matrix_fails():
    spec = FamilySpec(3, (1, 1, 1), (A1, A1, A3))
    rep = validate_family(spec)
    assert not rep.ok
    failed = {c.name for c in rep.failed()}
    assert "direct_sum" in failed


def test_singular_sum_is_named():
    P = parse_matrix("1,0; 0,0")
    rep = validate_family(FamilySpec(2, (1, 1), (P, P)))
    assert not rep["sum_invertible"].passed


def test_wrong_rank_is_named():
    spec = FamilySpec(2, (1, 1), (RationalMatrix.identity(2), parse_matrix("0,0; 0,1")))
    assert not validate_family(spec)["rank[A1]"].passed


# -- normalization ----------------------------------------------------------------

def test_worked_example_normalization_with_given_bases():
    spec = worked_example_family()
    norm = build_normalization(spec, [[(1, 1, 1)], [(4, -3, 4)], [(1, 1, 8)]])
    assert norm.C == parse_matrix("1,4,1; 1,-3,1; 1,4,8")
    assert norm.B == parse_matrix("7,7,-7; 0,-14,21; -7,0,7")
    assert norm.B_inv == parse_matrix("2/21,1/21,-1/21; 1/7,0,1/7; 2/21,1/21,2/21")
    assert norm.projections[0] == parse_matrix("1,0,0; 0,0,0; 0,0,0")
    assert norm.projections[1] == parse_matrix("0,0,0; 0,1,0; 0,0,0")
    assert verify_projections(norm, spec)


def test_default_basis_matches_given_bases_for_worked_example():
    spec = worked_example_family()
    assert build_normalization(spec).C == parse_matrix("1,4,1; 1,-3,1; 1,4,8")


def test_canonical_family_normalizes_to_identity():
    spec = canonical_family((1, 2))
    norm = build_normalization(spec, [[(1, 0, 0)], [(0, 1, 0), (0, 0, 1)]])
    assert norm.C == RationalMatrix.identity(3)
    assert norm.B == RationalMatrix.identity(3)


def test_perturbed_certificate_is_rejected():
    spec = worked_example_family()
    norm = build_normalization(spec)
    rows = [list(r) for r in norm.C.entries]
    rows[0][0] += 1
    broken = type(norm)(RationalMatrix.from_rows(rows), norm.B, norm.B_inv, norm.projections)
    assert not verify_projections(broken, spec)


def test_invalid_basis_choice_is_reported():
    spec = worked_example_family()
    with pytest.raises(NormalizationError):
        build_normalization(spec, [[(1, 0, 0)], [(4, -3, 4)], [(1, 1, 8)]])
    with pytest.raises(NormalizationError):
        build_normalization(spec, [[(1, 1, 1)], [(4, -3, 4)]])


def test_inadmissible_family_cannot_be_normalized():
    P = parse_matrix("1,0; 0,0")
    with pytest.raises(FamilyError):
        build_normalization(FamilySpec(2, (1, 1), (P, P)))


def test_identity_factors_give_projections():
    spec = family_from_factors(RationalMatrix.identity(3), RationalMatrix.identity(3), (1, 1, 1))
    for j, A in enumerate(spec.matrices):
        assert A == canonical_projection((1, 1, 1), j)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(PARTITIONS), st.integers(0, 10 ** 6))
def test_random_family_round_trip(partition, seed):
    spec = random_family(sum(partition), partition, seed)
    assert validate_family(spec).ok
    assert verify_projections(build_normalization(spec), spec)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(PARTITIONS), st.integers(0, 10 ** 6))
def test_intersection_dimensions_and_images(partition, seed):
    spec = random_family(sum(partition), partition, seed)
    W = spec.complementary_intersections()
    for k, Wk in enumerate(W):
        assert Wk.dim == partition[k]
        image = RationalMatrix.from_columns([spec.matrices[k] @ v for v in Wk.basis])
        assert rank(image) == partition[k]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_projection_property_for_any_valid_basis(seed):
    spec = random_family(3, (1, 2), seed)
    W = spec.complementary_intersections()
    rng = np.random.default_rng(seed)
    choice = []
    for Wk in W:
        # random invertible recombination of the default basis
        while True:
            M = rng.integers(-3, 4, size=(Wk.dim, Wk.dim))
            if round(np.linalg.det(M)) != 0:
                break
        choice.append([tuple(sum(int(M[i, j]) * Wk.basis[j][c] for j in range(Wk.dim))
                             for c in range(3)) for i in range(Wk.dim)])
    assert verify_projections(build_normalization(spec, choice), spec)


def test_random_family_is_deterministic():
    assert random_family(3, (1, 1, 1), 5) == random_family(3, (1, 1, 1), 5)
