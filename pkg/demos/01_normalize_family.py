"""Normalizing a singular matrix family with exact arithmetic.

A family A_1..A_m of singular n x n matrices is admissible when the ranks
match a partition of n, the sum is invertible, and the intersections of
complementary kernels split R^n.  For such a family there are invertible C
and B with B^-1 A_j C equal to the coordinate projection onto block j.
Everything below is computed with fractions, so the identities are exact.
"""

from fracop.exactlin import (FamilySpec, build_normalization, parse_matrix, random_family,
                             validate_family, verify_projections, worked_example_family)

# The 3x3 worked family: three rank-one matrices
spec = worked_example_family()
print(validate_family(spec))

norm = build_normalization(spec)
print("\nC =\n", norm.C, sep="")
print("B =\n", norm.B, sep="")
print("det C =", norm.det_C)
for j, P in enumerate(norm.projections, start=1):
    print(f"B^-1 A{j} C =\n{P}")
print("exact certificate holds:", verify_projections(norm, spec))

# Random admissible families are built from random integer factors and
# always normalize back to the projections.
for seed in range(5):
    fam = random_family(4, (1, 2, 1), seed)
    print(f"random family seed {seed}: certificate", verify_projections(build_normalization(fam), fam))

# A family whose sum is singular is rejected with the failing hypothesis named.
bad = FamilySpec(2, (1, 1), (parse_matrix("1,0; 0,0"), parse_matrix("1,0; 0,0")))
print("\nsingular sum:")
for check in validate_family(bad).failed():
    print(f"  failing invariant {check.name}: {check.detail}")
