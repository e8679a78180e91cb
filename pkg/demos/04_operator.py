"""Evaluating the product-kernel operator and its L^q norms.

T_r f(x) = int prod_j |x - A_j y|^(-n_j (1 - r)) f(y) dy.  Values come from
adaptive cubature; far from the support a Taylor rule is used.  For atoms the
L^q norm splits into a quadrature part and an analytic tail bound.
"""

from fractions import Fraction

import numpy as np

from fracop.atoms import AtomSpec, build_atom
from fracop.exactlin import canonical_family, worked_example_family
from fracop.kernelops import KernelParams, tensor_domination_check
from fracop.oplab.operator import Bump, apply_Tr_many, conjugated_apply, lq_norm_Tr_atom

worked = KernelParams(worked_example_family(), Fraction(1, 2))
f = Bump([0.1, -0.2, 0.15], 0.6)
X = np.array([[0.2, -0.1, 0.3], [1.0, 0.5, -0.5], [6.0, 6.0, 6.0]])
for x, r in zip(X, apply_Tr_many(worked, f, X, 1e-6)):
    print(f"T f({x}) = {r.value:.8f}  error estimate {r.error_estimate:.1e}  flagged={r.flagged}")

# The normalization conjugates T_r into the model operator with A_j = P_j;
# both sides agree to quadrature accuracy.
x = np.array([0.4, -0.3, 0.2])
first, second = conjugated_apply(worked, worked.normalization, f, x, 1e-6)
print(f"\nconjugation: {first.value:.8f} vs {second.value:.8f}")

# The model kernel is dominated pointwise by the tensor Riesz kernel
canon = KernelParams(canonical_family((1, 1)), Fraction(1, 2))
rng = np.random.default_rng(0)
ok = all(tensor_domination_check(canon, rng.uniform(-3, 3, 2), rng.uniform(-3, 3, 2))
         for _ in range(1000))
print("tensor domination on 1000 samples:", ok)

# Norm of T_r on a 1-atom in the plane, q = 1 / (1/p - r) = 2
a = build_atom(AtomSpec(2, 1, (0.0, 0.0), 1.0, seed=0))
est = lq_norm_Tr_atom(canon, a, tol=1e-2)
print(f"\n||T a||_{est.q:g}: near {est.near_value:.5f}, tail bound {est.tail_bound:.2e}, "
      f"upper {est.total_upper:.5f}, radius {est.R_max:.1f}, flagged={est.flagged}")
