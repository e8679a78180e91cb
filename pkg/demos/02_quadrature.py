"""Adaptive cubature for integrands with power-law singularities.

The integrator is told where the integrand blows up (points, coordinate
hyperplanes or general affine sets, each with an exponent) and uses
Jacobi-weighted rules on cells touching them.  Each result carries an error
estimate and a convergence flag.
"""

import numpy as np

from fracop.quadrature import (AffineSet, Box, adaptive_integrate, integrate_ball,
                               riesz_block_apply, riesz_kernel, tensor_apply)

# int_0^1 y^(-1/2) dy = 2
r = adaptive_integrate(lambda Y: Y[:, 0] ** -0.5, Box([0.0], [1.0]), 1e-10,
                       [AffineSet.point([0.0], -0.5)])
print(f"1d endpoint singularity: {r.value:.12f} (exact 2), est. error {r.error_estimate:.1e}")

# int over [-1,1]^2 of |y1 y2|^(-1/2) = 16, singular along both axes
sets = [AffineSet.coordinate(2, 0, 0.0, -0.5), AffineSet.coordinate(2, 1, 0.0, -0.5)]
r = adaptive_integrate(lambda Y: np.abs(Y[:, 0] * Y[:, 1]) ** -0.5,
                       Box([-1.0, -1.0], [1.0, 1.0]), 1e-10, sets)
print(f"product singularity:     {r.value:.12f} (exact 16), cells {r.cells}")

# int over the unit disc of |y|^-1 = 2 pi, in polar coordinates
r = integrate_ball(lambda Y: 1 / np.linalg.norm(Y, axis=1), [0.0, 0.0], 1.0, 1e-10,
                   center_power=-1.0)
print(f"disc with point pole:    {r.value:.12f} (exact {2 * np.pi:.12f})")


class Indicator:
    """Indicator of [-1, 1], with the attributes the block solvers look for."""
    center, radius = np.zeros(1), 1.0

    def __call__(self, Y):
        return np.ones(len(np.atleast_2d(Y)))


# one-dimensional Riesz potential of order 1/2 at the origin: int_-1^1 |y|^-1/2 = 4
print(f"Riesz block at 0:        {riesz_block_apply(0.5, Indicator(), [0.0], 1e-10).value:.12f}")

# the tensor product of two Riesz kernels applied to a Gaussian bump
K = riesz_kernel(0.5, 1)
g = lambda Y: np.exp(-np.sum(np.atleast_2d(Y) ** 2, axis=1))
for x in ([0.0, 0.0], [0.5, -0.25]):
    r = tensor_apply([K, K], g, np.array(x), Box([-6, -6], [6, 6]), 1e-8)
    print(f"tensor Riesz at {x}: {r.value:.8f}  flagged={r.flagged}")
