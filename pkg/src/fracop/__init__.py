"""Fractional-type integral operators built from singular matrix families.

Submodules:

* :mod:`fracop.exactlin` -- exact rational linear algebra and family normalization
* :mod:`fracop.kernelops` -- the product kernel, its jets, geometry and far-field bound
* :mod:`fracop.atoms` -- smooth p-atoms with certified bounds
* :mod:`fracop.quadrature` -- adaptive cubature for power-law singularities
* :mod:`fracop.oplab` -- operator evaluation, norms, experiments and the CLI
"""

__version__ = "0.1.0"
