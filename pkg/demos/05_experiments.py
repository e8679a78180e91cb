"""Verification experiments: far-field decay and dilation scaling.

Each experiment returns a report with per-case records (exportable as CSV)
and named pass/fail checks.  The uniform atom suite is slower and is run by
the acceptance tests or by `fracop experiment uniform`.
"""

from fractions import Fraction

from fracop.oplab.config import ExperimentConfig
from fracop.oplab.experiments import far_decay_experiment, reproduce_example, scaling_exponent_experiment

print(reproduce_example().summary_text())

# Projected atoms decay like |x|^-(n(1-r) + N); the unprojected control decays
# one order slower.
rep = far_decay_experiment(ExperimentConfig(n=2))
print()
print(rep.summary_text())

# ||T_r a_t||_q for dilated atoms: constant in t for q = 1/(1/p - r),
# with slope -n(1/p - r - 1/q) in log t otherwise.
cfg = ExperimentConfig(n=2, r=Fraction(1, 2), p=(Fraction(1),),
                       dilations=(Fraction(1, 2), Fraction(1), Fraction(2)), tol=1e-2)
rep = scaling_exponent_experiment(cfg)
print()
print(rep.summary_text())
print(rep.to_csv().splitlines()[0])
