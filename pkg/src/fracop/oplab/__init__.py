"""Operator laboratory: evaluation of ``T_r``, norm estimates, experiments and the CLI."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config_text
from .experiments import (Record, Report, atom_checks, far_decay_experiment, reproduce_example,
                          scaling_exponent_experiment, uniform_atom_experiment)
from .operator import (Bump, NormEstimate, Pullback, UnsupportedParameters, apply_Tr,
                       apply_Tr_many, conjugated_apply, far_field_values, lq_norm,
                       lq_norm_Tr_atom)
