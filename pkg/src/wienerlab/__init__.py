"""Invertibility diagnostics for adapted perturbations of identity on Wiener space.

The package discretizes [0, 1], samples or enumerates Brownian paths, and
measures how far the relative entropy of U = I + u falls below the kinetic
energy of u. A zero gap is consistent with U being invertible.
"""

__version__ = "0.1.0"

from .drifts import (ConstantShift, DriftError, DriftSpec, LinearFeedback, Scaled, Stopped, Tsirelson, Zero,
                     check_predictability, drift_from_dict, drift_rates, parse_drift)
from .entropy import (DiagnosticReport, decide, entropy_via_filter, entropy_via_inverse, gap_non_increasing,
                      invertibility_gap, kinetic_energy, refinement_study)
from .filtering import (FilterConfig, FilteredDrift, InnovationPath, conditional_girsanov, innovation_bm_test,
                        innovation_path, particle_filtered_drift, tree_conditional_drift)
from .girsanov import check_normalization, girsanov_weight, ito_sum
from .grid import GridError, TimeGrid, make_grid
from .paths import CameronMartinPath, SamplePath, cm_norm_sq, sample_brownian
from .stats import McEstimate
from .transform import analytic_inverse, apply_U, composition_residual, solve_inverse_sde
from .tree import TreeCapError, TreeModel, enumerate_tree
