"""Blocking geometry, exact covariance sums and a Wiener-sheet coupling lab for associated lattice fields."""
__version__ = "0.1.0"

from ._backend import BACKEND
from .coupling import (EmpiricalCDF, STANDARD_NORMAL, build_coupled_sheet, compute_block_stats,
                       coupling_error_profile, decompose_core, empirical_cdf, quantile_transform,
                       run_coupling_experiment)
from .covariance import (IIDCovariance, KernelCovariance, PowerCovariance, ProductGeometric, exact_sigma2,
                         model_from_dict)
from .fields import FieldModel, conditional_fill, simulate_field, simulate_wiener_sheet, tent_kernel
from .geometry import BlockGeometry, Parameters, boundary_sequence, enumerate_psi, validate_parameters
from .lattice import PrefixGrid, Rect, build_prefix_grid, checked_prod, rect_sum, rect_sums
from .verify import (clt_rate_check, ks_distance, lil_tracker, maximal_inequality_check, moment_bound_check,
                     profile_growth_check, term_bound_suite)
