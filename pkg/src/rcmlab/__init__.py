"""
rcmlab: numerical laboratory for the random conductance model on Z^d.

Sample i.i.d. edge weights, compute principal Dirichlet eigenpairs on
boxes, and study traps, percolation clusters, path bounds and extreme
values of the local speed measure.
"""
from ._accel import backend
from .environment import (BoxSpec, ConductanceLaw, Environment, SpeedField, pi_field,
                          sample_environment, uniform_field)
from .errors import (ConfigurationError, ConvergenceError, DomainError, NumericalError,
                     PreconditionError)
from .spectral import (DirichletOperator, EigenPair, assemble_dirichlet_operator, dense_oracle,
                       dirichlet_energy, homogeneous_lambda1, principal_eigenpair)
from .traps import ThresholdFamily, bad_edge_census, bc_integral, find_traps, lambda_g
from .percolation import (HoleMap, build_Dn, build_Dn_at, build_hole_map, cluster_density,
                          clusters, edge_boundary_ratio, is_b_sparse, threshold_open)
from .paths import (PathMap, build_detour_paths, detour_cluster_bound, neighbor_map,
                    pathvsrw_bound, subgraph_energy, subgraph_operator)
from .extremes import (Decomposition, TailModel, F_chi_bounds, chi_field, find_shift, ks_distance,
                       limit_cdf, order_statistics, quotient_statistic, scale_h, uniquemax_check)
from .experiments import ExperimentConfig, run, scaling_slope

__version__ = "0.1.0"
