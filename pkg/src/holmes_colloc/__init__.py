"""Meshfree strong-form collocation with signed maximum-entropy bases."""

from .analysis import (ConvergenceReport, ConvergenceRow, fit_rate,
                       load_report, relative_error, run_convergence,
                       save_report, solve_single)
from .collocation import (CollocationError, CollocationSystem,
                          ProblemDefinition, Reference, assemble, dump_matrix,
                          evaluate_solution, solve_system)
from .geometry import (DIRICHLET, INTERIOR, NEUMANN, DomainSpec, NodeSet,
                       characteristic_spacing, disk, generate_nodes, interval,
                       l_shape, load_nodes, neighbors_within, nurbs_domain,
                       perturb_nodes, quarter_plate, save_nodes, sphere,
                       target_h_for_count)
from .maxent import (BasisEval, ContinuityReport, DualDivergenceError,
                     DualState, HolmesParams, InfeasibleSupportError,
                     MultiIndexSet, continuity_probe, evaluate_basis,
                     holmes_params, multi_indices, solve_dual,
                     truncation_radius)
from .nurbs import NurbsCurve, load_curve
from .problems import (AcousticParams, ElasticityParams, WilliamsParams,
                       BENCHMARKS, bessel_j, make_patch_problem, make_problem,
                       star_curve)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
