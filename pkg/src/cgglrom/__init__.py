"""Adaptive Galerkin model reduction with global POD modes and local finite-element patches."""
from .cggl import (
    BlockSolver,
    GeneralizedCoords,
    TrialSpace,
    assemble_jacobian,
    assemble_jacobian_blocks,
    assemble_residual,
    build_prolongation,
    build_trial_space,
    eval_qoi,
    prolong,
    reconstruct,
    solve_primal,
)
from .dwr_adapt import AdaptHistory, adaptive_solve, build_fine_pair, estimate_error, refine_step, select_patch
from .eqp import EqpWeights, train_eqp
from .errors import *  # noqa: F401,F403
from .estimator import CgglRegressor, PODTransformer
from .mesh import Domain, PatchGrid, StructuredMesh, build_patch_grid, localize_patch, refine_patch
from .metrics import Truth, compute_metrics, solve_truth
from .problem import Parameter, poisson_problem
from .rom import GlobalBasis, ReferenceDiscretization, compute_snapshot, pod

__version__ = "0.1.0"
