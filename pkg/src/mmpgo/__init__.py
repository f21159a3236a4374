"""Distributed pose-graph optimization by majorization minimization.

The objective is ``F(X) = 1/2 sum kappa |R_i R~ - R_j|^2 + tau |R_i t~ + t_i - t_j|^2``
over poses split among robots.  Every robot minimizes a separable upper
bound of ``F`` on its own block; :func:`mm_pgo` iterates those updates and
:func:`amm_pgo` adds per-robot Nesterov momentum with an adaptive restart.
:func:`chordal_initialization` provides the starting point and
:func:`run_distributed` executes any of them with explicit message passing.
"""

from .chordal import amm_chordal, chordal_initialization, translation_init
from .distributed import SeparatorMessage, communication_volume, run_distributed
from .errors import (
    DegenerateProjection,
    DimensionMismatch,
    InvalidGraph,
    InvalidParameter,
    InvalidPartition,
    MissingReference,
    NumericalFailure,
    ParseError,
    PGOError,
    ProtocolViolation,
    SingularSubproblem,
)
from .graph import Measurement, PoseBlock, PoseEstimate, PoseGraph, merge, partition, transfer
from .local_solver import LocalSolveConfig, minimize_node_surrogate
from .manifold import project_rotations, project_to_rotation, retract, riemannian_gradient
from .quadratic import DEFAULT_XI, build_data_matrix, build_majorant, objective
from .solvers import SolverRun, amm_pgo, gradient_norm, mm_pgo

__all__ = [
    "DEFAULT_XI",
    "DegenerateProjection",
    "DimensionMismatch",
    "InvalidGraph",
    "InvalidParameter",
    "InvalidPartition",
    "LocalSolveConfig",
    "Measurement",
    "MissingReference",
    "NumericalFailure",
    "PGOError",
    "ParseError",
    "PoseBlock",
    "PoseEstimate",
    "PoseGraph",
    "ProtocolViolation",
    "SeparatorMessage",
    "SingularSubproblem",
    "SolverRun",
    "amm_chordal",
    "amm_pgo",
    "build_data_matrix",
    "build_majorant",
    "chordal_initialization",
    "communication_volume",
    "gradient_norm",
    "merge",
    "minimize_node_surrogate",
    "mm_pgo",
    "objective",
    "partition",
    "project_rotations",
    "project_to_rotation",
    "retract",
    "riemannian_gradient",
    "run_distributed",
    "transfer",
    "translation_init",
]
