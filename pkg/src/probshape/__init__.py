"""Mesh-free probabilistic shape optimization toolkit.

Reconstructs an unknown planar domain from tracking data by iterating a
neural state solve, Monte Carlo evaluation of a probabilistic shape
derivative, an H1 boundary gradient on a polygonal chain, and a fixed-step
vertex update.
"""

from .deformation import SurfaceFEM, assemble_system, galerkin_project, solve_deformation, update_vertices
from .driver import IterationRecord, RunConfig, RunResult, mc_objective, parse_config, run
from .geometry import (
    ChainPoint,
    GeometryError,
    PolygonalBoundary,
    Rectangle,
    TrackingData,
    contains_exact,
    project_to_boundary,
    signed_area,
)
from .monte_carlo import (
    ExitSampleSet,
    PartitionEstimate,
    SamplingError,
    acceptance_rejection,
    estimate_partition,
    euler_maruyama_exit,
    sample_exits,
    sample_random_starts,
)
from .neural_level_set import AdamState, NeuralLevelSet, adam_update, forward, gradient, laplacian
from .pinn import CollocationSet, PiecewiseConstantSchedule, pinn_loss, sample_collocation, train, transfer_train
from .shape_derivative import DerivativeVector, assemble, boundary_term, evaluate_basis, mc_expectation_term

__version__ = "0.1.0"
