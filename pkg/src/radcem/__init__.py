"""Fine and multiscale (CEM-GMsFEM) simulation of the stochastic radiative heat equation."""
from .errors import InvalidArgument, InvariantViolation, PlacementFailure, SolverFailure
from .experiment import ExperimentConfig, RunResult, run_mc
from .grid import CoarseGrid, FineGrid

__all__ = ["CoarseGrid", "ExperimentConfig", "FineGrid", "InvalidArgument", "InvariantViolation",
           "PlacementFailure", "RunResult", "SolverFailure", "run_mc"]
__version__ = "0.1.0"
