"""Birkhoff pseudospectral transcription and solution of optimal control problems."""

from .birkhoff import BirkhoffSystem, build_birkhoff, condition_report, identity_residuals
from .grids import Grid, GridError, GridFamily, GridKind, GridSpec, grid_by_name, make_grid
from .solver import (
    DualTrajectories,
    NlpSolution,
    SimpleNlp,
    SolverOptions,
    SolverStatus,
    extract_covectors,
    solve_nlp,
    solve_ocp,
)
from .transcription import FixedTime, FreeFinalTime, OcpDefinition, TranscribedNlp, transcribe

__version__ = "0.1.0"
