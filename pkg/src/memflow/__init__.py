"""Parametric finite element flow of two-phase biomembranes."""

from __future__ import annotations

from .assembly import (
    BlockSystem,
    DiscreteState,
    PhaseParams,
    assemble_coupled_system,
    assemble_phase_block,
    build_geometry,
)
from .flow import DiagnosticsRecord, initialize_state, integrate, run, time_step
from .generators import generate_mesh
from .io import SimulationConfig, parse_config, read_off, write_off, write_vtk
from .mesh import TwoPhaseSurfaceMesh, validate
from .solver import CoupledSolver, SolverConfig

__version__ = "0.1.0"

__all__ = [
    "BlockSystem", "CoupledSolver", "DiagnosticsRecord", "DiscreteState", "PhaseParams",
    "SimulationConfig", "SolverConfig", "TwoPhaseSurfaceMesh", "assemble_coupled_system",
    "assemble_phase_block", "build_geometry", "generate_mesh", "initialize_state", "integrate",
    "parse_config", "read_off", "run", "time_step", "validate", "write_off", "write_vtk",
]
