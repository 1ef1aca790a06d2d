"""Stabilized H(div) finite elements for linearized magnetohydrodynamics on tetrahedra."""

from .forms import PhysicalParams, StabParams
from .mesh import TetMesh, generate_structured_cube, load_tetgen, mesh_metrics
from .fespace import build_spaces
from .mms import AdvectionFields, exact_solution, forcing, boundary_data
from .system import ProblemData, assemble_system, solve
from .analysis import compute_errors, convergence_rates, regime_diagnostics

__version__ = "0.1.0"

__all__ = [
    "PhysicalParams", "StabParams", "TetMesh", "generate_structured_cube", "load_tetgen",
    "mesh_metrics", "build_spaces", "AdvectionFields", "exact_solution", "forcing",
    "boundary_data", "ProblemData", "assemble_system", "solve", "compute_errors",
    "convergence_rates", "regime_diagnostics",
]
