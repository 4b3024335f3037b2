"""Shape optimisation of obstacles in Bingham channel flow.

Taylor-Hood P2-P1 finite elements, semismooth Newton state solves, approximate
adjoints, Eulerian shape derivatives and an augmented Lagrangian outer loop.
"""
from .bingham import FlowBCs, MixedField, NewtonReport, PhysicsParams, solve_state, solve_stokes_initial
from .mesh import TriangleMesh, load_msh, write_msh
from .optimizer import AugLagState, OptSettings, OptTrace, optimize

__all__ = [
    "AugLagState",
    "FlowBCs",
    "MixedField",
    "NewtonReport",
    "OptSettings",
    "OptTrace",
    "PhysicsParams",
    "TriangleMesh",
    "load_msh",
    "optimize",
    "solve_state",
    "solve_stokes_initial",
    "write_msh",
]

__version__ = "0.1.0"
