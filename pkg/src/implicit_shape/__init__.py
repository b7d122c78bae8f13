"""Shape optimization with implicit boundary parametrization and a fictitious control.

Admissible domains are the negativity sets of P3 level functions on a fixed
mesh; their boundaries are traced as periodic Hamiltonian orbits.
"""

from .costs import Annulus, Circle, Constant, NormalDerivativeMisfit
from .level_geom import LevelFunction, TracedBoundary, TracedComponent, trace, trace_boundary
from .mesh_fem import FeSpace, Triangulation, build_structured_mesh
from .optimizer import OptimizerSettings, evaluate_objective, line_search, run
from .problem import ObjectiveBreakdown, ShapeProblem, State

__all__ = [
    "Annulus", "Circle", "Constant", "NormalDerivativeMisfit",
    "LevelFunction", "TracedBoundary", "TracedComponent", "trace", "trace_boundary",
    "FeSpace", "Triangulation", "build_structured_mesh",
    "OptimizerSettings", "evaluate_objective", "line_search", "run",
    "ObjectiveBreakdown", "ShapeProblem", "State",
]
