"""Discrete penalized problem: state solve, boundary tracing and the objective."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .costs import Constant, NormalDerivativeMisfit
from .level_geom import (DEFAULT_DT, LevelFunction, TracedBoundary, TracedComponent,
                         trace_boundary)
from .mesh_fem import (FeSpace, PoissonSolver, Triangulation, assemble_load,
                       assemble_stiffness, weighted_load, weighted_mass)

log = logging.getLogger(__name__)

VARIATION_SCHEMES = ("consistent", "backward_euler")


@dataclass(frozen=True)
class ObjectiveBreakdown:
    """J = t1 + t2 / epsilon."""

    t1: float
    t2: float
    epsilon: float

    @property
    def J(self):
        return self.t1 + self.t2 / self.epsilon


class ShapeProblem:
    """Fixed-mesh data shared by every evaluation of the penalized problem."""

    def __init__(self, mesh: Triangulation, source=-4.0, cost=None, epsilon=1e-4,
                 dt=DEFAULT_DT, scheme="euler", u_degree=1, variation="consistent",
                 period_term=True):
        if epsilon <= 0 or dt <= 0:
            raise ValueError("epsilon and dt must be positive")
        if variation not in VARIATION_SCHEMES:
            raise ValueError(f"unknown variation scheme {variation!r}")
        self.mesh = mesh
        self.space = FeSpace(mesh, 3)
        self.u_space = self.space if u_degree == 3 else FeSpace(mesh, u_degree)
        self.source = source
        self.cost = cost if cost is not None else NormalDerivativeMisfit(Constant(1.0))
        self.epsilon = float(epsilon)
        self.dt = float(dt)
        self.scheme = scheme
        # "consistent" linearizes the tracer itself (forward Euler only);
        # "backward_euler" is the implicit variation scheme
        self.variation = variation
        self.period_term = bool(period_term)
        self.K = assemble_stiffness(self.space)
        self.solver = PoissonSolver(self.K)
        self.F = assemble_load(self.space, source)

    @cached_property
    def u_to_w(self):
        """Interpolation of u-space fields at the P3 nodes."""
        if self.u_space is self.space:
            return None
        return self.u_space.basis_matrix(self.space.nodes)

    def u_on_w_nodes(self, U):
        return U if self.u_to_w is None else self.u_to_w @ U

    def w_to_u_nodes(self, X):
        """Restrict a P3 coefficient vector to the u-space nodes."""
        if self.u_space is self.space:
            return X
        return X[self.space.vertex_nodes]

    def control_load(self, G, U):
        """(int (g_h)_+^2 u_h phi_i) over interior nodes, i.e. B1(G) U."""
        gp = np.maximum(self.space.at_quad(G), 0.0)
        return weighted_load(self.space, gp ** 2 * self.u_space.at_quad(U))[self.space.interior]

    def solve_state(self, G, U):
        return self.space.extend(self.solver.solve(self.F + self.control_load(G, U)))

    def state(self, G, U, seeds=None, boundary=None, Y=None):
        """Full evaluation at (G, U); geometry may be frozen via ``boundary``."""
        g = LevelFunction(self.space, G)
        if boundary is None:
            boundary = trace_boundary(g, self.dt, self.scheme, seeds=seeds)
        if Y is None:
            Y = self.solve_state(g.G, U)
        return State(self, g, np.asarray(U, float), Y, boundary)

    def objective(self, G, U, seeds=None):
        return self.state(G, U, seeds=seeds).breakdown


@dataclass(eq=False)
class BoundaryData:
    """Fields sampled at the quadrature nodes Z_1..Z_m of one component."""

    comp: TracedComponent
    Phi: object
    y: np.ndarray
    grad_y: np.ndarray
    normal: np.ndarray
    j: np.ndarray
    dj_x: np.ndarray
    dj_p: np.ndarray

    @property
    def weights(self):
        return self.comp.weights


@dataclass(eq=False)
class State:
    problem: ShapeProblem
    g: LevelFunction
    U: np.ndarray
    Y: np.ndarray
    boundary: TracedBoundary
    data: list = field(init=False)

    def __post_init__(self):
        space = self.problem.space
        cost = self.problem.cost
        gy = [space.recovery_matrices[a] @ self.Y for a in range(2)]
        self.grad_y_coef = tuple(gy)
        self.data = []
        for comp in self.boundary:
            Z = comp.nodes
            Phi = space.basis_matrix(Z)
            grad_y = np.column_stack([Phi @ gy[0], Phi @ gy[1]])
            grad_g = np.column_stack([Phi @ self.g.grad_coef[0], Phi @ self.g.grad_coef[1]])
            normal = grad_g / np.hypot(grad_g[:, 0], grad_g[:, 1])[:, None]
            self.data.append(BoundaryData(
                comp=comp, Phi=Phi, y=Phi @ self.Y, grad_y=grad_y, normal=normal,
                j=cost.value(Z, grad_y, normal), dj_x=cost.grad_x(Z, grad_y, normal),
                dj_p=cost.grad_p(Z, grad_y, normal)))

    @property
    def G(self):
        return self.g.G

    @property
    def n_components(self):
        return len(self.boundary)

    @cached_property
    def breakdown(self):
        t1 = sum(float(d.weights @ d.j) for d in self.data)
        t2 = sum(float(d.weights @ d.y ** 2) for d in self.data)
        return ObjectiveBreakdown(t1, t2, self.problem.epsilon)

    @property
    def J(self):
        return self.breakdown.J


def dirichlet_cost(problem: ShapeProblem, G, eta=3e-2, dt=None):
    """Boundary cost of the Dirichlet problem posed in {g < 0}.

    The solve is fictitious-domain style on the fixed mesh: -lap z = f with
    a 1/eta mass penalty where g > 0. A stiff penalty locks on the cut P3
    elements, hence the moderate default. Returns (t1, boundary) with t1
    the cost j on the traced zero set of g.
    """
    space = problem.space
    g = LevelFunction(space, G)
    outside = (space.at_quad(g.G) > 0).astype(float)
    Kf = assemble_stiffness(space, full=True)
    Mp = weighted_mass(space, space, outside / eta, interior_rows=False)
    idx = space.interior
    A = (Kf + Mp).tocsr()[idx][:, idx]
    z = space.extend(PoissonSolver(A).solve(problem.F))
    boundary = trace_boundary(g, dt or problem.dt, problem.scheme)
    gz = [space.recovery_matrices[a] @ z for a in range(2)]
    t1 = 0.0
    for comp in boundary:
        Phi = space.basis_matrix(comp.nodes)
        grad_z = np.column_stack([Phi @ gz[0], Phi @ gz[1]])
        grad_g = np.column_stack([Phi @ g.grad_coef[0], Phi @ g.grad_coef[1]])
        normal = grad_g / np.hypot(grad_g[:, 0], grad_g[:, 1])[:, None]
        t1 += float(comp.weights @ problem.cost.value(comp.nodes, grad_z, normal))
    return t1, boundary
