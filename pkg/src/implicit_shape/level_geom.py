"""Zero level sets of P3 level functions traced as Hamiltonian orbits."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from . import _kernels
from .mesh_fem import FeSpace, recover_gradient, recover_hessian

log = logging.getLogger(__name__)

DEFAULT_DT = 1e-3
M_MIN = 10
MAX_STEPS = 10_000_000
GRAD_FLOOR_REL = 1e-8
# closure guard radius, in step lengths at the seed
CLOSURE_STEPS = 20.0
SCHEMES = {"euler": 0, "rk4": 1}


class TraceError(RuntimeError):
    pass


class OrbitNotClosedError(TraceError):
    pass


class GradientFloorError(TraceError):
    pass


class LeftDomainError(TraceError):
    pass


class LevelFunction:
    """P3 level function g_h with cached recovered derivatives."""

    def __init__(self, space: FeSpace, G):
        if space.degree != 3:
            raise ValueError("level functions live on the P3 space")
        self.space = space
        self.G = np.asarray(G, float).copy()
        self.G.setflags(write=False)
        gx, gy = recover_gradient(space, self.G)
        self.grad_coef = (np.ascontiguousarray(gx), np.ascontiguousarray(gy))

    @classmethod
    def from_function(cls, space, func):
        return cls(space, space.interpolate(func))

    def __call__(self, points):
        return self.space.evaluate(self.G, points)

    def gradient(self, points):
        """Recovered gradient at points, shape (p, 2)."""
        B = self.space.basis_matrix(points)
        return np.column_stack([B @ self.grad_coef[0], B @ self.grad_coef[1]])

    @cached_property
    def hessian_coef(self):
        return recover_hessian(self.space, self.G)

    @cached_property
    def grad_max(self):
        return float(np.hypot(*self.grad_coef).max())

    def boundary_positive(self):
        return bool(np.all(self.G[self.space.boundary] > 0))


@dataclass(frozen=True, eq=False)
class TracedComponent:
    """One closed orbit: samples Z_0..Z_m at t_k = k dt.

    The section through Z_0 is reached a fraction ``theta`` of the way
    through the last step; the last quadrature node is weighted by it.
    """

    seed: np.ndarray
    dt: float
    points: np.ndarray
    theta: float
    scheme: str = "euler"

    @property
    def m(self):
        return len(self.points) - 1

    @property
    def period(self):
        return self.m * self.dt

    @property
    def times(self):
        return self.dt * np.arange(1, self.m + 1)

    @cached_property
    def velocities(self):
        """Z'(t_k) = (Z_k - Z_{k-1}) / dt for k = 1..m."""
        return np.diff(self.points, axis=0) / self.dt

    @cached_property
    def speeds(self):
        return np.hypot(self.velocities[:, 0], self.velocities[:, 1])

    @cached_property
    def step_weights(self):
        w = np.ones(self.m)
        w[-1] = self.theta
        return w

    @cached_property
    def weights(self):
        """Right Riemann weights dt * w_k * |Z'(t_k)| at Z_1..Z_m."""
        return self.dt * self.step_weights * self.speeds

    @property
    def nodes(self):
        """Quadrature nodes Z_1..Z_m."""
        return self.points[1:]

    @property
    def length(self):
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class TracedBoundary:
    components: list = field(default_factory=list)

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    @property
    def seeds(self):
        return [c.seed for c in self.components]


def _closure_guard(speed0, dt):
    return CLOSURE_STEPS * dt * speed0


def trace(g: LevelFunction, x0, dt=DEFAULT_DT, scheme="euler", max_steps=MAX_STEPS,
          m_min=M_MIN):
    """Integrate z' = (-d2 g, d1 g) from x0 over one period."""
    mesh = g.space.mesh
    grid, ptr, tris = mesh.locator
    origin, tinv = mesh.affine
    x0 = np.asarray(x0, float)
    where = f"({x0[0]:.6g}, {x0[1]:.6g})"
    speed0 = float(np.hypot(*g.gradient(x0[None, :])[0]))
    floor = GRAD_FLOOR_REL * g.grad_max
    pts, m, theta, status, info = _kernels.trace_orbit(
        x0[0], x0[1], float(dt), SCHEMES[scheme], int(max_steps), int(m_min),
        _closure_guard(speed0, dt), floor, grid, ptr, tris, origin, tinv,
        g.space.cells, g.grad_coef[0], g.grad_coef[1])
    if status == _kernels.TRACE_MAX_STEPS:
        raise OrbitNotClosedError(
            f"orbit from {where} did not close in {max_steps} steps "
            f"(last distance to start {info:.3e})")
    if status == _kernels.TRACE_GRAD_FLOOR:
        raise GradientFloorError(
            f"|grad g| = {info:.3e} below floor {floor:.3e} on orbit from {where}")
    if status == _kernels.TRACE_LEFT_DOMAIN:
        raise LeftDomainError(f"orbit from {where} left the hold-all after {m} steps")
    if m < 3:
        raise TraceError("orbit closed in fewer than 3 steps")
    return TracedComponent(seed=x0.copy(), dt=float(dt), points=pts.copy(),
                           theta=float(theta), scheme=scheme)


def _edge_root(g, a, b):
    d = b - a
    f = lambda s: float(g.space.evaluate(g.G, (a + s * d)[None, :])[0])
    fa, fb = f(0.0), f(1.0)
    if fa == 0.0:
        return a.copy()
    if fb == 0.0:
        return b.copy()
    s = brentq(f, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return a + s * d


def trace_boundary(g: LevelFunction, dt=DEFAULT_DT, scheme="euler", seeds=None,
                   max_steps=MAX_STEPS):
    """Trace every component of the zero set of g.

    Without explicit ``seeds``, mesh edges with a sign change of g at their
    end vertices are bisected one at a time; edges near an already traced
    orbit are skipped.
    """
    if seeds is not None:
        comps = [trace(g, s, dt, scheme, max_steps) for s in seeds]
        return TracedBoundary(comps)

    mesh = g.space.mesh
    gv = g.G[g.space.vertex_nodes]
    neg = gv < 0
    E = mesh.edges
    crossing = np.flatnonzero(neg[E[:, 0]] != neg[E[:, 1]])
    if len(crossing) == 0:
        return TracedBoundary([])
    mids = mesh.vertices[E[crossing]].mean(axis=1)
    visited = np.zeros(len(crossing), bool)
    radius = 0.6 * mesh.h_max
    comps = []
    for i in range(len(crossing)):
        if visited[i]:
            continue
        a, b = mesh.vertices[E[crossing[i]]]
        x0 = _edge_root(g, a, b)
        comp = trace(g, x0, dt, scheme, max_steps)
        comps.append(comp)
        tree = cKDTree(comp.points)
        near = tree.query(mids, distance_upper_bound=radius)[0] < np.inf
        visited |= near
        visited[i] = True
    return TracedBoundary(comps)


def seed_components(g: LevelFunction, dt=DEFAULT_DT, scheme="euler"):
    """One start point on each component of the zero set of g."""
    return trace_boundary(g, dt, scheme).seeds


def curve_integral(comp: TracedComponent, integrand):
    """Right Riemann sum of integrand(t, Z(t)) |Z'(t)| over one period."""
    vals = np.asarray(integrand(comp.times, comp.nodes), float) * np.ones(comp.m)
    return float(vals @ comp.weights)


def assemble_nz(boundary: TracedBoundary, space: FeSpace):
    """N(Z) = sum over components of the boundary mass matrix (interior block)."""
    n0 = space.n0
    N = sp.csr_matrix((n0, n0))
    for comp in boundary:
        Phi = space.basis_matrix(comp.nodes)[:, space.interior]
        N = N + (Phi.T @ sp.diags(comp.weights) @ Phi)
    N = N.tocsr()
    return ((N + N.T) * 0.5).tocsr()


def outward_normal(g: LevelFunction, x):
    grad = g.gradient(np.asarray(x, float).reshape(-1, 2))
    norm = np.hypot(grad[:, 0], grad[:, 1])
    floor = GRAD_FLOOR_REL * g.grad_max
    if np.any(norm < floor):
        raise GradientFloorError("normal undefined where |grad g| vanishes")
    n = grad / norm[:, None]
    return n[0] if np.ndim(x) == 1 else n


def hausdorff_distance(a, b):
    """Symmetric Hausdorff distance between two point clouds."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return max(cKDTree(b).query(a)[0].max(), cKDTree(a).query(b)[0].max())


def write_curve(path, comp: TracedComponent):
    """Lines "t x y speed" for k = 0..m."""
    speeds = np.concatenate([[comp.speeds[0]], comp.speeds])
    t = comp.dt * np.arange(comp.m + 1)
    np.savetxt(path, np.column_stack([t, comp.points, speeds]), fmt="%.17g")


def read_curve(path):
    data = np.loadtxt(path, ndmin=2)
    return data[:, 0], data[:, 1:3], data[:, 3]
