"""Triangulations of the hold-all rectangle, Lagrange P1/P3 spaces and assembly.

All global matrices are assembled over the full node set and then restricted
to the interior nodes (zero Dirichlet data on the rectangle boundary).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import roots_jacobi

from . import _kernels

log = logging.getLogger(__name__)

DIRECT_SOLVER_LIMIT = 200_000
CG_RTOL = 1e-10


class MeshError(ValueError):
    pass


class PointLocationError(ValueError):
    """A query point lies outside the triangulated rectangle."""


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Triangulation
# ---------------------------------------------------------------------------

class Triangulation:
    """Conforming triangulation with a bucket grid for point location."""

    def __init__(self, vertices, triangles, boundary=None):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (n, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (m, 3)")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise MeshError("triangle index out of range")

        p = vertices[triangles]
        signed = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        scale = np.ptp(vertices, axis=0).max() ** 2
        if np.any(np.abs(signed) <= 1e-14 * scale):
            raise MeshError("degenerate triangle")
        flip = signed < 0
        triangles[flip] = triangles[flip][:, [0, 2, 1]]

        self.vertices = vertices
        self.triangles = triangles
        self.areas = np.abs(signed)
        self._boundary_given = None if boundary is None else np.asarray(boundary, bool)
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def bbox(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])

    @cached_property
    def _edge_data(self):
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        edges, inverse, counts = np.unique(e, axis=0, return_inverse=True,
                                           return_counts=True)
        inverse = inverse.reshape(3, -1).T  # (m, 3): local edge k -> global edge
        return edges, inverse.copy(), counts

    @property
    def edges(self):
        return self._edge_data[0]

    @property
    def triangle_edges(self):
        """Global edge index of local edges (0,1), (1,2), (2,0)."""
        return self._edge_data[1]

    @cached_property
    def boundary_edges(self):
        counts = self._edge_data[2]
        if np.any(counts > 2):
            raise MeshError("non-manifold edge")
        return counts == 1

    @cached_property
    def boundary(self):
        if self._boundary_given is not None:
            return self._boundary_given
        flags = np.zeros(self.n_vertices, bool)
        flags[self.edges[self.boundary_edges].ravel()] = True
        return flags

    @cached_property
    def h_max(self):
        d = self.vertices[self.edges[:, 0]] - self.vertices[self.edges[:, 1]]
        return float(np.sqrt((d ** 2).sum(axis=1)).max())

    @cached_property
    def affine(self):
        """Per-triangle origin and inverse Jacobian mapping x to (l1, l2)."""
        p = self.vertices[self.triangles]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        return np.ascontiguousarray(p[:, 0]), np.ascontiguousarray(np.linalg.inv(jac))

    @cached_property
    def grad_bary(self):
        """Gradients of the barycentric coordinates, shape (m, 3, 2)."""
        _, tinv = self.affine
        g = np.empty((self.n_triangles, 3, 2))
        g[:, 1] = tinv[:, 0]
        g[:, 2] = tinv[:, 1]
        g[:, 0] = -g[:, 1] - g[:, 2]
        return g

    @cached_property
    def locator(self):
        xmin, xmax, ymin, ymax = self.bbox
        cs = np.sqrt(self.areas.mean() * 2.0)
        nx = max(1, int(np.ceil((xmax - xmin) / cs)))
        ny = max(1, int(np.ceil((ymax - ymin) / cs)))
        cw = (xmax - xmin) / nx
        ch = (ymax - ymin) / ny
        p = self.vertices[self.triangles]
        eps = 1e-9
        i0 = np.clip(((p[..., 0].min(1) - xmin) / cw - eps).astype(int), 0, nx - 1)
        i1 = np.clip(((p[..., 0].max(1) - xmin) / cw + eps).astype(int), 0, nx - 1)
        j0 = np.clip(((p[..., 1].min(1) - ymin) / ch - eps).astype(int), 0, ny - 1)
        j1 = np.clip(((p[..., 1].max(1) - ymin) / ch + eps).astype(int), 0, ny - 1)
        cells, tris = [], []
        for t in range(self.n_triangles):
            jj, ii = np.mgrid[j0[t]:j1[t] + 1, i0[t]:i1[t] + 1]
            c = (jj * nx + ii).ravel()
            cells.append(c)
            tris.append(np.full(len(c), t))
        cells = np.concatenate(cells)
        tris = np.concatenate(tris)
        order = np.argsort(cells, kind="stable")
        ptr = np.zeros(nx * ny + 1, dtype=np.int64)
        np.add.at(ptr, cells + 1, 1)
        grid = np.array([xmin, ymin, cw, ch, nx, ny], dtype=float)
        return grid, np.cumsum(ptr), tris[order].astype(np.int64)

    def locate(self, points):
        """Containing triangle and barycentric coordinates for each point.

        Triangles are -1 (and coordinates NaN) for points outside the mesh.
        """
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
        grid, ptr, tris = self.locator
        origin, tinv = self.affine
        return _kernels.locate_many(pts, grid, ptr, tris, origin, tinv)


def build_structured_mesh(rect, n_x, n_y, pattern="diagonal"):
    """Structured triangulation of ``rect = (xmin, xmax, ymin, ymax)``.

    ``pattern`` is ``"diagonal"`` (2 triangles per cell) or ``"crossed"``
    (4 triangles per cell around the cell centre). Vertices are numbered
    lexicographically by (y, x).
    """
    xmin, xmax, ymin, ymax = map(float, rect)
    if n_x < 2 or n_y < 2:
        raise MeshError("n_x and n_y must be at least 2")
    if not (xmax > xmin and ymax > ymin):
        raise MeshError("degenerate rectangle")
    xs = np.linspace(xmin, xmax, n_x + 1)
    ys = np.linspace(ymin, ymax, n_y + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.mgrid[0:n_y, 0:n_x]
    v00 = (j * (n_x + 1) + i).ravel()
    v10, v01, v11 = v00 + 1, v00 + n_x + 1, v00 + n_x + 2
    if pattern == "diagonal":
        tris = np.concatenate([np.column_stack([v00, v10, v11]),
                               np.column_stack([v00, v11, v01])])
        order = np.argsort(np.tile(np.arange(n_x * n_y), 2), kind="stable")
        tris = tris[order]
    elif pattern == "crossed":
        centres = np.column_stack([(X[:-1, :-1] + X[:-1, 1:]).ravel() / 2,
                                   (Y[:-1, :-1] + Y[1:, :-1]).ravel() / 2])
        c = len(verts) + np.arange(n_x * n_y)
        verts = np.vstack([verts, centres])
        tris = np.stack([np.column_stack([v00, v10, c]),
                         np.column_stack([v10, v11, c]),
                         np.column_stack([v11, v01, c]),
                         np.column_stack([v01, v00, c])], axis=1).reshape(-1, 3)
        perm = np.lexsort((verts[:, 0], verts[:, 1]))
        rank = np.empty_like(perm)
        rank[perm] = np.arange(len(perm))
        verts = verts[perm]
        tris = rank[tris]
    else:
        raise MeshError(f"unknown pattern {pattern!r}")
    boundary = ((np.isclose(verts[:, 0], xmin) | np.isclose(verts[:, 0], xmax)
                 | np.isclose(verts[:, 1], ymin) | np.isclose(verts[:, 1], ymax)))
    return Triangulation(verts, tris, boundary)


def write_mesh(path, mesh):
    with open(path, "w") as fh:
        fh.write(f"vertices {mesh.n_vertices} triangles {mesh.n_triangles}\n")
        for (x, y), b in zip(mesh.vertices, mesh.boundary):
            fh.write(f"{float(x)!r} {float(y)!r} {int(b)}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")


def read_mesh(path):
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 4 or head[0] != "vertices" or head[2] != "triangles":
            raise MeshError(f"{path}: bad header line")
        nv, nt = int(head[1]), int(head[3])
        rows = [fh.readline().split() for _ in range(nv)]
        verts = np.array([[float(r[0]), float(r[1])] for r in rows])
        flags = np.array([int(r[2]) for r in rows], bool)
        tris = np.array([[int(v) for v in fh.readline().split()] for _ in range(nt)])
    return Triangulation(verts, tris, flags)


# ---------------------------------------------------------------------------
# Reference element
# ---------------------------------------------------------------------------

def triangle_quadrature(order=5):
    """Conical product rule on the reference triangle.

    Returns barycentric points (q, 3) and weights summing to 1; exact for
    polynomials of degree ``2 * order - 1``.
    """
    tj, wj = roots_jacobi(order, 1.0, 0.0)
    tl, wl = np.polynomial.legendre.leggauss(order)
    u = (1 + tj) / 2
    v = (1 + tl) / 2
    U, V = np.meshgrid(u, v, indexing="ij")
    x = U.ravel()
    y = (V * (1 - U)).ravel()
    w = (np.outer(wj, wl) / 8.0).ravel() * 2.0
    return np.column_stack([1 - x - y, x, y]), w


# local P3 nodes: 3 vertices, 2 per edge (01, 12, 20), centroid
_P3_NODE_BARY = np.array([
    [1, 0, 0], [0, 1, 0], [0, 0, 1],
    [2 / 3, 1 / 3, 0], [1 / 3, 2 / 3, 0],
    [0, 2 / 3, 1 / 3], [0, 1 / 3, 2 / 3],
    [1 / 3, 0, 2 / 3], [2 / 3, 0, 1 / 3],
    [1 / 3, 1 / 3, 1 / 3]])


def _p1_basis(lam):
    return np.array(lam, dtype=float)


def _p1_dbasis(lam):
    return np.broadcast_to(np.eye(3), (len(lam), 3, 3)).copy()


def _p3_basis(lam):
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    return np.column_stack([
        0.5 * l0 * (3 * l0 - 1) * (3 * l0 - 2),
        0.5 * l1 * (3 * l1 - 1) * (3 * l1 - 2),
        0.5 * l2 * (3 * l2 - 1) * (3 * l2 - 2),
        4.5 * l0 * l1 * (3 * l0 - 1),
        4.5 * l0 * l1 * (3 * l1 - 1),
        4.5 * l1 * l2 * (3 * l1 - 1),
        4.5 * l1 * l2 * (3 * l2 - 1),
        4.5 * l2 * l0 * (3 * l2 - 1),
        4.5 * l2 * l0 * (3 * l0 - 1),
        27 * l0 * l1 * l2])


def _p3_dbasis(lam):
    """Derivatives of the P3 basis w.r.t. (l0, l1, l2), shape (q, 10, 3)."""
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    z = np.zeros_like(l0)

    def vert(l):
        return 0.5 * (27 * l * l - 18 * l + 2)

    def edge_near(a, b):
        # d/da, d/db of 4.5 a b (3a - 1)
        return 4.5 * b * (6 * a - 1), 4.5 * a * (3 * a - 1)

    d = np.zeros((len(l0), 10, 3))
    d[:, 0, 0] = vert(l0)
    d[:, 1, 1] = vert(l1)
    d[:, 2, 2] = vert(l2)
    d[:, 3, 0], d[:, 3, 1] = edge_near(l0, l1)
    d[:, 4, 1], d[:, 4, 0] = edge_near(l1, l0)
    d[:, 5, 1], d[:, 5, 2] = edge_near(l1, l2)
    d[:, 6, 2], d[:, 6, 1] = edge_near(l2, l1)
    d[:, 7, 2], d[:, 7, 0] = edge_near(l2, l0)
    d[:, 8, 0], d[:, 8, 2] = edge_near(l0, l2)
    d[:, 9] = 27 * np.column_stack([l1 * l2, l0 * l2, l0 * l1]) + z[:, None]
    return d


# ---------------------------------------------------------------------------
# Finite element spaces
# ---------------------------------------------------------------------------

class FeSpace:
    """Continuous Lagrange space of degree 1 or 3 on a triangulation."""

    def __init__(self, mesh: Triangulation, degree: int, quad_order: int = 5):
        if degree not in (1, 3):
            raise ValueError("degree must be 1 or 3")
        self.mesh = mesh
        self.degree = degree
        if degree == 1:
            self.nodes = mesh.vertices
            self.cells = mesh.triangles
            self.boundary = mesh.boundary.copy()
            self.vertex_nodes = np.arange(mesh.n_vertices)
            self._basis, self._dbasis = _p1_basis, _p1_dbasis
            self.node_bary = np.eye(3)
        else:
            self._build_p3()
            self._basis, self._dbasis = _p3_basis, _p3_dbasis
            self.node_bary = _P3_NODE_BARY
        self.interior = np.flatnonzero(~self.boundary)
        self.nodes.setflags(write=False)
        self.cells.setflags(write=False)

        self.q_bary, self.q_ref_weights = triangle_quadrature(quad_order)
        self.q_phi = self._basis(self.q_bary)
        self.q_dphi = self._dbasis(self.q_bary)

    def _build_p3(self):
        mesh = self.mesh
        nv, ne, nt = mesh.n_vertices, len(mesh.edges), mesh.n_triangles
        V, E, T = mesh.vertices, mesh.edges, mesh.triangles
        # edge e = (a, b), a < b: node 2e near a, node 2e+1 near b
        edge_pts = np.empty((2 * ne, 2))
        edge_pts[0::2] = (2 * V[E[:, 0]] + V[E[:, 1]]) / 3
        edge_pts[1::2] = (V[E[:, 0]] + 2 * V[E[:, 1]]) / 3
        centres = V[T].mean(axis=1)
        pts = np.vstack([V, edge_pts, centres])

        te = mesh.triangle_edges
        cells = np.empty((nt, 10), dtype=np.int64)
        cells[:, :3] = T
        for k, (i, j) in enumerate([(0, 1), (1, 2), (2, 0)]):
            e = te[:, k]
            near_i_is_low = T[:, i] < T[:, j]
            cells[:, 3 + 2 * k] = nv + 2 * e + np.where(near_i_is_low, 0, 1)
            cells[:, 4 + 2 * k] = nv + 2 * e + np.where(near_i_is_low, 1, 0)
        cells[:, 9] = nv + 2 * ne + np.arange(nt)

        bnd = np.concatenate([mesh.boundary,
                              np.repeat(mesh.boundary_edges, 2),
                              np.zeros(nt, bool)])
        key = np.round(pts, 12)
        perm = np.lexsort((key[:, 0], key[:, 1]))
        rank = np.empty_like(perm)
        rank[perm] = np.arange(len(perm))
        self.nodes = pts[perm]
        self.cells = rank[cells]
        self.boundary = bnd[perm]
        self.vertex_nodes = rank[:nv]

    # -- basic info -------------------------------------------------------
    @property
    def n(self):
        return len(self.nodes)

    @property
    def n0(self):
        return len(self.interior)

    @property
    def n_local(self):
        return self.cells.shape[1]

    def interpolate(self, func):
        return np.asarray(func(self.nodes[:, 0], self.nodes[:, 1]), float) * np.ones(self.n)

    def extend(self, interior_values):
        """Full coefficient vector from interior values (zeros on the boundary)."""
        out = np.zeros(self.n)
        out[self.interior] = interior_values
        return out

    # -- quadrature -------------------------------------------------------
    @cached_property
    def q_points(self):
        V = self.mesh.vertices[self.mesh.triangles]
        return np.einsum("qa,tad->tqd", self.q_bary, V)

    @cached_property
    def q_weights(self):
        return self.mesh.areas[:, None] * self.q_ref_weights[None, :]

    def at_quad(self, coef):
        """Values of the field at every quadrature point, shape (m, q)."""
        return np.asarray(coef)[self.cells] @ self.q_phi.T

    def q_gradients(self, q):
        """Basis gradients at quadrature point ``q`` of every triangle, (m, nloc, 2)."""
        return np.einsum("la,tad->tld", self.q_dphi[q], self.mesh.grad_bary)

    # -- point evaluation -------------------------------------------------
    def locate(self, points):
        tris, bary = self.mesh.locate(points)
        if np.any(tris < 0):
            bad = np.atleast_2d(points)[tris < 0][0]
            raise PointLocationError(f"point {tuple(bad)} lies outside the mesh")
        return tris, bary

    def basis_matrix(self, points):
        """Sparse matrix of basis values, row p = (phi_i(points[p]))_i."""
        tris, bary = self.locate(points)
        vals = self._basis(bary)
        npts = len(tris)
        rows = np.repeat(np.arange(npts), self.n_local)
        return sp.csr_matrix((vals.ravel(), (rows, self.cells[tris].ravel())),
                             shape=(npts, self.n))

    def evaluate(self, coef, points):
        tris, bary = self.locate(points)
        return np.einsum("pl,pl->p", self._basis(bary), np.asarray(coef)[self.cells[tris]])

    def element_gradient(self, coef, points):
        """Piecewise gradient of the field at points (one-sided on edges)."""
        tris, bary = self.locate(points)
        d = self._dbasis(bary)
        gl = self.mesh.grad_bary[tris]
        grads = np.einsum("pla,pad->pld", d, gl)
        return np.einsum("pld,pl->pd", grads, np.asarray(coef)[self.cells[tris]])

    # -- derivative recovery ---------------------------------------------
    @cached_property
    def recovery_matrices(self):
        """Area-weighted nodal averaging of elementwise partial derivatives."""
        nt, nl = self.cells.shape
        dn = self._dbasis(self.node_bary)                  # (a, b, c)
        d = np.einsum("abc,tcd->tabd", dn, self.mesh.grad_bary)
        area = self.mesh.areas
        rows = np.broadcast_to(self.cells[:, :, None], (nt, nl, nl)).ravel()
        cols = np.broadcast_to(self.cells[:, None, :], (nt, nl, nl)).ravel()
        wsum = np.bincount(self.cells.ravel(), weights=np.repeat(area, nl),
                           minlength=self.n)
        inv = sp.diags(1.0 / wsum)
        mats = []
        for axis in range(2):
            vals = (area[:, None, None] * d[..., axis]).ravel()
            m = sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))
            mats.append((inv @ m).tocsr())
        return tuple(mats)


@dataclass
class FeField:
    """Coefficient vector on a space (full node set)."""

    space: FeSpace
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.space.n,):
            raise ValueError(f"expected {self.space.n} coefficients, got {self.values.shape}")

    def __call__(self, points):
        return self.space.evaluate(self.values, points)

    @property
    def interior_values(self):
        return self.values[self.space.interior]


def evaluate(field: FeField, x):
    """Value of a finite element field at a single point."""
    return float(field.space.evaluate(field.values, np.asarray(x, float)[None, :])[0])


def recover_derivative(space: FeSpace, coef, axis):
    """Recovered nodal partial derivative (axis 1 or 2) of a field."""
    if axis not in (1, 2):
        raise ValueError("axis must be 1 or 2")
    return space.recovery_matrices[axis - 1] @ np.asarray(coef, float)


def recover_gradient(space: FeSpace, coef):
    p1, p2 = space.recovery_matrices
    coef = np.asarray(coef, float)
    return p1 @ coef, p2 @ coef


def recover_hessian(space: FeSpace, coef):
    """(H11, H12, H21, H22) by repeated recovery; mixed terms averaged."""
    d1, d2 = recover_gradient(space, coef)
    p1, p2 = space.recovery_matrices
    h11 = p1 @ d1
    h22 = p2 @ d2
    h12 = 0.5 * (p2 @ d1 + p1 @ d2)
    return h11, h12, h12.copy(), h22


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _sym(mat):
    mat = mat.tocsr()
    return ((mat + mat.T) * 0.5).tocsr()


def assemble_stiffness(space: FeSpace, full=False):
    """Stiffness matrix restricted to interior nodes (``full`` keeps all nodes)."""
    nt, nl = space.cells.shape
    ke = np.zeros((nt, nl, nl))
    for q in range(len(space.q_ref_weights)):
        g = space.q_gradients(q)
        ke += space.q_weights[:, q, None, None] * np.einsum("tid,tjd->tij", g, g)
    ke = 0.5 * (ke + ke.transpose(0, 2, 1))
    rows = np.broadcast_to(space.cells[:, :, None], ke.shape).ravel()
    cols = np.broadcast_to(space.cells[:, None, :], ke.shape).ravel()
    K = _sym(sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(space.n, space.n)))
    if full:
        return K
    idx = space.interior
    return _sym(K[idx][:, idx])


def weighted_mass(test: FeSpace, trial: FeSpace, weight_q, interior_rows=True):
    """Matrix (int w phi_j psi_i) with ``weight_q`` given at quadrature points."""
    if test.mesh is not trial.mesh:
        raise ValueError("spaces must share a mesh")
    w = test.q_weights * weight_q
    me = np.einsum("tq,qi,qj->tij", w, test.q_phi, trial.q_phi)
    rows = np.broadcast_to(test.cells[:, :, None], me.shape).ravel()
    cols = np.broadcast_to(trial.cells[:, None, :], me.shape).ravel()
    M = sp.csr_matrix((me.ravel(), (rows, cols)), shape=(test.n, trial.n))
    if interior_rows:
        M = M[test.interior]
    return M


def weighted_load(space: FeSpace, weight_q):
    """Vector (int w phi_i) over all nodes, ``weight_q`` at quadrature points."""
    w = space.q_weights * weight_q
    le = w @ space.q_phi
    return np.bincount(space.cells.ravel(), weights=le.ravel(), minlength=space.n)


def positive_part(g_space: FeSpace, G):
    return np.maximum(g_space.at_quad(G), 0.0)


def assemble_b1(g_space: FeSpace, G, u_space: FeSpace):
    """B1 = (int (g_h)_+^2 phi_j phi_i), rows on interior nodes of ``g_space``."""
    gp = positive_part(g_space, G)
    return weighted_mass(g_space, u_space, gp ** 2)


def assemble_c1(g_space: FeSpace, G, u_space: FeSpace, U):
    """C1 = (int 2 (g_h)_+ u_h phi_j phi_i), columns on ``g_space`` nodes."""
    gp = positive_part(g_space, G)
    return weighted_mass(g_space, g_space, 2.0 * gp * u_space.at_quad(U))


def assemble_load(space: FeSpace, f):
    """F_i = int f phi_i on interior nodes; ``f`` is a constant or f(x, y)."""
    if callable(f):
        q = space.q_points
        fq = np.asarray(f(q[..., 0], q[..., 1]), float) * np.ones(q.shape[:2])
    else:
        fq = np.full(space.q_weights.shape, float(f))
    return weighted_load(space, fq)[space.interior]


# ---------------------------------------------------------------------------
# Linear solves
# ---------------------------------------------------------------------------

class PoissonSolver:
    """Factorize the interior stiffness matrix once; reuse for every solve."""

    def __init__(self, K, rtol=CG_RTOL):
        self.K = K.tocsc()
        self.rtol = rtol
        self.direct = K.shape[0] <= DIRECT_SOLVER_LIMIT
        if self.direct:
            try:
                self._lu = spla.splu(self.K, permc_spec="MMD_AT_PLUS_A",
                                     diag_pivot_thresh=0.0,
                                     options={"SymmetricMode": True})
            except RuntimeError as exc:
                raise SolverError(f"factorization failed: {exc}") from exc
        else:
            self._precond = sp.diags(1.0 / self.K.diagonal())

    def solve(self, rhs):
        rhs = np.asarray(rhs, float)
        if not np.any(rhs):
            return np.zeros_like(rhs)
        if self.direct:
            x = self._lu.solve(rhs)
        else:
            x, info = spla.cg(self.K, rhs, rtol=self.rtol, M=self._precond,
                              maxiter=10 * len(rhs))
            if info != 0:
                res = np.linalg.norm(self.K @ x - rhs) / np.linalg.norm(rhs)
                raise SolverError(f"CG did not converge (relative residual {res:.3e})")
        return x

    def residual(self, x, rhs):
        return np.linalg.norm(self.K @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)


def solve_state(solver: PoissonSolver, F, B1, U, space: FeSpace):
    """Solve K Y = F + B1 U; returns Y over all nodes of ``space``."""
    rhs = F + B1 @ U
    Y = solver.solve(rhs)
    res = solver.residual(Y, rhs)
    if res > 1e-8:
        raise SolverError(f"state solve residual {res:.3e}")
    return space.extend(Y)


# ---------------------------------------------------------------------------
# Field files
# ---------------------------------------------------------------------------

def write_field(path, values):
    with open(path, "w") as fh:
        for v in np.asarray(values, float).tolist():
            fh.write(f"{v!r}\n")


def read_field(path, n=None):
    vals = np.loadtxt(path, dtype=float, ndmin=1)
    if n is not None and len(vals) != n:
        raise ValueError(f"{path}: expected {n} coefficients, found {len(vals)}")
    return vals
