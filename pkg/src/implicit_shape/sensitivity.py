"""Directional derivative of the discrete penalized objective and descent directions.

Perturbations (R, V) of (G, U) act through two linear maps: the variation
PDE R, V -> Q and, per traced component, the discrete variation ODE R -> W.
The gradient direction applies their transposes matrix-free (a backward
sweep of the 2x2 recursion). Since orbits close on a section, the period
itself depends on R; that contribution is kept unless disabled on the
problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh_fem import recover_hessian, weighted_load
from .problem import BoundaryData, State

SINGULAR_DET = 1e-14
SPEED_GUARD_REL = 1e-12


class SensitivityError(RuntimeError):
    pass


@dataclass(eq=False)
class ComponentVectors:
    """Coefficients multiplying W_k (k = 1..m) in dJ, grouped as in the formula.

    The variation recursion is W_k = M_k (W_{k-1} + dt f_k) when ``implicit``
    and W_k = M_k W_{k-1} + dt f_k otherwise, with f_k = (-d2 r, d1 r) sampled
    through ``forcing_Phi``. ``period`` holds the coefficients of the
    period-variation term on W_k and ``period_r`` the row vector of its
    direct dependence on R (through the section direction at the seed).
    """

    lam1: np.ndarray
    lam2: np.ndarray
    lam4: np.ndarray
    lam6: np.ndarray
    lam7: np.ndarray
    M: np.ndarray          # (m, 2, 2) step matrices
    forcing_Phi: object
    implicit: bool
    data: BoundaryData
    period: np.ndarray = None
    period_r: np.ndarray = None
    seed_Phi: object = None

    def total(self, epsilon):
        out = (self.lam1 + self.lam2 + 2.0 / epsilon * self.lam4
               + self.lam6 + self.lam7 / epsilon)
        if self.period is not None:
            out = out + self.period
        return out


@dataclass(eq=False)
class BoundaryVectors:
    components: list
    F3: np.ndarray          # interior nodes
    NY: np.ndarray          # N(Z) Y, interior nodes

    def adjoint_rhs(self, epsilon):
        return self.F3 + 2.0 / epsilon * self.NY


@dataclass
class DescentDirection:
    R: np.ndarray
    V: np.ndarray
    dJ: float
    q_part: float = np.nan

    @property
    def is_zero(self):
        return not (np.any(self.R) or np.any(self.V))


def _summation_by_parts(L):
    """Coefficients of W_k in sum_k L_k . (W_k - W_{k-1}) with W_0 = 0."""
    out = L.copy()
    out[:-1] -= L[1:]
    return out


def _jacobians(state: State, Phi):
    """A = Jacobian of (-d2 g, d1 g) at the rows of Phi, shape (p, 2, 2)."""
    h11, h12, h21, h22 = state.g.hessian_coef
    A = np.empty((Phi.shape[0], 2, 2))
    A[:, 0, 0] = -(Phi @ h12)
    A[:, 0, 1] = -(Phi @ h22)
    A[:, 1, 0] = Phi @ h11
    A[:, 1, 1] = Phi @ h21
    return A


def step_matrices(state: State, data: BoundaryData, implicit=True):
    """Step matrices of the variation recursion.

    Implicit: M_k = (I - dt A(Z_k))^{-1}. Explicit (the linearized forward
    Euler tracer): M_k = I + dt A(Z_{k-1}).
    """
    dt = data.comp.dt
    if not implicit:
        Phi = state.problem.space.basis_matrix(data.comp.points[:-1])
        M = dt * _jacobians(state, Phi)
        M[:, 0, 0] += 1.0
        M[:, 1, 1] += 1.0
        return M, Phi
    A = _jacobians(state, data.Phi)
    b11, b12 = 1 - dt * A[:, 0, 0], -dt * A[:, 0, 1]
    b21, b22 = -dt * A[:, 1, 0], 1 - dt * A[:, 1, 1]
    det = b11 * b22 - b12 * b21
    bad = np.flatnonzero(np.abs(det) < SINGULAR_DET)
    if len(bad):
        raise SensitivityError(f"singular variation step at k={bad[0]}")
    M = np.empty_like(A)
    M[:, 0, 0] = b22 / det
    M[:, 0, 1] = -b12 / det
    M[:, 1, 0] = -b21 / det
    M[:, 1, 1] = b11 / det
    return M, data.Phi


def _period_coefficients(state: State, data: BoundaryData, epsilon):
    """Derivative of J through the crossing fraction theta.

    The orbit closes on the section through Z_0 normal to d0 = X(Z_0)/|X|,
    X = (-d2 g, d1 g); theta = -s_{m-1}/(s_m - s_{m-1}) with
    s_k = (Z_k - Z_0).d0. Both W and the rotation of d0 under r move it.
    Returns (coefficients on W_k, row vector on X_r(Z_0)).
    """
    comp = data.comp
    m, theta = comp.m, comp.theta
    vel = comp.velocities[-1]
    seed = comp.points[0]
    X = state.g.gradient(seed[None, :])[0]
    X = np.array([-X[1], X[0]])
    xn = float(np.hypot(*X))
    d0 = X / xn
    denom = float(vel @ d0)
    if abs(denom) < SPEED_GUARD_REL * xn:
        raise SensitivityError("orbit crosses the closing section tangentially")
    F = data.j[-1] + data.y[-1] ** 2 / epsilon
    c = -F * comp.speeds[-1] / denom
    coef = np.zeros((m, 2))
    coef[-1] = c * theta * d0
    if m >= 2:
        coef[-2] = c * (1 - theta) * d0
    offset = theta * (comp.points[m] - seed) + (1 - theta) * (comp.points[m - 1] - seed)
    # d(d0) = (I - d0 d0^T) X_r / |X|
    row = c * (offset - d0 * (d0 @ offset)) / xn
    return coef, row


def build_boundary_vectors(state: State) -> BoundaryVectors:
    problem = state.problem
    space = problem.space
    p1, p2 = space.recovery_matrices
    hess_y = None
    comps = []
    F3_full = np.zeros(space.n)
    NY_full = np.zeros(space.n)
    for d in state.data:
        comp = d.comp
        speeds = comp.speeds
        if np.any(speeds <= SPEED_GUARD_REL * speeds.mean()):
            raise SensitivityError("vanishing orbit speed: grad g degenerate on the curve")
        w = comp.weights
        if hess_y is None:
            hess_y = recover_hessian(space, state.Y)
        H = np.stack([np.column_stack([d.Phi @ hess_y[0], d.Phi @ hess_y[1]]),
                      np.column_stack([d.Phi @ hess_y[2], d.Phi @ hess_y[3]])], axis=1)
        tangent = comp.velocities / speeds[:, None]
        lam1 = w[:, None] * d.dj_x
        lam2 = w[:, None] * np.einsum("ka,kab->kb", d.dj_p, H)
        lam4 = (w * d.y)[:, None] * d.grad_y
        sw = comp.step_weights
        lam6 = _summation_by_parts((sw * d.j)[:, None] * tangent)
        lam7 = _summation_by_parts((sw * d.y ** 2)[:, None] * tangent)
        implicit = problem.variation == "backward_euler" or comp.scheme != "euler"
        M, forcing_Phi = step_matrices(state, d, implicit)
        cv = ComponentVectors(lam1, lam2, lam4, lam6, lam7, M, forcing_Phi, implicit, d)
        if problem.period_term:
            cv.period, cv.period_r = _period_coefficients(state, d, problem.epsilon)
            cv.seed_Phi = space.basis_matrix(comp.points[:1])
        comps.append(cv)
        F3_full += p1.T @ (d.Phi.T @ (w * d.dj_p[:, 0]))
        F3_full += p2.T @ (d.Phi.T @ (w * d.dj_p[:, 1]))
        NY_full += d.Phi.T @ (w * d.y)
    return BoundaryVectors(comps, F3_full[space.interior], NY_full[space.interior])


def variation_load(state: State, R, V):
    """B1(G) V + C1(G, U) R on interior nodes."""
    problem = state.problem
    space = problem.space
    gp = np.maximum(space.at_quad(state.G), 0.0)
    w = gp ** 2 * problem.u_space.at_quad(V) + 2.0 * gp * problem.u_space.at_quad(state.U) * space.at_quad(R)
    return weighted_load(space, w)[space.interior]


def solve_variation_pde(state: State, R, V):
    """Q solving K Q = B1(G) V + C1(G, U) R; returned over all nodes."""
    problem = state.problem
    return problem.space.extend(problem.solver.solve(variation_load(state, R, V)))


def variation_forcing(state: State, Phi, R):
    p1, p2 = state.problem.space.recovery_matrices
    return np.column_stack([-(Phi @ (p2 @ R)), Phi @ (p1 @ R)])


def solve_variation_ode(state: State, vectors: ComponentVectors, R):
    """W_1..W_m of the variation system (W_0 = 0)."""
    f = vectors.data.comp.dt * variation_forcing(state, vectors.forcing_Phi, R)
    M = vectors.M
    m = len(M)
    W = np.empty((m, 2))
    w1 = w2 = 0.0
    implicit = vectors.implicit
    for k in range(m):
        if implicit:
            r1 = w1 + f[k, 0]
            r2 = w2 + f[k, 1]
            w1 = M[k, 0, 0] * r1 + M[k, 0, 1] * r2
            w2 = M[k, 1, 0] * r1 + M[k, 1, 1] * r2
        else:
            w1, w2 = (M[k, 0, 0] * w1 + M[k, 0, 1] * w2 + f[k, 0],
                      M[k, 1, 0] * w1 + M[k, 1, 1] * w2 + f[k, 1])
        W[k, 0] = w1
        W[k, 1] = w2
    return W


def _period_direct(state: State, vectors: ComponentVectors, R):
    """Part of the period term linear in R through the section direction."""
    if vectors.period_r is None:
        return 0.0
    xr = variation_forcing(state, vectors.seed_Phi, R)[0]
    return float(vectors.period_r @ xr)


def _ode_adjoint(state: State, vectors: ComponentVectors, coef):
    """Gradient w.r.t. R of sum_k coef_k . W_k(R)."""
    M = vectors.M
    m = len(M)
    B = np.empty((m, 2))
    psi1, psi2 = 0.0, 0.0
    implicit = vectors.implicit
    for k in range(m - 1, -1, -1):
        # psi_k = coef_k + M_{k+1}^T psi_{k+1}, already propagated below
        psi1 += coef[k, 0]
        psi2 += coef[k, 1]
        if implicit:
            psi1, psi2 = (M[k, 0, 0] * psi1 + M[k, 1, 0] * psi2,
                          M[k, 0, 1] * psi1 + M[k, 1, 1] * psi2)
            B[k, 0] = psi1
            B[k, 1] = psi2
        else:
            B[k, 0] = psi1
            B[k, 1] = psi2
            psi1, psi2 = (M[k, 0, 0] * psi1 + M[k, 1, 0] * psi2,
                          M[k, 0, 1] * psi1 + M[k, 1, 1] * psi2)
    return _forcing_adjoint(state, vectors.forcing_Phi, vectors.data.comp.dt * B)


def _forcing_adjoint(state: State, Phi, B):
    p1, p2 = state.problem.space.recovery_matrices
    return -(p2.T @ (Phi.T @ B[:, 0])) + p1.T @ (Phi.T @ B[:, 1])


def directional_derivative(state: State, vectors: BoundaryVectors, R, V, Q=None, W=None):
    """Discrete dJ_(G,U)(R, V) summed over components."""
    problem = state.problem
    eps = problem.epsilon
    R = np.asarray(R, float)
    V = np.asarray(V, float)
    if R.shape != (problem.space.n,) or V.shape != (problem.u_space.n,):
        raise ValueError("direction has wrong dimensions")
    if Q is None:
        Q = solve_variation_pde(state, R, V)
    if W is None:
        W = [solve_variation_ode(state, cv, R) for cv in vectors.components]
    dJ = float(vectors.adjoint_rhs(eps) @ Q[problem.space.interior])
    for cv, Wc in zip(vectors.components, W):
        dJ += float(np.sum(cv.total(eps) * Wc)) + _period_direct(state, cv, R)
    return dJ


def q_part(state: State, vectors: BoundaryVectors, Q):
    """The Q-dependent part of dJ: (F3 + 2/eps N Y) . Q."""
    return float(vectors.adjoint_rhs(state.problem.epsilon) @ Q[state.problem.space.interior])


def solve_adjoint(state: State, vectors: BoundaryVectors):
    """P solving K P = F3 + (2/eps) N(Z) Y, over all nodes."""
    problem = state.problem
    return problem.space.extend(problem.solver.solve(vectors.adjoint_rhs(problem.epsilon)))


def descent_direction_gradient(state: State, vectors: BoundaryVectors, P=None):
    """(R*, V*) with dJ(R, V) = -R*.R - V*.V for every (R, V)."""
    problem = state.problem
    space = problem.space
    if P is None:
        P = solve_adjoint(state, vectors)
    gp = np.maximum(space.at_quad(state.G), 0.0)
    pq = space.at_quad(P)
    V = -weighted_load(problem.u_space, gp ** 2 * pq)
    R = -weighted_load(space, 2.0 * gp * problem.u_space.at_quad(state.U) * pq)
    eps = problem.epsilon
    for cv in vectors.components:
        R -= _ode_adjoint(state, cv, cv.total(eps))
        if cv.period_r is not None:
            R -= _forcing_adjoint(state, cv.seed_Phi, cv.period_r[None, :])
    dJ = -float(R @ R) - float(V @ V)
    return DescentDirection(R, V, dJ)


def descent_direction_adjoint(state: State, vectors: BoundaryVectors, gamma="inf_norm",
                              P=None):
    """r = -gamma p u, v = -p from the simplified adjoint p."""
    problem = state.problem
    if P is None:
        P = solve_adjoint(state, vectors)
    V = -problem.w_to_u_nodes(P)
    R = -P * problem.u_on_w_nodes(state.U)
    if gamma == "inf_norm":
        nrm = np.abs(R).max()
        if nrm > 0:
            R = R / nrm
    elif gamma != "one":
        R = float(gamma) * R
    Q = solve_variation_pde(state, R, V)
    qp = q_part(state, vectors, Q)
    dJ = directional_derivative(state, vectors, R, V, Q=Q)
    return DescentDirection(R, V, dJ, qp)


def adjoint_identity(state: State, vectors: BoundaryVectors, R, V, P=None):
    """Both sides of (int (g+^2 v + 2 g+ u r) p) = (boundary rhs) . q."""
    if P is None:
        P = solve_adjoint(state, vectors)
    interior = state.problem.space.interior
    lhs = float(variation_load(state, R, V) @ P[interior])
    Q = solve_variation_pde(state, R, V)
    rhs = q_part(state, vectors, Q)
    return lhs, rhs
