"""Finite-difference and identity checks of the discrete derivative."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import ShapeProblem, State
from .sensitivity import (adjoint_identity, build_boundary_vectors, descent_direction_gradient,
                          directional_derivative, solve_adjoint)

CONTROL_RTOL = 1e-5
SHAPE_RTOL = 0.1
IDENTITY_RTOL = 1e-10


@dataclass
class CheckRow:
    name: str
    value: float
    reference: float
    error: float
    tolerance: float

    @property
    def passed(self):
        return bool(self.error <= self.tolerance)

    def line(self):
        mark = "PASS" if self.passed else "FAIL"
        return (f"{mark} {self.name:<24} dJ={self.value: .10e} ref={self.reference: .10e} "
                f"err={self.error:.3e} tol={self.tolerance:.1e}")


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def smooth_perturbation(rng, n_waves=4, k_max=3.0):
    """Random sum of plane cosines, a smooth function of (x, y)."""
    k = rng.uniform(-k_max, k_max, (n_waves, 2))
    phase = rng.uniform(0.0, 2 * np.pi, n_waves)
    amp = rng.normal(size=n_waves)

    def f(x, y):
        return sum(amp[i] * np.cos(k[i, 0] * x + k[i, 1] * y + phase[i])
                   for i in range(n_waves))
    return f


def control_fd_rows(state: State, rng, count=10, h=1e-4, tol=CONTROL_RTOL):
    """dJ(0, V) against central differences in U with the geometry frozen."""
    problem = state.problem
    vectors = build_boundary_vectors(state)
    R = np.zeros(problem.space.n)
    rows = []
    for i in range(count):
        V = rng.normal(size=problem.u_space.n)
        dJ = directional_derivative(state, vectors, R, V)
        Jp = problem.state(state.G, state.U + h * V, boundary=state.boundary).J
        Jm = problem.state(state.G, state.U - h * V, boundary=state.boundary).J
        fd = (Jp - Jm) / (2 * h)
        rows.append(CheckRow(f"control FD #{i}", dJ, fd, _rel(dJ, fd), tol))
    return rows


def shape_fd_rows(state: State, rng, count=10, h=1e-4, tol=SHAPE_RTOL):
    """dJ(R, 0) against central differences of the re-traced objective.

    Each R is shifted to vanish at the first seed, so the perturbed orbits
    can be started from the same point.
    """
    problem = state.problem
    vectors = build_boundary_vectors(state)
    seeds = state.boundary.seeds
    x0 = seeds[0][None, :]
    V = np.zeros(problem.u_space.n)
    rows = []
    for i in range(count):
        R = problem.space.interpolate(smooth_perturbation(rng))
        R = R - problem.space.evaluate(R, x0)[0]
        dJ = directional_derivative(state, vectors, R, V)
        Jp = problem.state(state.G + h * R, state.U, seeds=seeds).J
        Jm = problem.state(state.G - h * R, state.U, seeds=seeds).J
        fd = (Jp - Jm) / (2 * h)
        row = CheckRow(f"shape FD #{i}", dJ, fd, _rel(dJ, fd), tol)
        if np.sign(dJ) != np.sign(fd):
            row.error = np.inf
        rows.append(row)
    return rows


def identity_rows(state: State, rng, count=10, tol=IDENTITY_RTOL):
    """Adjoint identity: (B1 V + C1 R) . P against the boundary rhs applied to Q."""
    problem = state.problem
    vectors = build_boundary_vectors(state)
    P = solve_adjoint(state, vectors)
    rows = []
    for i in range(count):
        R = rng.normal(size=problem.space.n)
        R[problem.space.boundary] = 0.0
        V = rng.normal(size=problem.u_space.n)
        lhs, rhs = adjoint_identity(state, vectors, R, V, P)
        rows.append(CheckRow(f"adjoint identity #{i}", lhs, rhs, _rel(lhs, rhs), tol))
    return rows


def gradient_consistency_row(state: State, rng, tol=IDENTITY_RTOL):
    """dJ(R*, V*) along the gradient direction equals -|R*|^2 - |V*|^2."""
    vectors = build_boundary_vectors(state)
    d = descent_direction_gradient(state, vectors)
    direct = directional_derivative(state, vectors, d.R, d.V)
    return CheckRow("gradient direction", direct, d.dJ, _rel(direct, d.dJ), tol)


def zero_direction_row(state: State):
    problem = state.problem
    vectors = build_boundary_vectors(state)
    dJ = directional_derivative(state, vectors, np.zeros(problem.space.n),
                                np.zeros(problem.u_space.n))
    return CheckRow("zero direction", dJ, 0.0, abs(dJ), 0.0)


def validate_gradient(problem: ShapeProblem, G, U, seed=0, count=10):
    """All rows of the gradient report at (G, U)."""
    rng = np.random.default_rng(seed)
    state = problem.state(G, U)
    rows = [zero_direction_row(state)]
    rows += control_fd_rows(state, rng, count)
    rows += shape_fd_rows(state, rng, count)
    rows += identity_rows(state, rng, count)
    rows.append(gradient_consistency_row(state, rng))
    return rows
