"""Outer descent loop over (G, U): line search, constraints and history."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .level_geom import TraceError
from .mesh_fem import PointLocationError, SolverError
from .problem import ObjectiveBreakdown, ShapeProblem, State
from .sensitivity import (DescentDirection, build_boundary_vectors,
                          descent_direction_adjoint, descent_direction_gradient,
                          directional_derivative)

log = logging.getLogger(__name__)

HISTORY_HEADER = ("k", "t1", "t2", "J", "lambda", "components", "dJ")
DIRECTIONS = ("adjoint", "gradient")
FALLBACKS = ("none", "control")

# failures that reject a trial step instead of aborting the run
TRIAL_ERRORS = (TraceError, SolverError, PointLocationError)


class OptimizationError(RuntimeError):
    pass


@dataclass
class Constraints:
    """Optional geometric constraints on the level function.

    ``negative_nodes`` (the set E bar) are clamped to G <= 0, ``zero_nodes``
    (the manifold C) pinned to 0. ``point`` (x0) is only monitored.
    """

    negative_nodes: np.ndarray = None
    zero_nodes: np.ndarray = None
    point: np.ndarray = None

    @property
    def empty(self):
        return self.negative_nodes is None and self.zero_nodes is None


@dataclass
class LineSearch:
    c: float = 1e-4
    shrink: float = 0.5
    max_trials: int = 20
    lam_first: float = 1.0
    grow: float = 2.0
    quadratic: bool = True


@dataclass
class OptimizerSettings:
    tol: float = 1e-6
    direction: str = "adjoint"
    gamma: object = "inf_norm"
    max_iter: int = 200
    # when no decrease is found along (R, V): stop ("none") or retry along
    # its control part (0, V) ("control")
    fallback: str = "none"
    line_search: LineSearch = field(default_factory=LineSearch)
    constraints: Constraints = field(default_factory=Constraints)

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction rule {self.direction!r}")
        if self.fallback not in FALLBACKS:
            raise ValueError(f"unknown fallback {self.fallback!r}")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")


@dataclass(frozen=True)
class IterationRecord:
    """Row k: the iterate reached with step ``lam`` along a direction with slope ``dJ``."""

    k: int
    breakdown: ObjectiveBreakdown
    lam: float
    components: int
    dJ: float
    q_part: float = math.nan
    pin_residual: float = math.nan
    R_norm: float = math.nan
    V_norm: float = math.nan
    steps: tuple = ()
    periods: tuple = ()

    @property
    def J(self):
        return self.breakdown.J

    def row(self):
        b = self.breakdown
        return (self.k, b.t1, b.t2, b.J, self.lam, self.components, self.dJ)


@dataclass
class Trial:
    lam: float
    J: float
    accepted: bool = False


@dataclass
class LineSearchResult:
    lam: float
    state: State
    trials: list

    @property
    def ok(self):
        return self.state is not None


@dataclass
class RunResult:
    history: list
    status: str
    state: State
    trials: list = field(default_factory=list)

    @property
    def G(self):
        return self.state.G

    @property
    def U(self):
        return self.state.U


def evaluate_objective(problem: ShapeProblem, G, U) -> ObjectiveBreakdown:
    return problem.state(G, U).breakdown


def _trial_state(problem: ShapeProblem, G, U):
    """State at a trial point, or None where the step is inadmissible."""
    if not np.all(G[problem.space.boundary] > 0):
        return None
    try:
        state = problem.state(G, U)
    except TRIAL_ERRORS as exc:
        log.debug("trial rejected: %s", exc)
        return None
    if state.n_components == 0:
        return None
    return state


def line_search(problem: ShapeProblem, G, U, R, V, J0, dJ, lam_init=1.0,
                settings: LineSearch = None, constraints: Constraints = None):
    """Armijo backtracking along (R, V), then one quadratic-model refinement."""
    settings = settings or LineSearch()
    # without a negative slope only plain decrease can be asked for
    slope = min(dJ, 0.0)
    trials = []
    constraints = constraints or Constraints()

    def evaluate(lam):
        Gt = enforce_constraints(G + lam * R, constraints)
        st = _trial_state(problem, Gt, U + lam * V)
        J = st.J if st is not None else math.inf
        trials.append(Trial(lam, J))
        return st, J

    lam = float(lam_init)
    best = None
    for _ in range(settings.max_trials):
        st, J = evaluate(lam)
        if J < J0 and J <= J0 + settings.c * lam * slope:
            best = (lam, st, J, len(trials) - 1)
            break
        lam *= settings.shrink
    if best is None:
        return LineSearchResult(0.0, None, trials)

    lam, st, J, idx = best
    if settings.quadratic:
        curv = J - J0 - dJ * lam
        if curv > 0 and dJ < 0:
            lam_q = -dJ * lam * lam / (2.0 * curv)
            if lam_q > 0 and not math.isclose(lam_q, lam, rel_tol=1e-12):
                st_q, J_q = evaluate(lam_q)
                if J_q < J:
                    lam, st, J, idx = lam_q, st_q, J_q, len(trials) - 1
    trials[idx].accepted = True
    return LineSearchResult(lam, st, trials)


def enforce_constraints(G, constraints: Constraints):
    if constraints is None or constraints.empty:
        return G
    G = np.array(G, float)
    if constraints.negative_nodes is not None:
        idx = constraints.negative_nodes
        G[idx] = np.minimum(G[idx], 0.0)
    if constraints.zero_nodes is not None:
        G[constraints.zero_nodes] = 0.0
    return G


def pin_residual(state: State, constraints: Constraints):
    """|g(x0)| for the monitored point, NaN when none is set."""
    if constraints is None or constraints.point is None:
        return math.nan
    x0 = np.asarray(constraints.point, float).reshape(1, 2)
    return float(abs(state.g(x0)[0]))


def compute_direction(state: State, settings: OptimizerSettings):
    """Descent direction at ``state`` and the boundary vectors it was built from."""
    vectors = build_boundary_vectors(state)
    if settings.direction == "gradient":
        return descent_direction_gradient(state, vectors), vectors
    return descent_direction_adjoint(state, vectors, gamma=settings.gamma), vectors


def control_part(state: State, vectors, d: DescentDirection) -> DescentDirection:
    """(0, V) of a direction; for the adjoint rule dJ = -int g+^2 p^2 <= 0."""
    R = np.zeros_like(d.R)
    return DescentDirection(R, d.V, directional_derivative(state, vectors, R, d.V), d.q_part)


def run(problem: ShapeProblem, G0, U0=None, settings: OptimizerSettings = None,
        callback=None) -> RunResult:
    """Descent iterations (G, U) <- (G, U) + lam (R, V) until a stopping rule fires.

    ``callback(record, state)`` is called for every accepted iterate,
    including the starting point.
    """
    settings = settings or OptimizerSettings()
    cons = settings.constraints
    U0 = np.zeros(problem.u_space.n) if U0 is None else np.asarray(U0, float)
    G0 = enforce_constraints(np.asarray(G0, float), cons)
    state = problem.state(G0, U0)
    if state.n_components == 0:
        raise OptimizationError("initial level function has an empty zero set")
    rec = IterationRecord(0, state.breakdown, 0.0, state.n_components, math.nan,
                          pin_residual=pin_residual(state, cons), **_geometry(state))
    history = [rec]
    all_trials = []
    if callback is not None:
        callback(rec, state)

    status = "max-iterations"
    lam_prev = None
    for k in range(1, settings.max_iter + 1):
        try:
            d, vectors = compute_direction(state, settings)
        except Exception as exc:
            raise OptimizationError(f"direction failed at iteration {k}: {exc}") from exc
        history[-1] = _with_q(history[-1], d.q_part)
        if d.is_zero or d.dJ == 0:
            status = "stationary"
            break
        if d.dJ > 0:
            log.info("direction not descending at k=%d (dJ=%.3e)", k, d.dJ)
        lam0 = settings.line_search.lam_first
        if lam_prev is not None and d.dJ < 0:
            lam0 = settings.line_search.grow * lam_prev
        ls = line_search(problem, state.G, state.U, d.R, d.V, state.J, d.dJ, lam0,
                         settings.line_search, cons)
        all_trials.append(ls.trials)
        if not ls.ok and settings.fallback == "control" and np.any(d.R):
            log.info("no decrease along (R, V) at k=%d, trying (0, V)", k)
            d = control_part(state, vectors, d)
            if d.dJ < 0:
                ls = line_search(problem, state.G, state.U, d.R, d.V, state.J, d.dJ, lam0,
                                 settings.line_search, cons)
                all_trials[-1] = all_trials[-1] + ls.trials
        if not ls.ok:
            status = "line-search stall"
            break
        J_old = state.J
        state = ls.state
        lam_prev = ls.lam
        rec = IterationRecord(k, state.breakdown, ls.lam, state.n_components, d.dJ,
                              pin_residual=pin_residual(state, cons),
                              R_norm=float(np.linalg.norm(d.R)),
                              V_norm=float(np.linalg.norm(d.V)), **_geometry(state))
        history.append(rec)
        log.info("k=%d J=%.6g t1=%.6g t2=%.6g lam=%.3g comps=%d", k, rec.J,
                 rec.breakdown.t1, rec.breakdown.t2, ls.lam, rec.components)
        if callback is not None:
            callback(rec, state)
        if abs(J_old - state.J) < settings.tol:
            status = "converged"
            break
    return RunResult(history, status, state, all_trials)


def _geometry(state: State):
    return {"steps": tuple(c.m for c in state.boundary),
            "periods": tuple(c.period for c in state.boundary)}


def _with_q(rec: IterationRecord, q):
    return dataclasses.replace(rec, q_part=q)


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for rec in history:
            k, t1, t2, J, lam, comps, dJ = rec.row()
            w.writerow([k] + [repr(float(v)) for v in (t1, t2, J, lam)] + [comps, repr(float(dJ))])


def read_history(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{key: (int(v) if key in ("k", "components") else float(v))
             for key, v in row.items()} for row in rows]


def write_diagnostics(path, history):
    """One line per iterate: slope, direction norms, and per-component m and T_g."""
    with open(path, "w") as fh:
        for rec in history:
            comps = " ".join(f"m={m} T={float(T)!r}" for m, T in zip(rec.steps, rec.periods))
            vals = [float(v) for v in (rec.J, rec.dJ, rec.q_part, rec.R_norm, rec.V_norm,
                                       rec.lam)]
            fh.write("k={} J={!r} dJ={!r} q_part={!r} |R|={!r} |V|={!r} lambda={!r} ".format(
                rec.k, *vals) + comps + "\n")
