import math

import numpy as np
import pytest

from implicit_shape.config import nodes_in_box, nodes_on_segment
from implicit_shape.costs import Annulus, Circle, Constant, NormalDerivativeMisfit
from implicit_shape.optimizer import (Constraints, LineSearch, OptimizationError,
                                      OptimizerSettings, enforce_constraints,
                                      evaluate_objective, line_search, pin_residual,
                                      read_history, run, write_diagnostics, write_history)
from implicit_shape.problem import ShapeProblem
from implicit_shape.sensitivity import (build_boundary_vectors, descent_direction_adjoint,
                                        directional_derivative)


@pytest.fixture(scope="module")
def run20(problem20):
    G0 = problem20.space.interpolate(Circle(0.2, 0.2, 0.5))
    settings = OptimizerSettings(max_iter=6)
    seen = []
    result = run(problem20, G0, None, settings, callback=lambda rec, st: seen.append(rec.k))
    return result, seen


class TestObjective:
    def test_example_initial_values(self, problem80):
        U = np.zeros(problem80.u_space.n)
        b = evaluate_objective(problem80, problem80.space.interpolate(Circle(0.2, 0.2, 0.5)), U)
        # reference run: J0 = 23898.4
        assert 23898.4 / 2 < b.J < 2 * 23898.4
        assert b.J == b.t1 + b.t2 / b.epsilon
        b = evaluate_objective(problem80,
                               problem80.space.interpolate(Annulus(0.2, 0.2, 0.4, 0.2)), U)
        assert 37002.4 / 2 < b.J < 2 * 37002.4

    def test_exact_solution_is_nearly_optimal(self, problem80):
        # centred circle with the closed-form state: only O(dt) tracing error remains
        space = problem80.space
        G = space.interpolate(Circle(0.0, 0.0, 0.5))
        Y = space.interpolate(Circle(0.0, 0.0, 0.5))
        b = problem80.state(G, np.zeros(problem80.u_space.n), Y=Y).breakdown
        assert b.t2 <= 1e-3
        assert b.t1 <= 1e-2


class TestConstraints:
    def test_identity_without_constraints(self):
        G = np.array([0.3, -0.2, 1.0])
        assert enforce_constraints(G, Constraints()) is G

    def test_negative_box_clamps(self):
        G = np.array([0.3, -0.2, 1.0])
        out = enforce_constraints(G, Constraints(negative_nodes=np.array([0, 1])))
        np.testing.assert_array_equal(out, [0.0, -0.2, 1.0])
        np.testing.assert_array_equal(G, [0.3, -0.2, 1.0])

    def test_zero_manifold(self):
        G = np.array([0.3, -0.2, 1.0])
        out = enforce_constraints(G, Constraints(zero_nodes=np.array([1, 2])))
        np.testing.assert_array_equal(out, [0.3, 0.0, 0.0])

    def test_node_selection(self):
        nodes = np.array([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0], [0.25, 0.0]])
        np.testing.assert_array_equal(nodes_in_box(nodes, (0, 0.5, 0, 0.5)), [0, 1, 3])
        np.testing.assert_array_equal(nodes_on_segment(nodes, (0, 0, 1, 1)), [0, 1, 2])

    def test_pin_residual(self, problem20):
        G = problem20.space.interpolate(Circle(0.2, 0.2, 0.5))
        state = problem20.state(G, np.zeros(problem20.u_space.n))
        assert math.isnan(pin_residual(state, Constraints()))
        r = pin_residual(state, Constraints(point=np.array([0.7, 0.2])))
        assert r < 1e-12

    def test_constraints_hold_along_run(self, problem20):
        space = problem20.space
        G0 = space.interpolate(Circle(0.2, 0.2, 0.5))
        box = nodes_in_box(space.nodes, (0.1, 0.3, 0.1, 0.3))
        seg = nodes_on_segment(space.nodes, (0.7, 0.1, 0.7, 0.3))
        assert len(box) and len(seg)
        cons = Constraints(negative_nodes=box, zero_nodes=seg)
        G_seen = []
        run(problem20, G0, None, OptimizerSettings(max_iter=3, constraints=cons),
            callback=lambda rec, st: G_seen.append(st.G.copy()))
        for G in G_seen:
            assert np.all(G[box] <= 0)
            assert np.all(G[seg] == 0)


class TestLineSearch:
    def test_quadratic_control_step_exact(self, problem20):
        space = problem20.space
        G = space.interpolate(Circle(0.2, 0.2, 0.5))
        U = np.zeros(problem20.u_space.n)
        state = problem20.state(G, U)
        d = descent_direction_adjoint(state, build_boundary_vectors(state))
        R = np.zeros(space.n)
        # fixed geometry: J(lam) is an exact quadratic along (0, V)
        J = [problem20.state(G, U + lam * d.V, boundary=state.boundary).J for lam in (0, 1, 2)]
        a = (J[2] - 2 * J[1] + J[0]) / 2
        b = J[1] - J[0] - a
        lam_star = -b / (2 * a)
        dJ = directional_derivative(state, build_boundary_vectors(state), R, d.V)
        ls = line_search(problem20, G, U, R, d.V, state.J, dJ, 1.0)
        assert ls.ok
        assert ls.lam == pytest.approx(lam_star, rel=1e-6)

    def test_halving_and_failure(self, problem20):
        space = problem20.space
        G = space.interpolate(Circle(0.2, 0.2, 0.5))
        U = np.zeros(problem20.u_space.n)
        state = problem20.state(G, U)
        # an ascent direction in u: no step can decrease J
        d = descent_direction_adjoint(state, build_boundary_vectors(state))
        R = np.zeros(space.n)
        ls = line_search(problem20, G, U, R, -d.V, state.J, -d.dJ, 1.0,
                         LineSearch(max_trials=6))
        assert not ls.ok and ls.lam == 0.0
        lams = [t.lam for t in ls.trials]
        assert lams == [0.5 ** i for i in range(6)]

    def test_inadmissible_step_rejected(self, problem20):
        space = problem20.space
        G = space.interpolate(Circle(0.2, 0.2, 0.5))
        U = np.zeros(problem20.u_space.n)
        state = problem20.state(G, U)
        # a huge uniform shift empties the zero set
        ls = line_search(problem20, G, U, np.full(space.n, 10.0), np.zeros_like(U),
                         state.J, -1.0, 1.0, LineSearch(max_trials=2, quadratic=False))
        assert all(t.J == math.inf for t in ls.trials[:1])


class TestRun:
    def test_monotone_and_consistent(self, run20):
        result, seen = run20
        J = [r.J for r in result.history]
        assert all(b < a for a, b in zip(J, J[1:]))
        for r in result.history:
            assert r.J == r.breakdown.t1 + r.breakdown.t2 / r.breakdown.epsilon
        assert seen == [r.k for r in result.history]
        assert result.status in ("converged", "line-search stall", "max-iterations",
                                 "stationary")

    def test_recompute_final_objective(self, run20, problem20):
        result, _ = run20
        b = evaluate_objective(problem20, result.G, result.U)
        assert b.J == result.history[-1].J

    def test_restart_is_stationary_in_J(self, run20, problem20):
        result, _ = run20
        again = run(problem20, result.G, result.U, OptimizerSettings(max_iter=1))
        assert abs(again.history[-1].J - result.history[-1].J) <= max(
            result.history[-2].J - result.history[-1].J, 1e-6)

    def test_stationary_start(self, mesh20):
        problem = ShapeProblem(mesh20, source=0.0, cost=NormalDerivativeMisfit(Constant(0.0)))
        G0 = problem.space.interpolate(Circle(0.2, 0.2, 0.5))
        result = run(problem, G0)
        assert result.status == "stationary"
        assert len(result.history) == 1

    def test_max_iter_zero(self, problem20):
        G0 = problem20.space.interpolate(Circle(0.2, 0.2, 0.5))
        result = run(problem20, G0, None, OptimizerSettings(max_iter=0))
        assert result.status == "max-iterations" and len(result.history) == 1

    def test_empty_zero_set(self, problem20):
        with pytest.raises(OptimizationError):
            run(problem20, np.ones(problem20.space.n))

    def test_settings_validation(self):
        with pytest.raises(ValueError):
            OptimizerSettings(tol=0)
        with pytest.raises(ValueError):
            OptimizerSettings(direction="newton")
        with pytest.raises(ValueError):
            OptimizerSettings(fallback="gradient")


class TestHistoryFiles:
    def test_roundtrip(self, tmp_path, run20):
        result, _ = run20
        path = tmp_path / "history.csv"
        write_history(path, result.history)
        assert path.read_text().splitlines()[0] == "k,t1,t2,J,lambda,components,dJ"
        rows = read_history(path)
        for row, rec in zip(rows, result.history):
            k, t1, t2, J, lam, comps, dJ = rec.row()
            assert (row["k"], row["t1"], row["t2"], row["J"], row["components"]) == (
                k, t1, t2, J, comps)
            assert row["lambda"] == lam
            assert row["dJ"] == dJ or (math.isnan(row["dJ"]) and math.isnan(dJ))

    def test_diagnostics(self, tmp_path, run20):
        result, _ = run20
        write_diagnostics(tmp_path / "d.txt", result.history)
        lines = (tmp_path / "d.txt").read_text().splitlines()
        assert len(lines) == len(result.history)
        assert lines[0].startswith("k=0 J=") and "np.float64" not in "".join(lines)
