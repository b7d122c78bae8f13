import numpy as np
import pytest

from implicit_shape.costs import Annulus, Circle
from implicit_shape.level_geom import (GradientFloorError, LeftDomainError, LevelFunction,
                                       OrbitNotClosedError, assemble_nz, curve_integral,
                                       hausdorff_distance, outward_normal, read_curve,
                                       seed_components, trace, trace_boundary, write_curve)
from implicit_shape.mesh_fem import FeSpace, build_structured_mesh

SQUARE = (-1.0, 1.0, -1.0, 1.0)


@pytest.fixture(scope="module")
def space(mesh80):
    return FeSpace(mesh80, 3)


@pytest.fixture(scope="module")
def origin_circle(space):
    return LevelFunction.from_function(space, lambda x, y: x * x + y * y - 0.25)


@pytest.fixture(scope="module")
def circle_1a(space):
    return LevelFunction.from_function(space, Circle(0.2, 0.2, 0.5))


class TestTrace:
    def test_rk4_circle(self, origin_circle):
        comp = trace(origin_circle, [0.5, 0.0], 1e-3, "rk4")
        assert abs(comp.period - np.pi) <= 1e-3
        assert np.abs(origin_circle(comp.points)).max() <= 1e-6

    def test_euler_circle(self, origin_circle):
        comp = trace(origin_circle, [0.5, 0.0], 1e-3, "euler")
        assert abs(comp.period - np.pi) <= 0.02
        # explicit Euler spirals outwards by O(dt) over one period
        r = np.hypot(*comp.points.T)
        assert np.all(r >= 0.5 - 1e-12)
        assert r.max() - 0.5 < 0.01 * 0.5

    def test_counterclockwise_and_closed(self, origin_circle):
        comp = trace(origin_circle, [0.5, 0.0], 1e-3, "rk4")
        # X = (-d2 g, d1 g) runs counterclockwise around {g < 0}
        assert comp.points[1, 1] > 0
        assert np.linalg.norm(comp.points[-1] - comp.points[0]) < 2e-3
        assert 0 < comp.theta <= 1

    def test_example_circle(self, circle_1a):
        boundary = trace_boundary(circle_1a)
        assert len(boundary) == 1
        comp = boundary.components[0]
        r = np.hypot(*(comp.points - 0.2).T)
        assert np.abs(r - 0.5).max() < 0.01
        assert comp.length == pytest.approx(np.pi, rel=0.01)

    def test_period_independent_of_seed(self, circle_1a):
        comp = trace_boundary(circle_1a).components[0]
        other = trace(circle_1a, comp.points[1234])
        assert abs(other.period - comp.period) <= 2 * comp.dt

    def test_perturbation_continuity(self, space, circle_1a):
        comp = trace_boundary(circle_1a).components[0]
        R = space.interpolate(lambda x, y: np.cos(2 * x + 1) * np.sin(3 * y))
        R -= space.evaluate(R, comp.seed[None, :])[0]
        dT, dH = [], []
        for lam in (1e-2, 1e-3, 1e-4):
            g = LevelFunction(space, circle_1a.G + lam * R)
            c = trace(g, comp.seed)
            dT.append(abs(c.period - comp.period))
            dH.append(hausdorff_distance(c.points, comp.points))
        assert dT[0] >= dT[1] >= dT[2]
        assert dH[0] > dH[1] > dH[2]
        assert dH[2] < 1e-3

    def test_left_domain(self, space):
        g = LevelFunction.from_function(space, lambda x, y: x - 0.3)
        with pytest.raises(LeftDomainError):
            trace(g, [0.3, 0.0])

    def test_not_closed(self, origin_circle):
        with pytest.raises(OrbitNotClosedError):
            trace(origin_circle, [0.5, 0.0], max_steps=100)

    def test_gradient_floor(self, space):
        # the zero set of x y is two crossing lines through a critical point
        g = LevelFunction.from_function(space, lambda x, y: x * y)
        with pytest.raises((GradientFloorError, OrbitNotClosedError)):
            trace(g, [0.5, 0.0], max_steps=200_000)


class TestSeeds:
    def test_circle(self, circle_1a):
        seeds = seed_components(circle_1a)
        assert len(seeds) == 1
        assert abs(circle_1a(np.array(seeds))[0]) < 1e-12

    def test_annulus(self, space):
        g = LevelFunction.from_function(space, Annulus(0.2, 0.2, 0.4, 0.2))
        seeds = seed_components(g)
        radii = sorted(float(np.hypot(*(s - 0.2))) for s in seeds)
        assert radii == pytest.approx([0.2, 0.4], abs=1e-6)

    def test_positive_everywhere(self, space):
        g = LevelFunction(space, np.ones(space.n))
        assert seed_components(g) == []
        assert len(trace_boundary(g)) == 0


class TestCurveIntegral:
    def test_constants(self, circle_1a):
        comp = trace_boundary(circle_1a).components[0]
        one = curve_integral(comp, lambda t, z: 1.0)
        assert one == pytest.approx(np.pi, rel=0.01)
        assert curve_integral(comp, lambda t, z: 0.0) == 0.0
        assert curve_integral(comp, lambda t, z: 2.0) == pytest.approx(2 * one, rel=1e-15)

    def test_vanishing_on_curve(self, origin_circle):
        comp = trace(origin_circle, [0.5, 0.0], 1e-3, "rk4")
        val = curve_integral(comp, lambda t, z: (z[:, 0] ** 2 + z[:, 1] ** 2 - 0.25) ** 2)
        assert val < 1e-12

    def test_first_moment(self, origin_circle):
        comp = trace(origin_circle, [0.5, 0.0], 1e-3, "rk4")
        # int x^2 ds over the circle of radius 1/2 = pi r^3
        val = curve_integral(comp, lambda t, z: z[:, 0] ** 2)
        assert val == pytest.approx(np.pi / 8, rel=2e-3)


@pytest.fixture(scope="module")
def nz(space, circle_1a):
    boundary = trace_boundary(circle_1a)
    return boundary, assemble_nz(boundary, space)


class TestBoundaryMass:
    def test_symmetric_psd(self, nz, space):
        _, N = nz
        assert (N != N.T).nnz == 0
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.normal(size=space.n0)
            assert x @ N @ x >= 0

    def test_ones_gives_length(self, nz, space):
        boundary, N = nz
        ones = np.ones(space.n0)
        assert ones @ N @ ones == pytest.approx(boundary.components[0].length, rel=1e-12)
        assert not np.any(N @ np.zeros(space.n0))

    def test_field_vanishing_on_curve(self, nz, space):
        _, N = nz
        Y = space.interpolate(Circle(0.2, 0.2, 0.5))[space.interior]
        # explicit Euler leaves the curve by O(dt)
        assert Y @ N @ Y < 1e-4


class TestNormals:
    def test_circle(self, origin_circle):
        theta = np.linspace(0, 2 * np.pi, 9)[:-1]
        x = 0.5 * np.column_stack([np.cos(theta), np.sin(theta)])
        n = outward_normal(origin_circle, x)
        np.testing.assert_allclose(n, 2 * x, atol=1e-10)
        np.testing.assert_allclose(outward_normal(origin_circle, x[0]), [1.0, 0.0], atol=1e-10)

    def test_annulus(self, space):
        g = LevelFunction.from_function(space, Annulus(0.0, 0.0, 0.6, 0.3))
        # away from the centre on the outer circle, towards it on the inner one
        np.testing.assert_allclose(outward_normal(g, [0.6, 0.0]), [1.0, 0.0], atol=1e-8)
        np.testing.assert_allclose(outward_normal(g, [0.3, 0.0]), [-1.0, 0.0], atol=1e-8)

    def test_degenerate(self, space):
        g = LevelFunction.from_function(space, lambda x, y: x * x + y * y - 0.25)
        with pytest.raises(GradientFloorError):
            outward_normal(g, [0.0, 0.0])


class TestCurveFiles:
    def test_roundtrip(self, tmp_path, circle_1a):
        comp = trace_boundary(circle_1a).components[0]
        write_curve(tmp_path / "c.txt", comp)
        t, pts, speed = read_curve(tmp_path / "c.txt")
        np.testing.assert_array_equal(pts, comp.points)
        np.testing.assert_allclose(t, comp.dt * np.arange(comp.m + 1), rtol=1e-15)
        np.testing.assert_array_equal(speed[1:], comp.speeds)


class TestHausdorff:
    def test_shifted_copies(self):
        t = np.linspace(0, 2 * np.pi, 2000)
        a = np.column_stack([np.cos(t), np.sin(t)])
        assert hausdorff_distance(a, a) == 0.0
        assert hausdorff_distance(a, a + [0.1, 0.0]) == pytest.approx(0.1, abs=2e-3)

    def test_coarse_mesh_runs(self):
        space = FeSpace(build_structured_mesh(SQUARE, 10, 10), 3)
        g = LevelFunction.from_function(space, Circle(0.0, 0.0, 0.5))
        comp = trace_boundary(g).components[0]
        # quadratics are interpolated exactly by P3, recovery of the gradient too
        assert np.abs(np.hypot(*comp.points.T) - 0.5).max() < 0.01
