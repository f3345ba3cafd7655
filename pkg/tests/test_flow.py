import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cnslab import flow as fl
from cnslab.spectral import GridField, TorusGrid, divergence_array, gradient_array


def timeline(grid, times, func):
    return fl.VelocityTimeline(grid, np.asarray(times), np.array([func(t) for t in times]))


def small_flow(grid, eps=1.0):
    x1, x2 = grid.coords
    d = eps * np.array([0.1 * np.sin(x2) + 0.05 * np.cos(2 * x1), 0.08 * np.cos(x1 + x2)])
    return fl.flow_from_displacement(grid, d)


class TestTimeline:
    def test_validation(self, grid32):
        with pytest.raises(ValueError, match="increasing"):
            fl.VelocityTimeline(grid32, np.array([0.0, 0.0]), np.zeros((2, 2) + grid32.shape))
        with pytest.raises(ValueError, match="uniform"):
            fl.VelocityTimeline(grid32, np.array([0.0, 0.1, 0.3]), np.zeros((3, 2) + grid32.shape))
        with pytest.raises(ValueError, match="shape"):
            fl.VelocityTimeline(grid32, np.array([0.0, 0.1]), np.zeros((3, 2) + grid32.shape))

    def test_index_of(self, grid32):
        v = fl.VelocityTimeline(grid32, np.arange(5) * 0.1, np.zeros((5, 2) + grid32.shape))
        assert v.index_of(0.3) == 3
        with pytest.raises(ValueError, match="not a sample"):
            v.index_of(0.25)


class TestIntegrateFlow:
    def test_zero_velocity(self, grid32):
        v = fl.VelocityTimeline(grid32, np.arange(4) * 0.1, np.zeros((4, 2) + grid32.shape))
        X = fl.integrate_flow(v, 0.3)
        I = fl.identity_field(grid32)
        assert np.all(X.displacement == 0)
        assert np.array_equal(X.DX, I) and np.array_equal(X.A, I) and np.array_equal(X.adjDX, I)
        assert np.all(X.J == 1.0)

    def test_constant_velocity(self, grid32):
        c = np.array([0.3, -0.2])
        v = timeline(grid32, np.arange(6) * 0.05, lambda t: c[:, None, None] * np.ones((2,) + grid32.shape))
        X = fl.integrate_flow(v, 0.25)
        assert np.allclose(X.displacement, 0.25 * c[:, None, None], atol=1e-15)
        assert np.allclose(X.DX, fl.identity_field(grid32), atol=1e-13)
        assert np.allclose(X.J, 1.0, atol=1e-13)

    def test_shear_closed_form(self, grid32):
        gamma = 0.8
        x2 = grid32.coords[1]
        v = timeline(grid32, np.arange(5) * 0.1, lambda t: np.array([gamma * np.sin(x2), 0 * x2]))
        t = 0.4
        X = fl.integrate_flow(v, t)
        assert np.allclose(X.DX[0, 1], t * gamma * np.cos(x2), atol=1e-13)
        assert np.allclose(X.J, 1.0, atol=1e-13)
        assert np.allclose(X.A[0, 1], -t * gamma * np.cos(x2), atol=1e-13)
        assert np.allclose(X.A[0, 0], 1.0, atol=1e-13)

    def test_trapezoid_in_time(self, grid32):
        # v linear in t: trapezoid is exact
        x1 = grid32.coords[0]
        v = timeline(grid32, np.arange(11) * 0.02, lambda t: np.array([t * np.sin(x1), 0 * x1]))
        X = fl.integrate_flow(v, 0.2)
        assert np.allclose(X.displacement[0], 0.5 * 0.2**2 * np.sin(x1), atol=1e-15)

    def test_loss_of_invertibility_names_time(self, grid32):
        x1 = grid32.coords[0]
        v = timeline(grid32, np.arange(11) * 0.1, lambda t: np.array([-3 * np.sin(x1), 0 * x1]))
        with pytest.raises(fl.DiffeomorphismError) as err:
            fl.integrate_flow(v, 1.0)
        assert err.value.time == pytest.approx(0.3)

    def test_three_dimensional(self):
        grid = TorusGrid(3, 16)
        x1, x2, x3 = grid.coords
        d = 0.1 * np.array([np.sin(x2), np.cos(x3), np.sin(x1 + x2)])
        X = fl.flow_from_displacement(grid, d)
        res = fl.algebra_residuals(X)
        assert max(res.values()) < 1e-13
        J_np = np.linalg.det(np.moveaxis(X.DX, (0, 1), (-2, -1)))
        assert np.allclose(X.J, J_np, atol=1e-14)


class TestAlgebra:
    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.0, 1.5), st.integers(0, 1000))
    def test_identities(self, eps, seed):
        grid = TorusGrid(2, 16)
        rng = np.random.default_rng(seed)
        x1, x2 = grid.coords
        amp = eps * rng.uniform(-0.1, 0.1, size=4)
        d = np.array([amp[0] * np.sin(x2) + amp[1] * np.cos(x1), amp[2] * np.cos(x1 + x2) + amp[3] * np.sin(x2)])
        X = fl.flow_from_displacement(grid, d)
        assert np.min(X.J) >= 0.5
        assert max(fl.algebra_residuals(X).values()) <= 1e-10


class TestTwisted:
    def test_identity_A(self, grid32):
        x1, x2 = grid32.coords
        w = np.array([np.sin(x1 + x2), np.cos(2 * x2)])
        I = fl.identity_field(grid32)
        Dw = gradient_array(grid32, w)
        D = 0.5 * (Dw + np.swapaxes(Dw, 0, 1))
        assert np.allclose(fl.twisted_deformation_array(grid32, w, I), D, atol=1e-13)
        assert np.allclose(fl.twisted_divergence_array(grid32, w, I), divergence_array(grid32, w), atol=1e-13)

    def test_zero(self, grid32):
        X = small_flow(grid32)
        w = GridField(grid32, np.zeros((2,) + grid32.shape))
        assert np.all(fl.twisted_deformation(w, GridField(grid32, X.A)).values == 0)
        assert np.all(fl.twisted_divergence(w, GridField(grid32, X.A)).values == 0)

    def test_adjugate_divergence_identity(self, grid64):
        # adj(DX) div_A w - div w Id is controlled by |Dd| |Dw|
        x1, x2 = grid64.coords
        w = np.array([np.sin(x1) * np.cos(x2), np.cos(x1 + 2 * x2)])
        Dw = gradient_array(grid64, w)
        sizes = []
        for eps in (0.2, 0.1, 0.05):
            X = small_flow(grid64, eps)
            lhs = X.adjDX * fl.twisted_divergence_array(grid64, w, X.A)
            rhs = divergence_array(grid64, w) * fl.identity_field(grid64)
            diff = np.max(np.abs(lhs - rhs))
            bound = np.max(np.abs(X.DX - fl.identity_field(grid64))) * np.max(np.abs(Dw))
            assert diff <= 4 * bound
            sizes.append(diff)
        assert sizes[0] / sizes[1] == pytest.approx(2.0, rel=0.1)


class TestInverse:
    def test_identity(self, grid32):
        X = fl.flow_from_displacement(grid32, np.zeros((2,) + grid32.shape))
        assert np.all(fl.invert_flow(X) == 0)

    def test_translation(self, grid32):
        c = np.array([0.4, -0.7])
        X = fl.flow_from_displacement(grid32, c[:, None, None] * np.ones((2,) + grid32.shape))
        assert np.allclose(fl.invert_flow(X), -c[:, None, None], atol=1e-13)

    def test_round_trip(self, grid32):
        X = small_flow(grid32, 2.0)
        e = fl.invert_flow(X)
        assert fl.inverse_residual(X, e) <= 1e-10

    def test_rejects_large_displacement(self, grid32):
        X = fl.flow_from_displacement(grid32, 2.0 * np.ones((2,) + grid32.shape))
        with pytest.raises(fl.DiffeomorphismError, match="quarter period"):
            fl.invert_flow(X)

    def test_newton_fallback_still_converges(self, grid32):
        # strongly sheared flow where plain iteration contracts slowly
        x2 = grid32.coords[1]
        d = np.array([0.9 * np.sin(x2), 0 * x2])
        X = fl.flow_from_displacement(grid32, d)
        assert fl.inverse_residual(X, fl.invert_flow(X)) <= 1e-10


class TestCompositions:
    def test_identity_flow(self, grid32):
        f = GridField(grid32, np.sin(grid32.coords[0] + 2 * grid32.coords[1]))
        X = fl.flow_from_displacement(grid32, np.zeros((2,) + grid32.shape))
        assert np.allclose(fl.pullback(f, X).values, f.values, atol=1e-13)
        assert np.allclose(fl.pushforward(f, X).values, f.values, atol=1e-13)

    def test_constant(self, grid32):
        f = GridField(grid32, np.full(grid32.shape, 2.0))
        X = small_flow(grid32)
        assert np.allclose(fl.pullback(f, X).values, 2.0, atol=1e-13)
        assert np.allclose(fl.pushforward(f, X).values, 2.0, atol=1e-13)

    def test_translation(self, grid32):
        c, t = 0.3, 0.5
        x1 = grid32.coords[0]
        v = timeline(grid32, np.arange(6) * 0.1, lambda s: np.array([c * np.ones_like(x1), 0 * x1]))
        X = fl.integrate_flow(v, t)
        f = GridField(grid32, np.sin(x1))
        assert np.allclose(fl.pullback(f, X).values, np.sin(x1 + c * t), atol=1e-13)
        assert np.allclose(fl.pushforward(f, X).values, np.sin(x1 - c * t), atol=1e-13)

    def test_round_trip_small_flow(self, grid64):
        x1, x2 = grid64.coords
        f = GridField(grid64, np.sin(x1) * np.cos(x2) + 0.3 * np.cos(2 * x1))
        X = small_flow(grid64, 0.5)
        back = fl.pushforward(fl.pullback(f, X), X).values
        assert np.max(np.abs(back - f.values)) <= 1e-8


class TestDivIdentity:
    def test_identity_flow(self, grid32):
        X = fl.flow_from_displacement(grid32, np.zeros((2,) + grid32.shape))
        x1, x2 = grid32.coords
        assert fl.check_div_identity(GridField(grid32, np.sin(x1 + x2)), X).max_residual <= 1e-12
        H = GridField(grid32, np.array([np.sin(x1), np.cos(x2)]))
        assert fl.check_div_identity(H, X).max_residual <= 1e-12

    def test_constant_vector(self, grid32):
        X = small_flow(grid32)
        H = GridField(grid32, np.ones((2,) + grid32.shape))
        assert fl.check_div_identity(H, X).residuals["divergence"] <= 1e-12

    def test_refinement(self):
        res = {}
        for N in (32, 64):
            grid = TorusGrid(2, N)
            x1, x2 = grid.coords
            X = small_flow(grid)
            H = GridField(grid, np.array([np.sin(3 * x1) * np.cos(x2), np.cos(2 * x2 + x1)]))
            res[N] = fl.check_div_identity(H, X).residuals
        for name in ("divergence", "laplacian", "grad_div"):
            assert res[64][name] * 10 <= res[32][name]

    def test_matrix_rejected(self, grid32):
        with pytest.raises(ValueError):
            fl.check_div_identity(GridField(grid32, np.zeros((2, 2) + grid32.shape)), small_flow(grid32))


class TestJacobi:
    def test_constant_z_divergence_free(self, grid32):
        x1, x2 = grid32.coords
        times = np.arange(5) * 0.01
        v = timeline(grid32, times, lambda t: 0.1 * np.array([np.sin(x2), np.sin(x1)]))
        z = np.ones((5,) + grid32.shape)
        rep = fl.check_jacobi(z, v, 0.02)
        # for a divergence-free field J stays 1 to second order in time
        assert rep.residual < 1e-5

    def test_zero_velocity(self, grid32):
        x1 = grid32.coords[0]
        times = np.arange(5) * 0.01
        v = fl.VelocityTimeline(grid32, times, np.zeros((5, 2) + grid32.shape))
        z = np.array([np.sin(x1) * (1 + t**2) for t in times])
        rep = fl.check_jacobi(z, v, 0.02)
        assert rep.residual < 1e-12

    def test_needs_interior_time(self, grid32):
        v = fl.VelocityTimeline(grid32, np.arange(3) * 0.1, np.zeros((3, 2) + grid32.shape))
        with pytest.raises(ValueError, match="interior"):
            fl.check_jacobi(np.zeros((3,) + grid32.shape), v, 0.0)

    def test_second_order(self, grid64):
        x1, x2 = grid64.coords
        res = []
        for dt in (0.02, 0.01, 0.005):
            times = np.arange(0, 0.2 + 2 * dt + 1e-12, dt)
            v = timeline(grid64, times, lambda t: 0.1 * (1 + t) * np.array([np.sin(x2), np.cos(x1)]))
            z = np.array([1 + 0.2 * np.sin(x1 + 0.5 * t) * np.cos(x2) for t in times])
            res.append(fl.check_jacobi(z, v, 0.2).residual)
        orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
        assert np.all(orders >= 1.9)


class TestFlowEstimates:
    def test_zero_velocity(self, grid32, bank32):
        v = fl.VelocityTimeline(grid32, np.arange(3) * 0.1, np.zeros((3, 2) + grid32.shape))
        rep = fl.flow_estimate_report(v, bank32)
        assert all(val == 0.0 for val in rep.numerators.values())
        assert rep.exact_zero

    def test_spatially_constant(self, grid32, bank32):
        v = fl.VelocityTimeline(grid32, np.arange(3) * 0.1, 0.2 * np.ones((3, 2) + grid32.shape))
        rep = fl.flow_estimate_report(v, bank32)
        assert rep.exact_zero
        assert all(r == 0.0 for r in rep.ratios.values())

    def test_epsilon_sweep(self, grid32, bank32):
        x1, x2 = grid32.coords
        times = np.arange(11) * 0.02
        ratios = []
        for eps in (1e-2, 1e-3, 1e-4):
            v = timeline(grid32, times, lambda t: eps * np.array([np.sin(x2), 0.5 * np.cos(x1)]))
            rep = fl.flow_estimate_report(v, bank32)
            assert not rep.smallness_violated
            ratios.append(rep.ratios["A"])
        assert ratios[1] == pytest.approx(ratios[2], rel=1e-2)
        assert ratios[0] == pytest.approx(ratios[2], rel=1e-1)

    def test_divergence_free_jacobian_quadratic(self, grid32, bank32):
        x1, x2 = grid32.coords
        times = np.arange(11) * 0.02
        devs = []
        for eps in (1e-1, 5e-2):
            v = timeline(grid32, times, lambda t: eps * np.array([np.sin(x2), np.sin(x1)]))
            X = fl.integrate_flow(v, float(times[-1]))
            devs.append(np.max(np.abs(X.J - 1)))
        assert devs[0] / devs[1] == pytest.approx(4.0, rel=0.05)

    def test_smallness_flag(self, grid32, bank32):
        x1, x2 = grid32.coords
        v = timeline(grid32, np.arange(11) * 0.02, lambda t: 2.0 * np.array([np.sin(x2), 0 * x1]))
        assert fl.flow_estimate_report(v, bank32).smallness_violated

    def test_difference_ratios(self, grid32, bank32):
        x1, x2 = grid32.coords
        times = np.arange(11) * 0.02
        v = timeline(grid32, times, lambda t: 0.05 * np.array([np.sin(x2), np.cos(x1)]))
        w = timeline(grid32, times, lambda t: 0.05 * np.array([np.sin(x2), np.cos(x1)]) + 1e-3 * np.array([np.cos(x2), 0 * x1]))
        rep = fl.flow_estimate_report(v, bank32, v2=w)
        assert 0 < rep.denominator < 1e-2
        assert all(np.isfinite(r) and r > 0 for r in rep.ratios.values())
