import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cnslab.spectral import (
    GridField,
    TorusGrid,
    dealias,
    dealias_array,
    deformation,
    divergence,
    evaluate_offgrid,
    fft,
    forward_transform,
    ifft,
    integrate,
    inverse_transform,
    lp_norm,
    mul,
    spectral_gradient,
)

from conftest import band_limited


class TestGrid:
    def test_rejects_bad_resolution(self):
        with pytest.raises(ValueError, match="power of two"):
            TorusGrid(2, 48)
        with pytest.raises(ValueError, match="dim"):
            TorusGrid(4, 32)

    def test_volume_and_coords(self, grid32):
        assert grid32.volume == pytest.approx((2 * np.pi) ** 2)
        assert grid32.coords.shape == (2, 32, 32)
        assert grid32.coords[0, 1, 0] == pytest.approx(2 * np.pi / 32)

    def test_dealias_mask_cutoff(self, grid32):
        # keeps |k_i| <= 2/3 * 16
        kept = np.abs(grid32.k1d)[grid32.dealias_mask[:, 0]]
        assert kept.max() == 10


class TestGridField:
    def test_physical_must_be_real(self, grid32):
        with pytest.raises(ValueError, match="real"):
            GridField(grid32, np.ones(grid32.shape, dtype=complex))

    def test_rank_detection(self, grid32):
        assert GridField(grid32, np.zeros(grid32.shape)).rank == "scalar"
        assert GridField(grid32, np.zeros((2,) + grid32.shape)).rank == "vector"
        assert GridField(grid32, np.zeros((2, 2) + grid32.shape)).rank == "matrix"
        with pytest.raises(ValueError):
            GridField(grid32, np.zeros((3,) + grid32.shape))

    def test_values_are_read_only(self, grid32):
        f = GridField(grid32, np.zeros(grid32.shape))
        with pytest.raises(ValueError):
            f.values[0, 0] = 1.0

    @pytest.mark.parametrize("rank_shape", [(), (2,), (2, 2)])
    @pytest.mark.parametrize("representation", ["physical", "spectral"])
    def test_snapshot_round_trip(self, grid32, rng, rank_shape, representation):
        f = GridField(grid32, rng.standard_normal(rank_shape + grid32.shape))
        if representation == "spectral":
            f = f.spectral()
        data = f.to_bytes()
        header = data.split(b"\n", 1)[0].decode()
        count = int(np.prod(rank_shape, dtype=int))
        assert header == f"2 32 {f.rank} {representation} {count}"
        g = GridField.from_bytes(data)
        assert g.representation == representation
        assert np.array_equal(g.values, f.values)

    def test_snapshot_stream_reads_consecutive(self, grid32, rng):
        a = GridField(grid32, rng.standard_normal(grid32.shape))
        b = GridField(grid32, rng.standard_normal((2,) + grid32.shape))
        stream = io.BytesIO(a.to_bytes() + b.to_bytes())
        assert np.array_equal(GridField.read_from(stream).values, a.values)
        assert np.array_equal(GridField.read_from(stream).values, b.values)

    def test_snapshot_truncated(self, grid32):
        data = GridField(grid32, np.zeros(grid32.shape)).to_bytes()
        with pytest.raises(ValueError, match="truncated"):
            GridField.from_bytes(data[:-8])


class TestTransforms:
    def test_constant_field(self, grid32):
        f_hat = forward_transform(GridField(grid32, np.full(grid32.shape, 2.5))).values
        assert f_hat[0, 0] == pytest.approx(2.5)
        f_hat = f_hat.copy()
        f_hat[0, 0] = 0
        assert np.max(np.abs(f_hat)) < 1e-14

    def test_cosine_modes(self, grid32):
        x1 = grid32.coords[0]
        f_hat = forward_transform(GridField(grid32, np.cos(x1))).values.copy()
        assert f_hat[1, 0] == pytest.approx(0.5)
        assert f_hat[-1, 0] == pytest.approx(0.5)
        f_hat[1, 0] = f_hat[-1, 0] = 0
        assert np.max(np.abs(f_hat)) < 1e-14

    def test_round_trip(self, grid32, rng):
        a = band_limited(grid32, rng, 8)
        f = GridField(grid32, a)
        back = inverse_transform(forward_transform(f)).values
        assert np.max(np.abs(back - a)) <= 1e-12 * np.max(np.abs(a))

    def test_conjugate_symmetry(self, grid32, rng):
        a_hat = fft(grid32, rng.standard_normal(grid32.shape))
        mirrored = np.conj(np.roll(np.flip(a_hat, axis=(0, 1)), 1, axis=(0, 1)))
        assert np.allclose(a_hat, mirrored, atol=1e-14)

    def test_representation_errors(self, grid32):
        f = GridField(grid32, np.zeros(grid32.shape))
        with pytest.raises(ValueError, match="physical"):
            inverse_transform(f)
        with pytest.raises(ValueError, match="spectral"):
            dealias(f)

    def test_parseval(self, grid32, rng):
        a = rng.standard_normal(grid32.shape)
        lhs = lp_norm(GridField(grid32, a), 2) ** 2
        rhs = grid32.volume * np.sum(np.abs(fft(grid32, a)) ** 2)
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestGradient:
    def test_constant(self, grid32):
        g = spectral_gradient(GridField(grid32, np.full(grid32.shape, 3.0)))
        assert np.max(np.abs(g.values)) < 1e-13

    def test_sine(self, grid32):
        x1 = grid32.coords[0]
        g = spectral_gradient(GridField(grid32, np.sin(x1))).values
        assert np.max(np.abs(g[0] - np.cos(x1))) < 1e-13
        assert np.max(np.abs(g[1])) < 1e-13

    def test_orderings(self, grid32):
        x1, x2 = grid32.coords
        u = GridField(grid32, np.array([np.sin(x2), np.zeros_like(x1)]))
        Du = spectral_gradient(u, "D").values
        nab = spectral_gradient(u, "nabla").values
        # (Du)[i, j] = d_j u^i
        assert np.allclose(Du[0, 1], np.cos(x2), atol=1e-13)
        assert np.allclose(nab[1, 0], np.cos(x2), atol=1e-13)
        assert np.allclose(Du[1, 0], 0.0, atol=1e-13)

    def test_rotation_deformation(self, grid32):
        # periodic stand-in for the rotation (-x2, x1): (-sin x2, sin x1)
        x1, x2 = grid32.coords
        u = GridField(grid32, np.array([-np.sin(x2), np.sin(x1)]))
        D = deformation(u).values
        # closed form: D12 = D21 = (cos x1 - cos x2)/2, diagonal zero
        expected = 0.5 * (np.cos(x1) - np.cos(x2))
        assert np.max(np.abs(D[0, 1] - expected)) < 1e-13
        assert np.max(np.abs(D[1, 0] - expected)) < 1e-13
        assert np.max(np.abs(D[0, 0])) < 1e-13
        assert np.max(np.abs(D - np.swapaxes(D, 0, 1))) == 0.0

    def test_divergence_of_matrix_contracts_first_index(self, grid32):
        x1, x2 = grid32.coords
        M = np.zeros((2, 2) + grid32.shape)
        M[0, 1] = np.sin(x1)  # contributes d_1 M[0,1] to component 1
        div = divergence(GridField(grid32, M)).values
        assert np.allclose(div[1], np.cos(x1), atol=1e-13)
        assert np.allclose(div[0], 0.0, atol=1e-13)

    def test_nyquist_derivative_is_zero(self, grid32):
        x1 = grid32.coords[0]
        g = spectral_gradient(GridField(grid32, np.cos(16 * x1))).values
        assert np.max(np.abs(g)) < 1e-12

    @settings(max_examples=25, deadline=None)
    @given(kx=st.integers(-10, 10), ky=st.integers(-10, 10), phase=st.floats(0, 6.28))
    def test_exact_on_trig_polynomials(self, kx, ky, phase):
        grid = TorusGrid(2, 32)
        x1, x2 = grid.coords
        arg = kx * x1 + ky * x2 + phase
        g = spectral_gradient(GridField(grid, np.sin(arg))).values
        scale = max(1, abs(kx), abs(ky))
        assert np.max(np.abs(g[0] - kx * np.cos(arg))) <= 1e-12 * scale
        assert np.max(np.abs(g[1] - ky * np.cos(arg))) <= 1e-12 * scale


class TestDealias:
    def test_low_band_unchanged(self, grid32, rng):
        a = band_limited(grid32, rng, 10)
        assert np.max(np.abs(dealias_array(grid32, a) - a)) < 1e-13

    def test_nyquist_removed(self, grid32):
        x1 = grid32.coords[0]
        assert np.max(np.abs(dealias_array(grid32, np.cos(16 * x1)))) < 1e-14

    def test_product_matches_padded_oracle(self, grid32, rng):
        # two fields in the lower third: their product is exactly resolved
        a = band_limited(grid32, rng, 5)
        b = band_limited(grid32, rng, 5)
        fine = TorusGrid(2, 64)

        def pad(x):
            h = fft(grid32, x)
            H = np.zeros(fine.shape, dtype=complex)
            idx = np.r_[0:6, 27:32]
            fidx = np.r_[0:6, 59:64]
            H[np.ix_(fidx, fidx)] = h[np.ix_(idx, idx)]
            return ifft(fine, H)

        exact = (pad(a) * pad(b))[::2, ::2]
        assert np.max(np.abs(mul(grid32, a, b) - exact)) < 1e-13

    def test_projection_properties(self, grid32, rng):
        a = rng.standard_normal(grid32.shape)
        b = rng.standard_normal(grid32.shape)
        Pa = dealias_array(grid32, a)
        assert np.max(np.abs(dealias_array(grid32, Pa) - Pa)) < 1e-13
        lhs = np.sum(Pa * b)
        rhs = np.sum(a * dealias_array(grid32, b))
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestOffgrid:
    def test_grid_points(self, grid32, rng):
        a = band_limited(grid32, rng, 8)
        pts = grid32.coords.reshape(2, -1)
        vals = evaluate_offgrid(GridField(grid32, a), pts)
        assert np.max(np.abs(vals - a.ravel())) < 1e-12

    def test_sine_anywhere(self, grid32, rng):
        pts = rng.uniform(-3, 10, size=(2, 50))
        vals = evaluate_offgrid(GridField(grid32, np.sin(grid32.coords[0])), pts)
        assert np.max(np.abs(vals - np.sin(pts[0]))) < 1e-12

    def test_direct_summation(self, grid32, rng):
        a = band_limited(grid32, rng, 6)
        pts = rng.uniform(0, 2 * np.pi, size=(2, 20))
        a_hat = fft(grid32, a)
        k = grid32.k1d
        direct = np.array([
            np.sum(a_hat * np.exp(1j * (k[:, None] * p[0] + k[None, :] * p[1]))).real for p in pts.T
        ])
        vals = evaluate_offgrid(GridField(grid32, a), pts)
        assert np.max(np.abs(vals - direct)) < 1e-12

    def test_vector_field(self, grid32, rng):
        x1, x2 = grid32.coords
        pts = rng.uniform(0, 2 * np.pi, size=(2, 10))
        vals = evaluate_offgrid(GridField(grid32, np.array([np.sin(x1), np.cos(x2)])), pts)
        assert vals.shape == (2, 10)
        assert np.allclose(vals[1], np.cos(pts[1]), atol=1e-12)


class TestNorms:
    def test_zero(self, grid32):
        assert lp_norm(GridField(grid32, np.zeros(grid32.shape)), 3) == 0.0

    @pytest.mark.parametrize("p", [1, 2, 3.5])
    def test_constant(self, grid32, p):
        c = -1.7
        V = grid32.volume
        assert lp_norm(GridField(grid32, np.full(grid32.shape, c)), p) == pytest.approx(abs(c) * V ** (1 / p))

    def test_sine_l2(self, grid32):
        val = lp_norm(GridField(grid32, np.sin(grid32.coords[0])), 2)
        assert val == pytest.approx(np.sqrt(2 * np.pi**2), rel=1e-13)

    def test_max_norm(self, grid32):
        assert lp_norm(GridField(grid32, np.sin(grid32.coords[0])), np.inf) == pytest.approx(1.0)

    def test_rejects_small_p(self, grid32):
        with pytest.raises(ValueError):
            lp_norm(GridField(grid32, np.zeros(grid32.shape)), 0.5)

    def test_integrate_vector(self, grid32):
        f = GridField(grid32, np.array([np.ones(grid32.shape), np.sin(grid32.coords[0])]))
        out = integrate(f)
        assert out[0] == pytest.approx(grid32.volume)
        assert abs(out[1]) < 1e-13

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-5, 5, allow_nan=False), st.integers(0, 2**31 - 1))
    def test_homogeneity(self, c, seed):
        grid = TorusGrid(2, 16)
        a = np.random.default_rng(seed).standard_normal(grid.shape)
        for p in (1.5, 2, np.inf):
            lhs = lp_norm(GridField(grid, c * a), p)
            assert lhs == pytest.approx(abs(c) * lp_norm(GridField(grid, a), p), rel=1e-12, abs=1e-300)
