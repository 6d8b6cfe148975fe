import numpy as np
import pytest

from probshape import deformation as dfm
from probshape import geometry as geo


def wiggly_16gon(seed=3):
    rng = np.random.default_rng(seed)
    poly = geo.regular_polygon((0.0, 0.0), 1.0, 16)
    return geo.PolygonalBoundary(poly.vertices + 0.05 * rng.normal(size=(16, 2)))


class TestAssembly:
    def test_regular_polygon_element_entries(self):
        k = 12
        poly = geo.regular_polygon((0.0, 0.0), 1.0, k)
        L = poly.edge_lengths[0]
        fem = dfm.assemble_system(poly)
        assert np.allclose(fem.mass_diag, 2.0 * L / 3.0, rtol=1e-13)
        assert np.allclose(fem.mass_off, L / 6.0, rtol=1e-13)
        assert np.allclose(fem.stiffness_diag, 2.0 / L, rtol=1e-13)
        assert np.allclose(fem.stiffness_off, -1.0 / L, rtol=1e-13)

    def test_stiffness_annihilates_constants(self):
        b = wiggly_16gon()
        fem = dfm.assemble_system(b)
        K = dfm.dense_matrix(fem.stiffness_diag, fem.stiffness_off)
        assert np.max(np.abs(K @ np.ones(16))) < 1e-12

    def test_mass_row_sums_are_half_support_lengths(self):
        b = wiggly_16gon(4)
        fem = dfm.assemble_system(b)
        M = dfm.dense_matrix(fem.mass_diag, fem.mass_off)
        support = (b.edge_lengths + np.roll(b.edge_lengths, 1)) / 2.0
        assert np.allclose(M.sum(axis=1), support, atol=1e-14)

    def test_system_is_half_k_plus_m(self):
        b = wiggly_16gon(5)
        fem = dfm.assemble_system(b)
        assert np.allclose(fem.system_diag, 0.5 * fem.stiffness_diag + fem.mass_diag, rtol=1e-14)
        fem_full = dfm.assemble_system(b, half_stiffness=False)
        assert np.allclose(fem_full.system_diag, fem_full.stiffness_diag + fem_full.mass_diag, rtol=1e-14)

    def test_system_spd_with_mass_lower_bound(self):
        for seed in (1, 2, 3):
            b = wiggly_16gon(seed)
            fem = dfm.assemble_system(b)
            A = dfm.dense_matrix(fem.system_diag, fem.system_off)
            M = dfm.dense_matrix(fem.mass_diag, fem.mass_off)
            eig_a = np.linalg.eigvalsh(A).min()
            eig_m = np.linalg.eigvalsh(M).min()
            assert eig_m > 0.0
            assert eig_a >= eig_m - 1e-12

    def test_quadrature_rule_integrates_p1_products_exactly(self):
        b = wiggly_16gon(6)
        fem = dfm.assemble_system(b)
        # integrate hat_start * hat_end over edge 0 with the stored rule
        e = 0
        pts = fem.quad_points[e]
        wts = fem.quad_weights[e]
        t = np.linalg.norm(pts - b.vertices[e], axis=1) / b.edge_lengths[e]
        val = np.sum(wts * (1 - t) * t)
        assert val == pytest.approx(b.edge_lengths[e] / 6.0, rel=1e-12)


class TestSolve:
    def test_constant_data_recovers_constant(self):
        b = wiggly_16gon(7)
        fem = dfm.assemble_system(b)
        c = 0.37
        d = dfm.apply_cyclic(fem.mass_diag, fem.mass_off, c * np.ones(16))
        w = dfm.solve_deformation(fem, d)
        assert np.allclose(w, c, atol=1e-13)

    def test_zero_data_gives_zero(self):
        fem = dfm.assemble_system(wiggly_16gon(8))
        assert np.array_equal(dfm.solve_deformation(fem, np.zeros(16)), np.zeros(16))

    def test_matches_dense_lu(self):
        rng = np.random.default_rng(9)
        for seed in range(5):
            b = wiggly_16gon(10 + seed)
            fem = dfm.assemble_system(b)
            d = rng.normal(size=16)
            w = dfm.solve_deformation(fem, d)
            A = dfm.dense_matrix(fem.system_diag, fem.system_off)
            w_dense = np.linalg.solve(A, d)
            assert np.max(np.abs(w - w_dense)) < 1e-10

    def test_riesz_identity_rowwise(self):
        b = wiggly_16gon(20)
        fem = dfm.assemble_system(b)
        d = np.random.default_rng(21).normal(size=16)
        w = dfm.solve_deformation(fem, d)
        back = dfm.apply_cyclic(fem.system_diag, fem.system_off, w)
        assert np.max(np.abs(back - d)) < 1e-10

    def test_multiple_right_hand_sides(self):
        fem = dfm.assemble_system(wiggly_16gon(22))
        B = np.random.default_rng(23).normal(size=(16, 3))
        X = dfm.solve_cyclic_tridiagonal(fem.system_diag, fem.system_off, B)
        A = dfm.dense_matrix(fem.system_diag, fem.system_off)
        assert np.max(np.abs(X - np.linalg.solve(A, B))) < 1e-10

    def test_mesh_refinement_converges_quadratically(self):
        # smooth data on the unit circle: -(1/2) w'' + w = cos(3 theta)
        mode = 3
        exact_coeff = 1.0 / (1.0 + 0.5 * mode**2)
        errs = []
        for k in (64, 128, 256):
            poly = geo.regular_polygon((0.0, 0.0), 1.0, k)
            fem = dfm.assemble_system(poly)
            theta = 2.0 * np.pi * np.arange(k) / k
            # consistent load: mass matrix applied to nodal values of f
            f = np.cos(mode * theta)
            d = dfm.apply_cyclic(fem.mass_diag, fem.mass_off, f)
            w = dfm.solve_deformation(fem, d)
            errs.append(np.max(np.abs(w - exact_coeff * f)))
        rate1 = errs[0] / errs[1]
        rate2 = errs[1] / errs[2]
        assert 3.0 < rate1 < 5.0
        assert 3.0 < rate2 < 5.0

    def test_zero_length_edge_rejected(self):
        b = wiggly_16gon(24)
        object.__setattr__(b, "edge_lengths", b.edge_lengths * 0.0)
        with pytest.raises(geo.GeometryError):
            dfm.assemble_system(b)


class TestGalerkinProjection:
    def test_zero_field(self):
        fem = dfm.assemble_system(wiggly_16gon(30))
        W = dfm.galerkin_project(fem, np.zeros(16))
        assert np.array_equal(W, np.zeros((16, 2)))

    def test_regular_polygon_unit_field_closed_form(self):
        # consistent-mass magnitude 3 cos(pi/k) / (2 + cos(2 pi/k)) along the
        # vertex bisector (the lumped-mass average would give cos(pi/k))
        for k in (4, 8, 32):
            poly = geo.regular_polygon((0.0, 0.0), 1.0, k)
            fem = dfm.assemble_system(poly)
            W = dfm.galerkin_project(fem, np.ones(k))
            mags = np.linalg.norm(W, axis=1)
            expected = 3.0 * np.cos(np.pi / k) / (2.0 + np.cos(2.0 * np.pi / k))
            assert np.allclose(mags, expected, rtol=1e-12)
            # direction: outward bisector == radial direction for regular polygons
            radial = poly.vertices / np.linalg.norm(poly.vertices, axis=1)[:, None]
            assert np.allclose(W / mags[:, None], radial, atol=1e-12)

    def test_matches_dense_oracle(self):
        b = wiggly_16gon(31)
        fem = dfm.assemble_system(b)
        w = np.random.default_rng(32).normal(size=16)
        W = dfm.galerkin_project(fem, w)
        k = 16
        M = dfm.dense_matrix(fem.mass_diag, fem.mass_off)
        bvec = np.zeros((k, 2))
        for e in range(k):
            L = b.edge_lengths[e]
            n = b.normals[e]
            for c in range(2):
                bvec[e, c] += n[c] * L / 6.0 * (2.0 * w[e] + w[(e + 1) % k])
                bvec[(e + 1) % k, c] += n[c] * L / 6.0 * (w[e] + 2.0 * w[(e + 1) % k])
        W_dense = np.linalg.solve(M, bvec)
        assert np.max(np.abs(W - W_dense)) < 1e-10


class TestUpdateVertices:
    def test_zero_step_keeps_chain(self):
        b = wiggly_16gon(40)
        out = dfm.update_vertices(b, np.ones((16, 2)), 0.0)
        assert np.array_equal(out.vertices, b.vertices)

    def test_outward_normals_inflate(self):
        poly = geo.regular_polygon((0.0, 0.0), 1.0, 32)
        fem = dfm.assemble_system(poly)
        W = dfm.galerkin_project(fem, np.ones(32))
        out = dfm.update_vertices(poly, W, 0.05)
        assert geo.signed_area(out) > geo.signed_area(poly)

    def test_self_intersection_is_hard_error(self):
        poly = geo.regular_polygon((0.0, 0.0), 1.0, 8)
        W = np.zeros((8, 2))
        W[0] = [-3.0, 0.0]  # drive vertex 0 through the opposite side
        with pytest.raises(geo.GeometryError):
            dfm.update_vertices(poly, W, 1.0)

    def test_orientation_flip_is_hard_error(self):
        poly = geo.regular_polygon((0.0, 0.0), 1.0, 4)
        W = np.column_stack((np.zeros(4), -2.0 * poly.vertices[:, 1]))  # mirror across the x axis
        with pytest.raises(geo.GeometryError):
            dfm.update_vertices(poly, W, 1.0)

    def test_nonfinite_field_rejected(self):
        poly = geo.regular_polygon((0.0, 0.0), 1.0, 4)
        W = np.full((4, 2), np.nan)
        with pytest.raises(ValueError):
            dfm.update_vertices(poly, W, 1.0)
