import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zstretch import gamma, stretch_maps
from zstretch.scheme import (
    GridSpec,
    PdeCoefficients,
    SingularPivotError,
    StepError,
    Tridiagonal,
    TridiagonalOperatorPair,
    advance,
    assemble_pair,
    homogeneous_coefficients,
    homogeneous_field,
    lens_coefficients,
    lens_field,
    propagate,
    row_coefficients,
    thomas_solve,
)
from zstretch.verify import (
    Manufactured,
    apply_difference_operator,
    apply_operator,
    dense_solve_oracle,
)

import pinned


def random_tridiagonal(rng, n, dominance=3.0):
    lo = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    up = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    di = (np.abs(lo) + np.abs(up) + dominance) * np.exp(1j * rng.uniform(0, 2 * np.pi, n))
    return Tridiagonal(lo, di, up)


class TestGridSpec:
    def test_uniform(self):
        g = GridSpec.uniform(1.5, 0.75, 300, 600)
        assert g.h == 0.005 and g.tau == 0.00125
        assert g.sigma == pytest.approx(0.25)
        assert g.r[-1] == pytest.approx(1.5)

    @pytest.mark.parametrize("args", [(1, 1, 0.1, 0.1), (4, 0, 0.1, 0.1), (4, 4, 0.0, 0.1), (4, 4, 0.1, -1)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            GridSpec(*args)


class TestRowCoefficients:
    def test_pure_transport(self):
        tau = 0.01
        row = row_coefficients(PdeCoefficients(c2=1.0), 0.1, tau)
        assert row.new_center == pytest.approx(1 / tau)
        assert row.old_center == pytest.approx(1 / tau)
        for w in (row.new_plus, row.new_minus, row.old_plus, row.old_minus):
            assert w == 0

    def test_printed_weights(self):
        c = PdeCoefficients(0.3 + 0.1j, 1.2, -0.7, 2 - 5j, 0.4j, 0.9)
        h, tau = 0.05, 0.02
        row = row_coefficients(c, h, tau)
        assert row.new_plus == pytest.approx(c.c5 / (2 * h * tau) + c.c4 / (2 * h * h) + c.c3 / (4 * h))
        assert row.new_center == pytest.approx(-c.c4 / h**2 + c.c2 / tau + c.c1 / 2)
        assert row.new_minus == pytest.approx(-c.c5 / (2 * h * tau) + c.c4 / (2 * h * h) - c.c3 / (4 * h))
        assert row.c0 == c.c0

    def test_homogeneous_normalized_row(self):
        kappa, h, tau, m = 50.0, 0.01, 0.002, 1
        row = row_coefficients(homogeneous_coefficients(kappa, m, h), h, tau)
        s = 2 * tau / (-2j * kappa)
        alpha = -tau * 1j / (2 * kappa * h * h)
        assert s * row.new_minus == pytest.approx(-alpha * (1 - 1 / (2 * m)), rel=1e-13)
        assert s * row.new_center == pytest.approx(2 + 2 * alpha, rel=1e-13)
        assert s * row.new_plus == pytest.approx(-alpha * (1 + 1 / (2 * m)), rel=1e-13)
        assert s * row.old_center == pytest.approx(2 - 2 * alpha, rel=1e-13)

    def test_homogeneous_row_sums(self):
        kappa, h, tau = 80.0, 0.02, 0.01
        for m in (1, 2, 7, 40):
            row = row_coefficients(homogeneous_coefficients(kappa, m, h), h, tau)
            s = 2 * tau / (-2j * kappa)
            new = s * (row.new_plus + row.new_center + row.new_minus)
            old = s * (row.old_plus + row.old_center + row.old_minus)
            assert new == pytest.approx(2.0, abs=1e-12)
            assert old == pytest.approx(2.0, abs=1e-12)

    def test_bad_steps(self):
        with pytest.raises(ValueError):
            row_coefficients(PdeCoefficients(c2=1.0), 0.0, 0.1)


class TestCoefficients:
    def test_homogeneous(self):
        c = homogeneous_coefficients(3.0, 2, 0.5)
        assert c.c3 == 1.0
        assert c.c5 == 0 and c.c4 == 1 and c.c1 == 0 and c.c0 == 0

    def test_homogeneous_reference_c2(self):
        c = homogeneous_coefficients(pinned.REF_KAPPA1, 1, 0.1)
        assert c.c2 == pytest.approx(-1.995086e4j, rel=1e-7)

    def test_homogeneous_axis_rejected(self):
        with pytest.raises(ValueError):
            homogeneous_coefficients(1.0, 0, 0.1)

    def test_lens_exit_plane(self, ref_geom):
        k = 9975.43
        c = lens_coefficients(0.7, ref_geom.Z, k, ref_geom)
        ev = stretch_maps(0.7, ref_geom.Z, ref_geom)
        assert c.c5 == 0
        assert c.c2 == pytest.approx(-2j * k * ev.theta, rel=1e-15)

    def test_lens_c2_is_minus_inverse_gamma(self, ref_geom):
        k = 700.0
        xi = np.linspace(0.1, ref_geom.R1 * 0.99, 11)
        c = lens_coefficients(xi, 0.3, k, ref_geom)
        np.testing.assert_allclose(c.c2, -1 / gamma(xi, 0.3, ref_geom, k), rtol=1e-13)
        f = lens_field(ref_geom, k, 64, 0.3)
        assert f.c2[0] == pytest.approx(-1 / gamma(0.0, 0.3, ref_geom, k), rel=1e-14)

    def test_lens_pinned_symbolic(self, ref_geom):
        xi, zeta = pinned.MAP_POINT
        c = lens_coefficients(xi, zeta, pinned.REF_KAPPA1, ref_geom)
        assert c.c5 == pytest.approx(pinned.MAP_C5, rel=1e-13)
        assert c.c3 == pytest.approx(pinned.MAP_C3, rel=1e-13)
        assert c.c2 == pytest.approx(pinned.MAP_C2, rel=1e-13)
        assert c.c2.real == pytest.approx(pinned.MAP_C2.real, rel=1e-12)

    def test_lens_axis_rejected(self, ref_geom):
        with pytest.raises(ValueError):
            lens_coefficients(0.0, 0.1, 1.0, ref_geom)


class TestAssemblePair:
    def test_homogeneous_entries(self):
        M, kappa, h, tau = 4, 30.0, 0.1, 0.05
        pair = assemble_pair(homogeneous_field(kappa, M, h), h, tau)
        A = pair.A.to_dense()
        G = pair.G.to_dense()
        alpha = -tau * 1j / (2 * kappa * h * h)
        expect = np.zeros((M + 1, M + 1), dtype=complex)
        expect[0, 0], expect[0, 1] = 2 * alpha, -2 * alpha
        expect[M, M], expect[M, M - 1] = 2 * alpha, -2 * alpha
        for m in range(1, M):
            expect[m, m] = 2 * alpha
            expect[m, m - 1] = -alpha * (1 - 1 / (2 * m))
            expect[m, m + 1] = -alpha * (1 + 1 / (2 * m))
        np.testing.assert_allclose(A, expect, rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(G, 2 * np.eye(M + 1), atol=1e-14)

    def test_boundary_rows(self):
        M, kappa, h, tau = 16, 10.0, 0.05, 0.01
        pair = assemble_pair(homogeneous_field(kappa, M, h), h, tau)
        alpha = -tau * 1j / (2 * kappa * h * h)
        B = pair.B.to_dense()
        assert B[0, 0] == pytest.approx(2 + 2 * alpha) and B[0, 1] == pytest.approx(-2 * alpha)
        assert B[M, M] == pytest.approx(2 + 2 * alpha) and B[M, M - 1] == pytest.approx(-2 * alpha)

    def test_lens_flat_level_gives_identity_G(self, ref_geom):
        # at the exit plane phi vanishes, so the cross term and G's off-diagonals drop out
        pair = assemble_pair(lens_field(ref_geom, 900.0, 32, ref_geom.Z), ref_geom.R1 / 32, 0.01)
        np.testing.assert_allclose(pair.G.to_dense(), 2 * np.eye(33), atol=1e-13)

    def test_lens_flat_level_reduces_to_homogeneous(self, ref_geom):
        k, M = 900.0, 32
        h, tau = ref_geom.R1 / M, 0.01
        pair = assemble_pair(lens_field(ref_geom, k, M, ref_geom.Z), h, tau)
        theta = stretch_maps(np.arange(M + 1) * h, ref_geom.Z, ref_geom).theta
        g = 1 / (2j * k * theta)  # gamma where phi = psi = 0
        a = g * tau / h**2
        m = np.arange(1, M)
        np.testing.assert_allclose(pair.B.diag[1:M], 2 + 2 * a[1:M], rtol=1e-12)
        np.testing.assert_allclose(pair.B.upper[1:M], -a[1:M] * (1 + 1 / (2 * m)), rtol=1e-12)
        np.testing.assert_allclose(pair.B.lower[1:M], -a[1:M] * (1 - 1 / (2 * m)), rtol=1e-12)

    def test_lens_G_off_diagonal_is_gamma_phi(self, ref_geom):
        k, M, zeta = 2000.0, 64, 0.2
        h = ref_geom.R1 / M
        pair = assemble_pair(lens_field(ref_geom, k, M, zeta), h, 0.005)
        xi = np.arange(M + 1) * h
        gp = np.abs(gamma(xi, zeta, ref_geom, k) * stretch_maps(xi, zeta, ref_geom).phi)
        G = pair.G
        np.testing.assert_allclose(G.diag, 2.0, atol=1e-12)
        np.testing.assert_allclose(np.abs(G.upper[1:M]), 2 * gp[1:M] / h, rtol=1e-12)
        np.testing.assert_allclose(np.abs(G.lower[1:M]), 2 * gp[1:M] / h, rtol=1e-12)
        assert G.upper[0] == 0 and G.lower[M] == 0

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), M=st.integers(2, 40))
    def test_construction_identity(self, seed, M):
        rng = np.random.default_rng(seed)

        def rc(shape=M + 1):
            return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

        c2 = rc() + 5.0
        coeffs = PdeCoefficients(rc(), rc(), rc(), c2, rc(), 0.0)
        pair = assemble_pair(coeffs, 0.1, 0.05)
        B, C = pair.B.to_dense(), pair.C.to_dense()
        np.testing.assert_allclose(B + C, 2 * pair.G.to_dense(), atol=1e-12)
        np.testing.assert_allclose(B - C, 2 * pair.A.to_dense(), atol=1e-12)
        # interior rows: the normalization makes G's diagonal exactly 2
        np.testing.assert_allclose(pair.G.diag[1:M], 2.0, atol=1e-12)

    def test_source_term(self):
        pair = assemble_pair(PdeCoefficients(0, np.ones(6), 0, 2.0, 0, 3.0), 0.1, 0.5)
        np.testing.assert_allclose(pair.source, -2 * 0.5 / 2.0 * 3.0)

    def test_zero_c2_rejected(self):
        with pytest.raises(ValueError):
            assemble_pair(PdeCoefficients(0, np.ones(5), 0, 0.0, 0, 0), 0.1, 0.1)


class TestThomas:
    def test_identity(self):
        n = 7
        rhs = np.arange(n) + 1j
        tri = Tridiagonal(np.zeros(n), np.ones(n), np.zeros(n))
        np.testing.assert_array_equal(thomas_solve(tri, rhs), rhs)

    def test_two_by_two(self):
        tri = Tridiagonal([0, 1], [2, 2], [1, 0])
        np.testing.assert_allclose(thomas_solve(tri, [3, 3]), [1, 1], rtol=1e-15)

    def test_random_vs_dense(self):
        rng = np.random.default_rng(5)
        tri = random_tridiagonal(rng, 129)
        rhs = rng.standard_normal(129) + 1j * rng.standard_normal(129)
        x = thomas_solve(tri, rhs)
        ref = dense_solve_oracle(tri.to_dense(), rhs)
        assert np.max(np.abs(x - ref)) <= 1e-12 * np.max(np.abs(ref))
        assert np.max(np.abs(tri.matvec(x) - rhs)) <= 1e-10 * np.max(np.abs(rhs))

    def test_singular_pivot(self):
        tri = Tridiagonal([0, 1, 1], [1, 1, 1], [1, 1, 0])
        with pytest.raises(SingularPivotError) as info:
            thomas_solve(tri, [1, 2, 3])
        assert info.value.index == 1

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            thomas_solve(Tridiagonal(np.zeros(3), np.ones(3), np.zeros(3)), np.ones(4))


class TestAdvance:
    def test_zero_A_is_identity(self):
        n = 9
        G = Tridiagonal(np.full(n, 0.3), np.full(n, 2.0), np.full(n, -0.2))
        pair = TridiagonalOperatorPair(G, G)
        u = np.linspace(0, 1, n) + 0.5j
        np.testing.assert_allclose(advance(u, pair), u, rtol=1e-14)

    def test_constant_preserved(self):
        pair = assemble_pair(homogeneous_field(100.0, 50, 0.02), 0.02, 0.01)
        u = np.full(51, 0.7 - 0.2j)
        np.testing.assert_allclose(advance(u, pair), u, rtol=1e-13)

    def test_matches_dense_step(self):
        M = 64
        pair = assemble_pair(homogeneous_field(40.0, M, 1 / M), 1 / M, 0.01)
        rng = np.random.default_rng(2)
        u = rng.standard_normal(M + 1) + 1j * rng.standard_normal(M + 1)
        E_u = dense_solve_oracle(pair.B.to_dense(), pair.C.to_dense() @ u)
        np.testing.assert_allclose(advance(u, pair), E_u, rtol=1e-12, atol=1e-13)

    def test_forcing_exact_linear_growth(self):
        # c4 u_rr + c2 u_z + c0 = 0 is solved by u = a - (c0/c2) z, reproduced exactly
        c2, c0, tau = 2.0 - 1j, 0.5 + 0.25j, 0.1
        pair = assemble_pair(PdeCoefficients(0, np.ones(11), 0, c2, 0, c0), 0.1, tau)
        u = np.full(11, 1.0 + 0j)
        for n in range(1, 6):
            u = advance(u, pair)
            np.testing.assert_allclose(u, 1.0 - c0 / c2 * n * tau, rtol=1e-12)

    def test_symmetric_mirror(self):
        # a Gaussian on the half line stays smooth through the axis: u1 - u0 = O(h^2)
        errs = []
        for M in (64, 128, 256):
            h = 1.0 / M
            pair = assemble_pair(homogeneous_field(50.0, M, h), h, 0.002)
            u = np.exp(-((np.arange(M + 1) * h) ** 2) / 0.04) + 0j
            for _ in range(20):
                u = advance(u, pair)
            errs.append(abs(u[1] - u[0]))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
        assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)


class TestPropagate:
    def test_counts_and_callback(self):
        pair = assemble_pair(homogeneous_field(10.0, 8, 0.1), 0.1, 0.05)
        seen = []
        propagate(np.ones(9), lambda n: pair, 5, lambda n, u: seen.append(n))
        assert seen == [0, 1, 2, 3, 4, 5]

    def test_nonfinite_reports_step(self):
        pair = assemble_pair(homogeneous_field(10.0, 8, 0.1), 0.1, 0.05)
        u0 = np.ones(9, dtype=complex)
        u0[3] = np.nan
        with pytest.raises(StepError) as info:
            propagate(u0, lambda n: pair, 5)
        assert info.value.step == 1

    def test_singular_reports_step(self):
        good = assemble_pair(homogeneous_field(10.0, 2, 0.1), 0.1, 0.05)
        bad = TridiagonalOperatorPair(Tridiagonal([0, 1, 1], [1, 1, 1], [1, 1, 0]), good.C)
        with pytest.raises(StepError) as info:
            propagate(np.ones(3), lambda n: good if n < 3 else bad, 5)
        assert info.value.step == 3


QUADRATIC = Manufactured(
    w=lambda r, z: 1 + 2 * r - z + 0.5 * r * r - 1.5 * r * z + 0.25 * z * z,
    w_r=lambda r, z: 2 + r - 1.5 * z,
    w_rr=lambda r, z: np.ones_like(r),
    w_z=lambda r, z: -1 - 1.5 * r + 0.5 * z,
    w_rz=lambda r, z: -1.5 * np.ones_like(r),
)


@pytest.mark.parametrize("h, tau", [(0.1, 0.05), (0.3, 0.7), (0.01, 0.2)])
def test_quadratic_exactness(h, tau):
    c = PdeCoefficients(0.7 - 0.2j, 1.3, 0.4 + 1j, -3j, 0.0, 0.0)
    r, z = np.array([0.5, 1.0, 2.0]), np.array([0.3, 0.9, 1.4])
    exact = apply_operator(c, QUADRATIC, r, z)
    approx = apply_difference_operator(c, QUADRATIC, r, z, h, tau)
    np.testing.assert_allclose(approx, exact, atol=1e-11)
