import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from plap import SimParams, VectorField
from plap import galerkin as gk
from plap.fields import Grid, l2_norm


class TestBasis:
    def test_eigenvalues_1d(self):
        b = gk.build_basis(1, 5)
        np.testing.assert_allclose(b.scalar_eigenvalues, math.pi**2 * np.arange(1, 6) ** 2)

    def test_eigenvalue_2d(self):
        b = gk.build_basis(2, 3)
        k = list(map(tuple, b.modes)).index((1, 1))
        assert b.scalar_eigenvalues[k] == pytest.approx(2 * math.pi**2)
        assert b.size == 2 * 9

    def test_orthonormal_on_collocation_grid(self):
        b = gk.build_basis(2, 4)
        flat = b.phi.reshape(b.n_scalar, -1)
        gram = flat @ flat.T * b.quad_weight
        np.testing.assert_allclose(gram, np.eye(b.n_scalar), atol=1e-12)

    def test_aliasing_refused(self):
        with pytest.raises(gk.AliasingError):
            gk.build_basis(1, 8, quad_points=16)
        gk.build_basis(1, 8, quad_points=17)


class TestProjection:
    def test_first_mode(self):
        b = gk.build_basis(1, 6)
        c = gk.project(lambda x: math.sqrt(2) * np.sin(np.pi * x), b)
        np.testing.assert_allclose(c, np.eye(1, 6), atol=1e-13)

    def test_zero(self):
        b = gk.build_basis(2, 3)
        assert not gk.project(lambda x, y: np.zeros((2,) + x.shape), b).any()

    def test_indicator_closed_form(self):
        b = gk.build_basis(1, 8)
        c = gk.project(lambda x: ((x >= 0.25) & (x <= 0.75)).astype(float), b, quad_points=4095)
        k = np.arange(1, 9)
        exact = math.sqrt(2) * (np.cos(k * np.pi / 4) - np.cos(3 * k * np.pi / 4)) / (k * np.pi)
        np.testing.assert_allclose(c[0], exact, atol=1e-3)

    @given(st.integers(0, 2**31))
    def test_parseval(self, seed):
        b = gk.build_basis(1, 8)
        c = np.random.default_rng(seed).normal(size=(1, 8))
        g = Grid(1, 63)
        v = gk.reconstruct(gk.GalerkinState(c, b, SimParams()), g)
        # midpoint sums of sine products are exact for modes below n + 1
        assert l2_norm(v) == pytest.approx(np.linalg.norm(c), rel=1e-12)

    def test_reconstruct_single_mode(self):
        b = gk.build_basis(1, 4)
        g = Grid(1, 15)
        c = np.zeros((1, 4))
        c[0, 1] = 2.0
        v = gk.reconstruct(gk.GalerkinState(c, b, SimParams()), g)
        np.testing.assert_allclose(v.values[0], 2 * math.sqrt(2) * np.sin(2 * np.pi * g.axis), atol=1e-13)

    @given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, seed, a, s):
        r = np.random.default_rng(seed)
        g = Grid(1, 31)
        b = gk.build_basis(1, 6)
        u, w = (VectorField(g, r.normal(size=(1, 31))) for _ in range(2))
        np.testing.assert_allclose(gk.project(u * a + w * s, b), a * gk.project(u, b) + s * gk.project(w, b),
                                   atol=1e-12)


class TestRhs:
    def test_zero(self):
        b = gk.build_basis(1, 6)
        sys = gk.GalerkinSystem(b, SimParams(mu=0.5))
        assert not sys.rhs(np.zeros((1, 6))).any()

    def test_p_two_linear_part(self, rng):
        b = gk.build_basis(1, 6)
        nu = 0.3
        sys = gk.GalerkinSystem(b, SimParams(p=2.0, mu=0.5, nu=nu, delta=0.0))
        c = rng.normal(size=(1, 6))
        np.testing.assert_allclose(sys.rhs(c), -(nu + 1) * b.scalar_eigenvalues * c, rtol=1e-12)

    def test_single_mode_quadrature_oracle(self):
        nu, c1 = 0.05, 0.7
        b = gk.build_basis(1, 4, quad_points=64)
        sys = gk.GalerkinSystem(b, SimParams(p=1.8, mu=1.0, nu=nu, delta=0.0))
        c = np.zeros((1, 4))
        c[0, 0] = c1
        integrand = lambda x: (1 + 2 * math.pi**2 * c1**2 * math.cos(math.pi * x) ** 2) ** -0.1 \
            * 2 * math.pi**2 * c1 * math.cos(math.pi * x) ** 2
        exact = -(nu * math.pi**2 * c1 + quad(integrand, 0, 1, epsabs=1e-13)[0])
        assert sys.rhs(c)[0, 0] == pytest.approx(exact, rel=1e-10)

    def test_requires_mu(self):
        with pytest.raises(ValueError):
            gk.GalerkinSystem(gk.build_basis(1, 4), SimParams(mu=0.0))

    def test_vector_tensor_matches_convective(self, rng):
        b = gk.build_basis(2, 2)
        sys = gk.GalerkinSystem(b, SimParams(dim=2, mu=0.5))
        c = rng.normal(size=(2, b.n_scalar))
        flat = c.ravel()
        B = sys.vector_tensor()
        np.testing.assert_allclose(np.einsum("jil,i,l->j", B, flat, flat), sys.convective(c).ravel(), atol=1e-12)

    def test_diffusion_matrix_symmetric_positive(self, rng):
        b = gk.build_basis(2, 3)
        sys = gk.GalerkinSystem(b, SimParams(p=1.7, dim=2, mu=0.2))
        D = sys.diffusion_matrix(rng.normal(size=(2, b.n_scalar)))
        np.testing.assert_allclose(D, D.T, atol=1e-10)
        assert np.linalg.eigvalsh(D).min() > 0


class TestIntegrate:
    def test_zero(self):
        b = gk.build_basis(1, 4)
        out = gk.integrate(np.zeros((1, 4)), SimParams(mu=0.5), 1e-3, 0.01, b)
        assert not out.final.coeffs.any()

    def test_mode_decoupling(self):
        b = gk.build_basis(1, 4)
        c0 = np.array([[1.0, -0.5, 0.25, 0.1]])
        out = gk.integrate(c0, SimParams(p=2.0, mu=0.3, nu=0.0, delta=0.0), 1e-4, 0.05, b, stride=50)
        exact = c0 * np.exp(-b.scalar_eigenvalues * 0.05)
        np.testing.assert_allclose(out.final.coeffs, exact, rtol=1e-9, atol=1e-12)

    def test_rk4_order(self):
        b = gk.build_basis(1, 3)
        c0 = np.array([[1.0, 0.4, -0.2]])
        P = SimParams(p=2.0, mu=0.3, nu=0.0, delta=0.0)
        exact = c0 * np.exp(-b.scalar_eigenvalues * 0.1)
        errs = [np.abs(gk.integrate(c0, P, dt, 0.1, b).final.coeffs - exact).max() for dt in (4e-3, 2e-3)]
        assert errs[0] / errs[1] == pytest.approx(16, rel=0.15)

    def test_energy_residual_small(self):
        b = gk.build_basis(1, 8)
        c0 = gk.project(lambda x: np.sin(np.pi * x) + 0.3 * np.sin(3 * np.pi * x), b)
        out = gk.integrate(c0, SimParams(p=1.8, mu=0.5, nu=0.01, delta=1.0), 1e-4, 0.02, b, stride=20)
        assert max(out.energy_residual) < 1e-9
        assert out.times[-1] == pytest.approx(0.02)

    def test_blow_up_guard(self):
        b = gk.build_basis(1, 8)
        c0 = np.ones((1, 8))
        with pytest.raises(gk.BlowUpError):
            gk.integrate(c0, SimParams(p=2.0, mu=0.5, delta=0.0), 1.0, 10.0, b)
