import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from plap import SchemeConfig, SimParams, make_initial, run
from plap import diagnostics as dg
from plap.fields import Grid, Trajectory


def heat_params(**kw):
    base = dict(p=2.0, mu=0.0, nu=0.0, delta=0.0, n_cells=63, dt=1e-3, t_end=0.05)
    return SimParams(**{**base, **kw})


class TestRecord:
    def test_columns_frozen(self):
        assert dg.DiagnosticsRecord.CSV_COLUMNS == (
            "time", "l2", "linf", "grad_l2", "grad_lp", "weighted_flux",
            "energy_residual", "overshoot", "B_mu", "phi_weight",
        )

    def test_zero_field(self):
        P = SimParams(mu=0.2, n_cells=15)
        rec = dg.make_record(P.grid.zeros(), 0.5, P, 0.0)
        assert rec.l2_norm == rec.grad_l2 == rec.overshoot == 0.0
        assert rec.B_mu == pytest.approx(0.2)

    def test_phi_weight(self):
        P = SimParams(p=1.7, mu=0.1, alpha=2.0, n_cells=31)
        v = make_initial({"kind": "sine"}, P.grid)
        rec = dg.make_record(v, 0.3, P, 1.0)
        assert rec.phi_weight == pytest.approx(0.3**2.0 * rec.B_mu ** ((4 - 1.7) / 2), rel=1e-14)
        assert rec.B_mu == pytest.approx(0.1 + rec.grad_l2**2, rel=1e-14)


class TestEnergyResidual:
    def test_zero_trajectory(self):
        P = heat_params(n_cells=15)
        tr = run(P.grid.zeros(), P, SchemeConfig(stop_at_extinction=False))
        assert all(dg.energy_residual(tr, k) == 0.0 for k in range(len(tr) - 1))

    def test_heat_halves(self):
        maxes = []
        for dt in (2e-3, 1e-3, 5e-4):
            P = heat_params(dt=dt)
            tr = run(make_initial({"kind": "sine"}, P.grid), P)
            maxes.append(max(dg.energy_residual(tr, k) for k in range(len(tr) - 1)))
        assert maxes[0] / maxes[1] == pytest.approx(2.0, rel=0.05)
        assert maxes[1] / maxes[2] == pytest.approx(2.0, rel=0.05)

    @pytest.mark.parametrize("p,mu", [(1.6, 0.0), (1.8, 0.1), (2.0, 0.0)])
    def test_signed_nonpositive_without_convection(self, p, mu):
        P = SimParams(p=p, mu=mu, nu=0.01, delta=0.0, n_cells=63, dt=1e-3, t_end=0.05)
        tr = run(make_initial({"kind": "indicator"}, P.grid), P)
        for a, b in zip(tr.states, tr.states[1:]):
            assert dg.signed_energy_residual(a, b, P, b.time - a.time) <= 0.0

    def test_index_checked(self):
        P = heat_params(n_cells=15, t_end=0.002)
        tr = run(make_initial({"kind": "sine"}, P.grid), P)
        with pytest.raises(IndexError):
            dg.energy_residual(tr, len(tr) - 1)


class TestGamma:
    def test_heat_1d(self):
        vals = [dg.gamma_estimate(Grid(1, n), 2.0).value for n in (63, 127)]
        errs = [abs(v - math.pi**2) for v in vals]
        assert errs[0] < 5 * (1 / 64) ** 2 * math.pi**2
        assert errs[1] < 0.35 * errs[0]

    def test_heat_2d(self):
        val = dg.gamma_estimate(Grid(2, 31), 2.0, seeds=(0,)).value
        assert val == pytest.approx(2 * math.pi**2, abs=10 * (1 / 32) ** 2 * 2 * math.pi**2)

    def test_upper_estimate_is_attained(self):
        g = Grid(1, 31)
        res = dg.gamma_estimate(g, 1.7, seeds=(0, 1))
        assert dg.rayleigh_quotient(res.minimizer, g, 1.7) == pytest.approx(res.value, rel=1e-10)
        assert res.value == min(res.per_seed)

    def test_refinement_shrinks(self):
        vals = [dg.gamma_estimate(Grid(1, n), 1.7, seeds=(0,)).value for n in (31, 63, 127)]
        assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0])

    def test_rejects_p(self):
        with pytest.raises(ValueError):
            dg.gamma_estimate(Grid(1, 15), 1.4)


class TestExtinctionFormulas:
    def test_delta_zero_identity(self):
        for p, l2, gam in [(1.6, 1.0, 1.0), (1.7, 0.3, 6.65), (1.9, 2.0, 0.5)]:
            bound, _ = dg.t_star_bound((5.0, l2), p, 0.0, gam)
            p_conj = p / (p - 1)
            assert bound == p_conj * l2 ** (2 - p) / ((2 - p) * gam)

    def test_arithmetic_example(self):
        bound, _ = dg.t_star_bound((1.0, 1.0), 1.6, 0.0, 1.0)
        assert bound == pytest.approx(8 / 3 / 0.4, rel=1e-14)
        assert round(bound, 4) == 6.6667

    def test_undefined_when_hypothesis_fails(self):
        bound, reason = dg.t_star_bound((2.0, 1.0), 1.7, 1.0, 1.0)
        assert bound is None and "hypothesis" in reason
        assert dg.t_star_bound((1.0, 1.0), 2.0, 0.0, 1.0)[0] is None

    def test_hypothesis_lhs(self):
        assert dg.hypothesis_lhs(2.0, 0.5, 1.5 + 0.25, -0.3) == pytest.approx(0.3 * 2 ** (2 / 0.75) * 0.5**0.25)

    @given(st.floats(1.55, 1.99), st.floats(0.1, 2.0), st.floats(0.1, 2.0), st.floats(0.0, 1.0),
           st.floats(1.0, 50.0), st.floats(1.01, 2.0))
    def test_monotone(self, p, linf, l2, delta, gam, factor):
        base, _ = dg.t_star_bound((linf, l2), p, delta, gam)
        assume(base is not None)
        larger_gamma, _ = dg.t_star_bound((linf, l2), p, delta, gam * factor)
        assert larger_gamma < base
        more_delta, _ = dg.t_star_bound((linf, l2), p, delta * factor + 1e-3, gam)
        assert more_delta is None or more_delta > base

    def test_zero_datum_time_zero(self):
        P = SimParams(n_cells=15)
        tr = run(P.grid.zeros(), P)
        assert dg.extinction_time(tr, 0.0) == 0.0

    def test_heat_threshold_crossing(self):
        # ||u(t)||/||u0|| = exp(-pi^2 t) reaches 1e-10 at 10 ln(10)/pi^2
        P = heat_params(n_cells=63, dt=1e-3, t_end=3.0)
        tr = run(make_initial({"kind": "sine"}, P.grid), P, SchemeConfig(snapshot_stride=10**6))
        assert tr.extinction_time == pytest.approx(10 * math.log(10) / math.pi**2, abs=0.02)

    def test_report_fields(self):
        P = SimParams(p=1.7, mu=0, nu=0, delta=0.1, n_cells=31, dt=2e-3, t_end=1.5)
        tr = run(make_initial({"kind": "sine"}, P.grid), P)
        rep = dg.extinction_report(tr, 6.0)
        assert rep.t_star_bound is not None and rep.measured_extinction <= rep.t_star_bound
        assert rep.monotone_from == 0.0


class TestEnvelope:
    def test_zero_trajectory(self):
        P = SimParams(n_cells=15)
        tr = run(P.grid.zeros(), P, SchemeConfig(stop_at_extinction=False))
        assert dg.ode_envelope_check(tr, 1.7, 0.0, 5.0).max_violation == 0.0

    def test_heat_analytic_substitution(self):
        # y = exp(-pi^2 t)/sqrt(2) satisfies y' <= -(gamma/2) y with gamma = pi^2
        P = heat_params(n_cells=15, t_end=0.5)
        g = P.grid
        shape = make_initial({"kind": "sine"}, g)
        tr = Trajectory(P)
        for t in np.linspace(0, 0.5, 51):
            tr.append(float(t), shape * math.exp(-math.pi**2 * t))
        chk = dg.ode_envelope_check(tr, 2.0, 0.0, math.pi**2)
        assert chk.max_violation == 0.0

    def test_detects_violation(self):
        P = heat_params(n_cells=15, t_end=0.5)
        shape = make_initial({"kind": "sine"}, P.grid)
        tr = Trajectory(P)
        for t in np.linspace(0, 0.5, 11):
            tr.append(float(t), shape * (1 + t))
        assert dg.ode_envelope_check(tr, 1.7, 0.0, 1.0).relative_violation > 0.1


class TestWeightedSecondDerivatives:
    def test_c1_example(self):
        zeta = dg.default_zeta(1.8)
        assert zeta == pytest.approx(0.54)
        assert dg.c1_constant(1.8, zeta) == pytest.approx(1.7150, abs=5e-5)

    def test_c1_undefined(self):
        with pytest.raises(ValueError, match="undefined"):
            dg.c1_constant(1.8, 1.8 * (1.8 - 1) ** 2)
        with pytest.raises(ValueError):
            dg.c1_constant(1.8, 1.2)

    def test_needs_mu(self):
        with pytest.raises(ValueError):
            dg.lemma24_ratio(Grid(1, 7).zeros(), 0.0, 1.8)

    def test_zero_field(self):
        rep = dg.lemma24_ratio(Grid(2, 9).zeros(), 0.5, 1.8)
        assert rep.lhs == 0.0 and rep.residual == 0.0 and rep.implied_c2 == 0.0

    def test_implied_c2_bounded_under_refinement(self):
        vals = []
        for n in (31, 63, 127):
            g = Grid(2, n)
            pool = [make_initial({"kind": "random", "seed": s, "max_mode": 3}, g) for s in range(3)]
            vals.append(max(dg.lemma24_ratio(v, 0.5, 1.8).implied_c2 for v in pool))
        assert all(np.isfinite(vals)) and max(vals) <= 2 * max(vals[0], 1e-12) + 1.0


class TestGronwall:
    def test_linear_case(self):
        # theta = 0: Phi' = a Phi + b, Phi(0) = C
        t = np.linspace(0, 1, 2001)
        a, b, C = 0.7, 0.3, 2.0
        env = dg.gronwall_envelope(t, C, np.full_like(t, a), np.full_like(t, b), 0.0)
        exact = C * np.exp(a * t) + b * (np.exp(a * t) - 1) / a
        np.testing.assert_allclose(env, exact, rtol=1e-6)

    def test_theta_range(self):
        with pytest.raises(ValueError):
            dg.gronwall_envelope(np.linspace(0, 1, 3), 1.0, np.zeros(3), np.zeros(3), 1.0)
