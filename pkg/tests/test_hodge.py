import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ricci_lab.flow import FlowConfig, run_flow
from ricci_lab.geom import ConformalTorusMetric, PeriodicGrid2, WarpedMetric
from ricci_lab.hodge import (
    CohomologyClass,
    OneForm,
    RadialForm,
    StepRejected,
    closedness_ok,
    comass_lower_bound,
    comass_norm,
    dec_operators,
    form_cfl_bound,
    norm_axiom_check,
    period,
    period_spread,
    potential_track,
    step_form_heat,
    sup_norm,
)

seeds = st.integers(0, 2**31 - 1)


def bumpy(n=32):
    g = PeriodicGrid2(n, n)
    return ConformalTorusMetric.from_function(g, lambda x, y: 0.3 * np.sin(x) * np.cos(y))


def neck(nx=64):
    return WarpedMetric.from_functions(3, nx, 2 * np.pi, lambda x: 1 + 0.1 * np.sin(x), lambda x: 1 - 0.5 * np.cos(x))


class TestOperators:
    @settings(max_examples=20, deadline=None)
    @given(seeds)
    def test_torus_adjoint(self, seed):
        rng = np.random.default_rng(seed)
        m = bumpy()
        ops = dec_operators(m)
        F = rng.normal(size=m.grid.shape)
        a = OneForm(rng.normal(size=m.grid.shape), rng.normal(size=m.grid.shape))
        lhs, rhs = ops.ip1(ops.d0(F), a), ops.ip0(F, ops.codiff1(a))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))

    @settings(max_examples=20, deadline=None)
    @given(seeds)
    def test_warped_adjoint(self, seed):
        rng = np.random.default_rng(seed)
        m = neck()
        ops = dec_operators(m)
        F = rng.normal(size=m.nx)
        a = RadialForm(rng.normal(size=m.nx))
        lhs, rhs = ops.ip1(ops.d0(F), a), ops.ip0(F, ops.codiff1(a))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))

    def test_laplacian_kills_harmonic(self):
        m = ConformalTorusMetric.flat(PeriodicGrid2(16, 16))
        ops = dec_operators(m)
        r = ops.hodge_laplacian(OneForm.constant(m.grid, 0.7, -1.2))
        assert np.abs(r.p).max() == 0 and np.abs(r.q).max() == 0

    def test_eigenform(self):
        # flat torus: Delta_d (sin x dx) = -(sin h / h)^2 sin x dx for centered differences
        g = PeriodicGrid2(64, 64)
        ops = dec_operators(ConformalTorusMetric.flat(g))
        a = OneForm.from_function(g, lambda x, y: np.sin(x) + 0 * y, lambda x, y: 0 * x)
        lam = (np.sin(g.hx) / g.hx) ** 2
        r = ops.hodge_laplacian(a)
        np.testing.assert_allclose(r.p, -lam * a.p, atol=1e-12)

    def test_unsupported(self):
        with pytest.raises(TypeError):
            dec_operators("metric")


class TestHeat:
    def test_step_rejected(self):
        m = bumpy()
        a = OneForm.constant(m.grid, 1.0, 0.0)
        with pytest.raises(StepRejected) as exc:
            step_form_heat(a, m, 2 * form_cfl_bound(m))
        assert exc.value.admissible == pytest.approx(form_cfl_bound(m))

    @settings(max_examples=10, deadline=None)
    @given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
    def test_periods_preserved_and_sup_decreases(self, b, c):
        m = bumpy()
        g = m.grid
        a = OneForm.from_function(g, lambda x, y: 1 + b * np.sin(x), lambda x, y: c * np.cos(y))
        P0 = (period(a, (1, 0), g), period(a, (0, 1), g))
        s0 = sup_norm(a, m)
        dt = 0.5 * form_cfl_bound(m)
        for _ in range(40):
            a = step_form_heat(a, m, dt)
        assert period(a, (1, 0), g) == pytest.approx(P0[0], abs=1e-12)
        assert period(a, (0, 1), g) == pytest.approx(P0[1], abs=1e-12)
        assert sup_norm(a, m) <= s0 * (1 + 1e-12)
        assert period_spread(a, g) < 1e-12

    def test_warped_period_preserved(self):
        m = neck()
        a = RadialForm.from_function(m, lambda x: 1 + 0.4 * np.cos(x))
        P = period(a, 1, m)
        dt = 0.9 * form_cfl_bound(m)
        for _ in range(50):
            a = step_form_heat(a, m, dt)
        assert period(a, 1, m) == pytest.approx(P, rel=1e-12)


class TestPeriods:
    def test_closed_form_periods(self):
        g = PeriodicGrid2(32, 32)
        a = OneForm.from_function(g, lambda x, y: 2 + np.cos(x), lambda x, y: -1 + 0 * x)
        assert period(a, (1, 0), g) == pytest.approx(4 * np.pi)
        assert period(a, (2, 3), g) == pytest.approx(8 * np.pi - 6 * np.pi)
        assert closedness_ok(a, g)

    def test_non_closed_warns(self):
        g = PeriodicGrid2(32, 32)
        a = OneForm.from_function(g, lambda x, y: np.sin(y) + 0 * x, lambda x, y: 0 * x)
        assert not closedness_ok(a, g)
        with pytest.warns(UserWarning, match="not closed"):
            period(a, (1, 0), g)
        with pytest.raises(ValueError, match="not closed"):
            CohomologyClass(a, grid=g)

    def test_class_arithmetic(self):
        m = bumpy()
        A = CohomologyClass.from_periods(m, (1.0, 2.0))
        B = CohomologyClass.from_periods(m, (0.5, -1.0))
        assert (A + B).periods == pytest.approx((1.5, 1.0))
        assert (3 * A).pairing((1, 1)) == pytest.approx(9.0)


class TestComass:
    def test_flat_constant(self):
        m = ConformalTorusMetric.flat(PeriodicGrid2(16, 16))
        cls = CohomologyClass.from_periods(m, (2 * np.pi * 0.6, 2 * np.pi * 0.8))
        r = comass_norm(cls, m)
        assert r.value == pytest.approx(1.0, abs=1e-9)
        # grid lines alone only certify max(0.6, 0.8); the straight (3, 4) loop closes the gap
        assert r.lower == pytest.approx(0.8)
        r = comass_norm(cls, m, loops=[((3, 4), 2 * np.pi * 5)])
        assert r.gap <= 1e-9

    def test_flat_nonharmonic_representative(self):
        g = PeriodicGrid2(32, 32)
        m = ConformalTorusMetric.flat(g)
        cls = CohomologyClass(OneForm.from_function(g, lambda x, y: 1 + 0.3 * np.sin(x), lambda x, y: 0 * x), grid=g)
        r = comass_norm(cls, m)
        assert r.value == pytest.approx(1.0, abs=1e-3)
        assert r.lower == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=8, deadline=None)
    @given(st.floats(-0.4, 0.4), st.floats(-0.3, 0.3))
    def test_strip_oracle(self, a, b):
        # u = u(y): the comass of [dx] is exp(-min u), attained by dx itself
        g = PeriodicGrid2(24, 24)
        m = ConformalTorusMetric.from_function(g, lambda x, y: a * np.cos(y) + b * np.sin(2 * y) + 0 * x)
        cls = CohomologyClass.from_periods(m, (2 * np.pi, 0.0))
        r = comass_norm(cls, m)
        exact = np.exp(-m.u.min())
        assert r.lower == pytest.approx(exact, rel=1e-12)
        assert r.value == pytest.approx(exact, rel=2e-3)
        assert r.value >= r.lower

    def test_warped_oracle(self):
        m = neck()
        cls = CohomologyClass(RadialForm.from_function(m, lambda x: 1 + 0.3 * np.sin(x)), grid=m)
        r = comass_norm(cls, m)
        exact = cls.periods[0] / m.circle_length()
        assert r.lower == pytest.approx(exact, rel=1e-12)
        assert r.value == pytest.approx(exact, rel=2e-3)

    def test_lower_bound_uses_loops(self):
        m = bumpy()
        cls = CohomologyClass.from_periods(m, (2 * np.pi, 0.0))
        base = comass_lower_bound(cls, m)
        assert comass_lower_bound(cls, m, loops=[((1, 0), 1.0)]) == pytest.approx(2 * np.pi)
        assert comass_lower_bound(cls, m, loops=[((1, 0), 1e6)]) == base

    def test_norm_axioms(self):
        m = bumpy(24)
        classes = [CohomologyClass.from_periods(m, (2 * np.pi, 0.0)),
                   CohomologyClass.from_periods(m, (0.0, np.pi))]
        chk = norm_axiom_check(m, classes, scalars=(-2.0, 0.5))
        assert chk["homogeneity_rel_error"] < 5e-3
        assert chk["triangle_excess"] <= chk["max_gap"] + 1e-6
        assert chk["min_lower_bound"] > 0

    def test_log(self):
        m = bumpy(16)
        r = comass_norm(CohomologyClass.from_periods(m, (1.0, 0.0)), m, ladder=(2, 8))
        lines = r.log_csv().strip().splitlines()
        assert len(lines) >= 3
        assert lines[0].count(",") == 4


def test_potential_identity_along_flow():
    m = bumpy(32)
    a0 = OneForm.from_function(m.grid, lambda x, y: 1 + 0.3 * np.sin(x), lambda x, y: 0 * x)
    tr = run_flow(m, FlowConfig(dt_init=1e-2, t_end=0.05, snapshot_stride=20), form=a0)
    out = potential_track(a0, tr)
    assert out["residuals"].max() <= 5e-3 * 0.05
    assert np.all([abs(P.F.mean()) < 1e-12 for P in out["potentials"]])
