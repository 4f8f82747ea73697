import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ricci_lab.flow import (
    DilationSpec,
    FlowConfig,
    NotApplicable,
    blowup_rate_check,
    cylinder_soliton,
    cylinder_vanishing_time,
    dilate,
    read_trace,
    replay_coupled,
    rmin_comparison_check,
    run_flow,
    step_torus_flow,
    step_warped_flow,
    torus_cfl_bound,
    warped_cfl_bound,
    write_trace,
)
from ricci_lab.geom import ConformalTorusMetric, PeriodicGrid2, WarpedMetric, curvature
from ricci_lab.hodge import OneForm, StepRejected


def torus(n=32, amp=0.3):
    return ConformalTorusMetric.from_function(PeriodicGrid2(n, n), lambda x, y: amp * np.sin(x) * np.cos(y))


def neckpinch(nx=64):
    return WarpedMetric.from_functions(3, nx, 2 * np.pi, lambda x: 1 + 0 * x, lambda x: 1 - 0.5 * np.cos(x))


@pytest.fixture(scope="module")
def cylinder_trace():
    m = cylinder_soliton(3, 1.0, 0.0, nx=32)
    return run_flow(m, FlowConfig(dt_init=2e-3, t_end=10.0, snapshot_stride=10, singularity_floor=1e-2))


@pytest.fixture(scope="module")
def neck_trace():
    m = neckpinch()
    return run_flow(m, FlowConfig(dt_init=2e-3, t_end=10.0, snapshot_stride=5, singularity_floor=1e-2))


class TestConfig:
    @pytest.mark.parametrize(
        "kw, msg",
        [({"dt_init": 0}, "dt_init"), ({"t_end": -1}, "t_end"), ({"cfl_safety": 1.5}, "cfl_safety"),
         ({"snapshot_stride": 0}, "snapshot_stride")],
    )
    def test_invalid(self, kw, msg):
        with pytest.raises(ValueError, match=msg):
            FlowConfig(**kw)

    def test_dilation_spec(self):
        with pytest.raises(ValueError):
            DilationSpec(0.0, 0.1)


class TestTorusFlow:
    def test_large_step_rejected(self):
        # h = 2 pi / 128 with u = 0.1 sin x gives a bound near 4.9e-4
        m = ConformalTorusMetric.from_function(PeriodicGrid2(128, 128), lambda x, y: 0.1 * np.sin(x) + 0 * y)
        assert torus_cfl_bound(m) < 1e-3
        with pytest.raises(StepRejected):
            step_torus_flow(m, 1e-3)

    def test_flat_is_stationary(self):
        m = ConformalTorusMetric.flat(PeriodicGrid2(16, 16))
        tr = run_flow(m, FlowConfig(dt_init=1e-2, t_end=0.1))
        assert np.all(tr.snapshots[-1].u == 0)
        assert tr.termination == "t_end"
        assert tr.times[-1] == pytest.approx(0.1)

    @settings(max_examples=10, deadline=None)
    @given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
    def test_area_conserved(self, a, b):
        m = ConformalTorusMetric.from_function(PeriodicGrid2(24, 24), lambda x, y: a * np.sin(x) + b * np.cos(x + y))
        A0 = m.area()
        dt = 0.9 * torus_cfl_bound(m)
        for _ in range(20):
            m = step_torus_flow(m, dt)
        assert m.area() == pytest.approx(A0, rel=1e-6)

    def test_relaxes_to_flat(self):
        tr = run_flow(torus(32), FlowConfig(dt_init=1e-2, t_end=1.0, snapshot_stride=50))
        sup = tr.column("sup_rm")
        assert sup[-1] < 0.3 * sup[0]
        assert np.all(np.abs(tr.column("int_K")) < 1e-10)


class TestWarpedFlow:
    def test_soliton_short(self):
        m = cylinder_soliton(4, 1.5, 0.0, nx=32)
        dt = 1e-3
        for _ in range(100):
            m = step_warped_flow(m, dt)
        exact = cylinder_soliton(4, 1.5, 0.1, nx=32)
        np.testing.assert_allclose(m.psi, exact.psi, rtol=1e-12)

    def test_variants(self):
        assert cylinder_vanishing_time(3, 1.0) == pytest.approx(0.5)
        assert cylinder_vanishing_time(3, 1.0, "alt") == pytest.approx(0.25)
        with pytest.raises(ValueError, match="vanishing"):
            cylinder_soliton(3, 1.0, 0.5)
        with pytest.raises(ValueError, match="variant"):
            cylinder_soliton(3, 1.0, 0.1, variant="other")

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.25, 4.0), st.floats(0.05, 0.45))
    def test_scaling_covariance(self, lam, amp):
        # lam * g flowed for lam * dt equals lam times g flowed for dt
        m = WarpedMetric.from_functions(3, 32, 2 * np.pi, lambda x: 1 + 0.2 * np.sin(x), lambda x: 1 - amp * np.cos(x))
        dt = 0.5 * warped_cfl_bound(m)
        a = step_warped_flow(m.scaled(lam), lam * dt)
        b = step_warped_flow(m, dt).scaled(lam)
        np.testing.assert_allclose(a.psi, b.psi, rtol=1e-11)
        np.testing.assert_allclose(a.phi, b.phi, rtol=1e-11)

    def test_cylinder_vanishing(self, cylinder_trace):
        tr = cylinder_trace
        assert tr.singular
        assert tr.T_num == pytest.approx(0.5, abs=2e-3)
        br = blowup_rate_check(tr)
        # sup|Rm| = 1/psi^2 = 1/(2(T - t)) on the cylinder
        assert br["constant"] == pytest.approx(0.5, rel=1e-2)

    def test_neckpinch(self, neck_trace):
        tr = neck_trace
        assert tr.singular
        i = int(np.argmin(tr.snapshots[-1].psi))
        assert i == 0
        rc = rmin_comparison_check(tr)
        assert rc["ok"], rc["violations"][:3]
        assert np.all(np.diff(tr.column("R_min")) > -1e-9)


class TestDilation:
    def test_scaling(self, cylinder_trace):
        tr = cylinder_trace
        tj = float(tr.times[len(tr.times) // 2])
        lam = 1.0 / (tr.T_num - tj)
        d = dilate(tr, DilationSpec(lam, tj))
        assert d.meta["dilated"]
        j = tr.index_of_time(tj)
        assert d.times[j] == 0.0
        assert d.T_num == pytest.approx(1.0)
        assert curvature(d.snapshots[j]).sup_rm == pytest.approx(curvature(tr.snapshots[j]).sup_rm / lam)
        assert blowup_rate_check(d)["constant"] == pytest.approx(blowup_rate_check(tr)["constant"], rel=1e-12)

    def test_window(self, cylinder_trace):
        tr = cylinder_trace
        tj = float(tr.times[3])
        with pytest.raises(ValueError, match="achievable window"):
            dilate(tr, DilationSpec(2.0, tj), window=(-1e3, 0.0))
        d = dilate(tr, DilationSpec(2.0, tj), window=(0.0, 0.0))
        assert len(d.snapshots) == 1
        with pytest.raises(ValueError, match="not a snapshot time"):
            dilate(tr, DilationSpec(2.0, tj + 1e-4))

    def test_torus_not_singular(self):
        tr = run_flow(torus(16), FlowConfig(dt_init=1e-2, t_end=0.05))
        with pytest.raises(NotApplicable):
            blowup_rate_check(tr)


class TestReplayAndIO:
    def test_replay_bit_identical(self):
        m = torus(24)
        a0 = OneForm.from_function(m.grid, lambda x, y: 1 + 0.3 * np.sin(x), lambda x, y: 0 * x)
        tr = run_flow(m, FlowConfig(dt_init=1e-2, t_end=0.05, snapshot_stride=7), form=a0)
        out = replay_coupled(tr, a0)
        for f, g in zip(out["forms"], tr.forms):
            assert np.array_equal(f.p, g.p) and np.array_equal(f.q, g.q)

    def test_round_trip(self, tmp_path, neck_trace):
        write_trace(neck_trace, tmp_path)
        back = read_trace(tmp_path)
        assert back.termination == neck_trace.termination
        assert back.T_num == neck_trace.T_num
        np.testing.assert_array_equal(back.times, neck_trace.times)
        np.testing.assert_array_equal(back.snapshots[-1].psi, neck_trace.snapshots[-1].psi)
        first = (tmp_path / "trace.csv").read_text()
        write_trace(back, tmp_path)
        assert (tmp_path / "trace.csv").read_text() == first
