import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ricci_lab.flow import FlowConfig, NotApplicable, cylinder_soliton, run_flow
from ricci_lab.geom import ConformalTorusMetric, PeriodicGrid2, WarpedMetric
from ricci_lab.hodge import OneForm, RadialForm
from ricci_lab.loops import WindingClass
from ricci_lab.monitor import (
    MonotoneReport,
    SlackBudget,
    corollary_check,
    default_ladder,
    loop_series,
    main_theorem_check,
    make_bundle,
    monotone_report,
    track_monotones,
    verdict,
    write_verdict,
)


class TestMonotoneReport:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=2, max_size=30))
    def test_sorted_series_pass(self, xs):
        v = np.sort(xs)[::-1]
        t = np.arange(v.size, dtype=float)
        assert monotone_report("q", t, v, "non-increasing").passed
        assert monotone_report("q", t, v[::-1], "non-decreasing").passed

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=3, max_size=30), st.floats(1e-3, 1.0))
    def test_bump_detected(self, xs, bump):
        v = np.sort(xs)[::-1].copy()
        k = v.size // 2
        v[k] = v[k - 1] + bump
        r = monotone_report("q", np.arange(v.size, dtype=float), v, "non-increasing", abs_slack=0.5 * bump)
        assert not r.passed
        assert r.worst_violation == pytest.approx(bump, rel=1e-9)

    def test_rate_allowance(self):
        t = np.linspace(0, 1, 11)
        v = 1 + 1e-4 * t
        assert not monotone_report("q", t, v, "non-increasing").passed
        r = monotone_report("q", t, v, "non-increasing", rate=1e-3)
        assert r.passed
        assert r.details["worst_pair"] is not None

    def test_single_sample(self):
        assert monotone_report("q", [0.0], [1.0], "non-increasing").worst_violation == 0.0

    def test_slack_budget(self):
        s = SlackBudget(a=2.0, b=0.0)
        assert s.extra(0.1, 1.0) == pytest.approx(0.02)
        assert SlackBudget().extra(0.1, 0.1) == 0.0


class TestBundle:
    def test_trivial_winding(self):
        m = ConformalTorusMetric.flat(PeriodicGrid2(16, 16))
        with pytest.raises(ValueError, match="zero winding"):
            make_bundle(m, WindingClass(0, 0), OneForm.constant(m.grid, 1, 0))

    def test_orientation(self):
        m = ConformalTorusMetric.flat(PeriodicGrid2(16, 16))
        with pytest.raises(ValueError, match="orient"):
            make_bundle(m, WindingClass(1, 0), OneForm.constant(m.grid, -1, 0))

    def test_flat_constant(self):
        m = ConformalTorusMetric.flat(PeriodicGrid2(16, 16))
        b = make_bundle(m, WindingClass(1, 0), OneForm.constant(m.grid, 1, 0))
        # <Phi, alpha> = 2 pi and N_0 = 1
        assert b.c == pytest.approx(2 * np.pi, rel=1e-9)


@pytest.fixture(scope="module")
def bumpy_run():
    m = ConformalTorusMetric.from_function(PeriodicGrid2(64, 64), lambda x, y: 0.3 * np.sin(x) * np.cos(y))
    a0 = OneForm.from_function(m.grid, lambda x, y: 1 + 0.3 * np.sin(x), lambda x, y: 0 * x)
    tr = run_flow(m, FlowConfig(dt_init=1e-2, t_end=0.3, snapshot_stride=60), form=a0)
    bundle = make_bundle(m, WindingClass(1, 0), a0)
    loops = loop_series(tr, bundle.alpha, multistart=2, N=64)
    return tr, bundle, loops


class TestTracking:
    def test_main_bound(self, bumpy_run):
        tr, bundle, loops = bumpy_run
        rep = main_theorem_check(tr, bundle, loops)
        assert rep.passed
        assert rep.details["min_ratio"] >= 1 - 1e-2
        np.testing.assert_array_equal(bundle.L_series, [r.value for r in loops])

    def test_all_monotones(self, bumpy_run):
        tr, bundle, loops = bumpy_run
        # node-sampled comass is biased low by O(h^2); 64^2 needs a looser duality slack than 128^2
        reps = track_monotones(tr, bundle, SlackBudget(duality_rel=1e-3), loops=loops, k_max=4)
        assert set(reps) == {"sup_norm", "comass", "m_g", "decay", "periods", "duality", "potential"}
        failed = {k: (r.worst_violation, r.slack) for k, r in reps.items() if not r.passed}
        assert not failed
        # lengths grow as the metric relaxes, so the stable norm grows too
        assert reps["m_g"].values[-1] >= reps["m_g"].values[0]

    def test_verdict_json(self, bumpy_run, tmp_path):
        tr, bundle, loops = bumpy_run
        reps = {"main_lower_bound": main_theorem_check(tr, bundle, loops)}
        v = write_verdict(tmp_path / "v.json", reps, {"T": np.float64(1.0), "bad": np.inf})
        back = json.loads((tmp_path / "v.json").read_text())
        assert back == json.loads(json.dumps(v))
        assert back["pass"] is True
        assert back["extra"]["bad"] == "inf"

    def test_verdict_fails_on_any(self):
        ok = MonotoneReport("a", np.zeros(1), np.zeros(1), 0.0, 0.0)
        bad = MonotoneReport("b", np.zeros(1), np.zeros(1), 1.0, 0.0)
        assert verdict([ok])["pass"]
        assert not verdict([ok, bad])["pass"]

    def test_not_singular(self, bumpy_run):
        tr, bundle, _ = bumpy_run
        with pytest.raises(NotApplicable):
            default_ladder(tr)
        with pytest.raises(NotApplicable):
            corollary_check(tr, bundle)


def test_cylinder_ladder_and_corollary():
    m = cylinder_soliton(3, 1.0, 0.0, nx=32)
    tr = run_flow(m, FlowConfig(dt_init=2e-3, t_end=10.0, snapshot_stride=5, singularity_floor=1e-2),
                  form=RadialForm.from_function(m, lambda x: 1 + 0 * x))
    ladder = default_ladder(tr, 4)
    rem = np.array([tr.T_num - s.t_j for s in ladder])
    assert np.all(np.diff(rem) < 0)
    np.testing.assert_allclose(rem[1:] / rem[:-1], 0.5, atol=0.05)
    b = make_bundle(m, WindingClass.warped(1), RadialForm.from_function(m, lambda x: 1 + 0 * x))
    cc = corollary_check(tr, b, ladder, multistart=1)
    assert cc["ok"] and cc["monotone_growth"]
    np.testing.assert_allclose(cc["scaling_exact"], 1.0, rtol=1e-9)
    assert cc["scaling_within_tol"]
