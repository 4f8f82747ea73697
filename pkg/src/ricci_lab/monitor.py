"""Theorem-level checks over flow traces and machine-readable verdicts.

Every quantity is evaluated on stored snapshots only.  A
:class:`MonotoneReport` compares each sample against all earlier ones, so a
slow drift is caught as well as a single jump.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .flow import DilationSpec, FlowTrace, NotApplicable, dilate, replay_coupled
from .geom import ConformalTorusMetric, curvature
from .hodge import (
    CohomologyClass,
    ComassResult,
    OneForm,
    comass_norm,
    dec_operators,
    period,
    sup_norm,
)
from .loops import MinLengthResult, WindingClass, build_frame, min_length, stable_norm

__all__ = [
    "MonotoneReport",
    "TheoremBundle",
    "SlackBudget",
    "make_bundle",
    "monotone_report",
    "loop_series",
    "main_theorem_check",
    "corollary_check",
    "default_ladder",
    "track_monotones",
    "verdict",
    "write_verdict",
]


@dataclass
class MonotoneReport:
    """Verdict for one monitored series.

    ``worst_violation`` is the largest signed excess of the series over its
    allowed drift (negative when comfortably inside); the verdict passes iff
    it is at most ``slack``.
    """

    name: str
    times: np.ndarray
    values: np.ndarray
    worst_violation: float
    slack: float
    direction: str = "non-increasing"
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.worst_violation <= self.slack)

    def to_dict(self):
        return {
            "name": self.name,
            "direction": self.direction,
            "times": [float(t) for t in self.times],
            "values": [float(v) for v in self.values],
            "worst_violation": float(self.worst_violation),
            "slack": float(self.slack),
            "verdict": "pass" if self.passed else "fail",
            "details": _jsonable(self.details),
        }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, (np.integer, np.bool_)):
        return x.item()
    return x


@dataclass(frozen=True)
class SlackBudget:
    """Tolerances for the monitored series.

    ``*_rate`` entries are per unit time and relative to the series scale.
    The discretization allowance ``a h^2 + b dt^4`` (per unit time) is added
    to every rate; ``a`` and ``b`` default to zero.
    """

    sup_rate: float = 1e-3
    comass_abs: float = 1e-3
    mg_rel: float = 1e-2
    decay_rate: float = 1e-3
    period_rel: float = 1e-8
    potential_rate: float = 5e-3
    main_rel: float = 1e-2
    duality_rel: float = 1e-6
    a: float = 0.0
    b: float = 0.0

    def extra(self, h, dt):
        return self.a * h * h + self.b * dt**4


def monotone_report(name, times, values, direction, rate=0.0, abs_slack=0.0, scale=None, details=None):
    """Pairwise monotonicity check.

    For every ``j < k`` the excess is ``s (v_k - v_j) - rate scale (t_k - t_j)``
    with ``s = +1`` for non-increasing and ``-1`` for non-decreasing series.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    sgn = 1.0 if direction == "non-increasing" else -1.0
    if scale is None:
        scale = float(np.max(np.abs(v))) if v.size else 1.0
    worst = -np.inf
    where = None
    for k in range(1, v.size):
        ex = sgn * (v[k] - v[:k]) - rate * scale * (t[k] - t[:k])
        j = int(np.argmax(ex))
        if ex[j] > worst:
            worst, where = float(ex[j]), (float(t[j]), float(t[k]))
    if v.size < 2:
        worst = 0.0
    d = {"rate": rate, "scale": scale, "worst_pair": where}
    d.update(details or {})
    return MonotoneReport(name, t, v, worst, abs_slack, direction, d)


# ---------------------------------------------------------------------------
# theorem bundle


@dataclass
class TheoremBundle:
    """Classes ``alpha`` and ``Phi`` with the constant ``c = <Phi, alpha> / N_0``."""

    alpha: WindingClass
    Phi: CohomologyClass
    phi0: object
    pairing: float
    N0: float
    comass0: ComassResult
    L_series: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.pairing > 0:
            raise ValueError("bundle needs <Phi, alpha> > 0 (nonzero winding of infinite order)")

    @property
    def c(self):
        return self.pairing / self.N0


def make_bundle(m0, alpha: WindingClass, phi0, **comass_kw) -> TheoremBundle:
    """Bundle from the initial metric and a closed representative ``phi0``.

    ``N_0`` is the certified upper value of the initial comass, which keeps
    ``c`` on the safe side.
    """
    if alpha.trivial:
        raise ValueError("zero winding: the lower bound needs a class of infinite order")
    grid = m0.grid if isinstance(m0, ConformalTorusMetric) else m0
    Phi = CohomologyClass(phi0, grid=grid)
    pairing = Phi.pairing(alpha.vector())
    if pairing < 0:
        raise ValueError("orient Phi so that <Phi, alpha> > 0")
    res = comass_norm(Phi, m0, **comass_kw)
    return TheoremBundle(alpha, Phi, phi0, pairing, res.value, res)


# ---------------------------------------------------------------------------
# per-snapshot loop data


def loop_series(trace: FlowTrace, alpha: WindingClass, multistart=4, N=128, oracle_first=True, tol=1e-8):
    """Minimal loops on every snapshot, warm-started from the previous one."""
    out: List[MinLengthResult] = []
    prev = None
    for i, m in enumerate(trace.snapshots):
        extra = [prev] if prev is not None else []
        r = min_length(alpha, m, multistart=multistart if prev is None else 1,
                       N=N, oracle=oracle_first and i == 0, extra_starts=extra, tol=tol)
        out.append(r)
        prev = r.loop
    return out


def main_theorem_check(trace: FlowTrace, bundle: TheoremBundle, loops=None, slack=1e-2) -> MonotoneReport:
    """``L_alpha(t) >= c`` at every snapshot; reports ``min_t L_alpha(t) / c``."""
    if bundle.alpha.trivial or bundle.pairing <= 0:
        raise ValueError("main theorem needs nonzero winding")
    loops = loops or loop_series(trace, bundle.alpha)
    L = np.array([r.value for r in loops])
    bundle.L_series = L
    ratio = L / bundle.c
    worst = float(1.0 - ratio.min())
    return MonotoneReport(
        "main_lower_bound", trace.times, ratio, worst, slack, "lower-bound",
        {"c": bundle.c, "N0": bundle.N0, "pairing": bundle.pairing, "min_ratio": float(ratio.min()),
         "L_alpha": L},
    )


def default_ladder(trace: FlowTrace, levels=5):
    """Snapshots with ``T - t_j`` nearest ``(T - t_0) 2^{-j}``, ``lambda_j = 1/(T - t_j)``."""
    if not trace.singular:
        raise NotApplicable("dilation ladder needs a singular trace")
    T = trace.T_num
    rem = T - trace.times
    picks = []
    for j in range(1, levels + 1):
        i = int(np.argmin(np.abs(rem - rem[0] * 2.0**-j)))
        if i not in picks and rem[i] > 0:
            picks.append(i)
    return [DilationSpec(1.0 / rem[i], float(trace.times[i])) for i in sorted(picks)]


def corollary_check(trace: FlowTrace, bundle: TheoremBundle, ladder: Optional[Sequence[DilationSpec]] = None,
                    multistart=2, scaling_tol=0.02):
    """Dilated lengths grow with ``lambda_j`` while curvature stays normalized.

    Under ``g_j = lambda_j g(t_j + . / lambda_j)`` lengths scale by
    ``sqrt(lambda_j)``; the report lists ``L_alpha(g_j(0))``,
    ``L_alpha(g_j(0)) / (sqrt(lambda_j) L_alpha(g(0)))`` and
    ``sup|Rm|(g_j(0))``.
    """
    if not trace.singular:
        raise NotApplicable("corollary check needs a singular trace")
    ladder = list(ladder) if ladder is not None else default_ladder(trace)
    L0 = min_length(bundle.alpha, trace.snapshots[0], multistart=multistart, oracle=False).value
    lam, Lj, Lt, rm = [], [], [], []
    for spec in ladder:
        d = dilate(trace, spec, window=(0.0, 0.0))
        g = d.snapshots[0]
        Lj.append(min_length(bundle.alpha, g, multistart=multistart, oracle=False).value)
        Lt.append(min_length(bundle.alpha, trace.snapshots[trace.index_of_time(spec.t_j)],
                             multistart=multistart, oracle=False).value)
        rm.append(curvature(g).sup_rm)
        lam.append(spec.lambda_j)
    lam, Lj, Lt, rm = map(np.array, (lam, Lj, Lt, rm))
    growth = bool(np.all(np.diff(Lj) > 0)) if Lj.size > 1 else True
    scaling = Lj / (np.sqrt(lam) * L0)
    exact = Lj / (np.sqrt(lam) * Lt)
    ok = growth and bool(np.all(np.isfinite(rm))) and bool(np.all(rm > 0))
    return {
        "lambdas": lam,
        "t_j": [s.t_j for s in ladder],
        "L_dilated": Lj,
        "scaling_ratio": scaling,
        "scaling_exact": exact,
        "scaling_within_tol": bool(np.all(np.abs(scaling - 1) <= scaling_tol)),
        "sup_rm_dilated": rm,
        "monotone_growth": growth,
        "ok": ok,
    }


# ---------------------------------------------------------------------------
# aggregate tracking


def _h(m):
    if isinstance(m, ConformalTorusMetric):
        return max(m.grid.hx, m.grid.hy)
    return m.h


def track_monotones(
    trace: FlowTrace,
    bundle: TheoremBundle,
    slack: SlackBudget = SlackBudget(),
    loops=None,
    k_max=8,
    forms=None,
    potentials=True,
    comass_kw=None,
) -> Dict[str, MonotoneReport]:
    """One report per monitored quantity along ``trace``.

    Quantities: ``sup_norm`` (non-increasing), ``comass`` (non-increasing
    within solver gap), ``m_g`` (non-decreasing), ``decay`` (``l^2 + C_eff t``
    non-decreasing), ``periods`` (constant), ``duality`` (``m_g N_g`` bounded
    below by the pairing) and ``potential`` (``phi = phi_0 + dF``).
    """
    comass_kw = comass_kw or {}
    times = trace.times
    t_rel = times - times[0]
    h = _h(trace.snapshots[0])
    dt = float(trace.dts.max()) if trace.dts.size else 0.0
    extra = slack.extra(h, dt)
    reports = {}

    # riding form: reuse stored forms, otherwise replay the recorded steps
    pot = None
    if forms is None and trace.forms is not None and not potentials:
        forms = trace.forms
    if forms is None:
        if trace.meta.get("dilated"):
            raise NotApplicable("forms are not available on a dilated trace")
        pot = replay_coupled(trace, bundle.phi0, with_potential=potentials)
        forms = pot["forms"]

    sups = np.array([sup_norm(a, m) for a, m in zip(forms, trace.snapshots)])
    reports["sup_norm"] = monotone_report(
        "sup_norm", times, sups, "non-increasing", rate=slack.sup_rate + extra)

    # comass of the fixed class under g(t), warm-started
    loops = loops or loop_series(trace, bundle.alpha)
    Ns, gaps, F0 = [], [], None
    for m, lr in zip(trace.snapshots, loops):
        r = comass_norm(bundle.Phi, m, F0=F0, loops=[(bundle.alpha.vector(), lr.value)], **comass_kw)
        Ns.append(r.value)
        gaps.append(r.gap)
        F0 = r.minimizer.F
    Ns = np.array(Ns)
    gaps = np.array(gaps)
    reports["comass"] = monotone_report(
        "comass", times, Ns, "non-increasing", rate=extra,
        abs_slack=float(gaps.max()) + slack.comass_abs, details={"gaps": gaps})

    # stable norm estimate
    mg = []
    rates = []
    for m, lr in zip(trace.snapshots, loops):
        sn = stable_norm(bundle.alpha, m, k_max=k_max, base=lr)
        mg.append(sn["estimate"])
        rates.append(build_frame(lr.loop, m, tol=max(1e-6, 10 * lr.residual)).rotation_rate)
    mg = np.array(mg)
    reports["m_g"] = monotone_report(
        "m_g", times, mg, "non-decreasing", rate=extra,
        abs_slack=slack.mg_rel * float(mg[0]))

    # decay bound: l^2 + C_eff t
    ell = np.array([lr.shorten_value for lr in loops])
    n = 2 if trace.family == "torus" else trace.snapshots[0].n
    rates = np.array(rates)
    C_eff = float(np.max((n - 1) * rates**2 * ell**2))
    q = ell**2 + C_eff * t_rel
    reports["decay"] = monotone_report(
        "decay", times, q, "non-decreasing", rate=slack.decay_rate + extra,
        abs_slack=1e-9 * float(q.max()),
        details={"C_eff": C_eff, "rotation_rates": rates, "lengths": ell})

    # periods of the riding form
    if isinstance(forms[0], OneForm):
        g = trace.snapshots[0].grid
        P = np.array([[period(a, (1, 0), g), period(a, (0, 1), g)] for a in forms])
    else:
        P = np.array([[period(a, 1, m)] for a, m in zip(forms, trace.snapshots)])
    drift = np.abs(P - P[0]).max(axis=1)
    scale = max(float(np.abs(P[0]).max()), 1e-300)
    reports["periods"] = MonotoneReport(
        "periods", times, drift, float(drift.max()), slack.period_rel * scale + 1e-12, "constant",
        {"periods": P})

    # duality m_g N_g >= <Phi, alpha>
    prod = mg * Ns
    short = bundle.pairing - prod
    reports["duality"] = MonotoneReport(
        "duality", times, prod, float(short.max()),
        slack.duality_rel * bundle.pairing + float(gaps.max()), "lower-bound",
        {"pairing": bundle.pairing})

    if pot is not None and potentials:
        res = []
        a0 = bundle.phi0
        for m, a, F in zip(pot["metrics"], pot["forms"], pot["potentials"]):
            diff = a - a0 - dec_operators(m).d0(F)
            res.append(sup_norm(diff, m))
        res = np.array(res)
        allowed = slack.potential_rate * t_rel
        reports["potential"] = MonotoneReport(
            "potential", times, res, float(np.max(res - allowed)), 1e-12, "bounded",
            {"rate": slack.potential_rate})
    return reports


def verdict(reports, extra=None) -> dict:
    """Combine reports into a verdict dictionary (``pass`` iff all pass)."""
    items = list(reports.values()) if isinstance(reports, dict) else list(reports)
    out = {
        "pass": all(r.passed for r in items),
        "reports": [r.to_dict() for r in items],
    }
    if extra:
        out["extra"] = _jsonable(extra)
    return out


def write_verdict(path, reports, extra=None) -> dict:
    v = verdict(reports, extra)
    Path(path).write_text(json.dumps(v, indent=2, sort_keys=True) + "\n")
    return v
