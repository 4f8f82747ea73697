"""Ricci flow on the conformal torus and warped product ansätze.

Torus:  ``g = exp(2u) g_0`` flows by ``du/dt = -K = exp(-2u) Delta_0 u``.
Warped: ``d phi/dt = -rc_ss phi`` and ``d psi/dt = -rc_sph psi`` in the
orthonormal convention of :mod:`ricci_lab.geom`, i.e.

    phi_t = (n-1) (psi_ss / psi) phi
    psi_t = psi_ss - (n-2) (1 - psi_s^2) / psi

Both are integrated with explicit RK4.  A 1-form (and its gauge potential)
can ride along on the same time grid; every RK4 stage evaluates the form
operators on the stage metric.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .geom import (
    ConformalTorusMetric,
    GeometryError,
    PeriodicGrid2,
    SingularityImminent,
    WarpedMetric,
    curvature,
    dcenter,
    lap_compact,
    warped_derivatives,
)
from .hodge import (
    OneForm,
    RadialForm,
    StepRejected,
    TorusDEC,
    WarpedDEC,
    dec_operators,
    form_cfl_bound,
    period,
    sup_norm,
)

__all__ = [
    "FlowConfig",
    "FlowTrace",
    "DilationSpec",
    "NotApplicable",
    "StepRejected",
    "torus_cfl_bound",
    "warped_cfl_bound",
    "step_torus_flow",
    "step_warped_flow",
    "step_coupled",
    "run_flow",
    "replay_coupled",
    "cylinder_soliton",
    "cylinder_vanishing_time",
    "dilate",
    "rmin_comparison_check",
    "blowup_rate_check",
    "snapshot_diagnostics",
    "write_trace",
    "read_trace",
    "TRACE_COLUMNS",
]


class NotApplicable(Exception):
    """A check does not apply to this trace (e.g. no singularity)."""


@dataclass(frozen=True)
class FlowConfig:
    """Integrator settings.

    ``dt_init`` caps every step; the actual step is the smaller of it and
    ``cfl_safety`` times the explicit stability bound.  ``singularity_floor``
    is relative to the initial ``min psi``.
    """

    dt_init: float = 1e-3
    cfl_safety: float = 0.9
    t_end: float = 1.0
    snapshot_stride: int = 100
    singularity_floor: float = 1e-3
    max_steps: int = 2_000_000

    def __post_init__(self):
        if not self.dt_init > 0:
            raise ValueError("dt_init must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if int(self.snapshot_stride) != self.snapshot_stride or self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be a positive integer")


@dataclass(frozen=True)
class DilationSpec:
    """Parabolic rescaling ``g_j(tau) = lam * g(t_j + tau / lam)`` based at node ``x_j``."""

    lambda_j: float
    t_j: float
    x_j: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.lambda_j) and self.lambda_j > 0):
            raise ValueError("lambda_j must be finite and positive")


# ---------------------------------------------------------------------------
# right-hand sides and stability bounds


def _torus_rhs(u, hx, hy):
    return np.exp(-2 * u) * (lap_compact(u, hx, 0) + lap_compact(u, hy, 1))


def _warped_rhs(phi, psi, n, h):
    m = WarpedMetric(n, h * phi.size, phi, psi)
    psi_s, psi_ss = warped_derivatives(m)
    phi_t = (n - 1) * (psi_ss / psi) * phi
    psi_t = psi_ss - (n - 2) * (1 - psi_s**2) / psi
    return phi_t, psi_t


def torus_cfl_bound(m: ConformalTorusMetric) -> float:
    """``h^2 / (4 max exp(-2u))``."""
    h = min(m.grid.hx, m.grid.hy)
    return h * h / (4.0 * float(np.exp(-2 * m.u).max()))


def warped_cfl_bound(m: WarpedMetric) -> float:
    """Diffusive bound ``(h phi)^2 / 2`` together with the reaction time scales."""
    c = curvature(m)
    b = (m.h * m.phi.min()) ** 2 / 2.0
    b = min(b, m.psi.min() ** 2 / (m.n - 2))
    for r in (c.rc_ss, c.rc_sph):
        rmax = float(np.abs(r).max())
        if rmax > 0:
            b = min(b, 1.0 / rmax)
    return b


def metric_cfl_bound(m) -> float:
    if isinstance(m, ConformalTorusMetric):
        return torus_cfl_bound(m)
    return warped_cfl_bound(m)


def _rk4(y, f, dt):
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def step_torus_flow(m: ConformalTorusMetric, dt, cfl_safety=1.0) -> ConformalTorusMetric:
    """One RK4 step of ``du/dt = exp(-2u) Delta_0 u``."""
    adm = cfl_safety * torus_cfl_bound(m)
    if dt > adm:
        raise StepRejected(dt, adm)
    g = m.grid
    u = _rk4(m.u, lambda u: _torus_rhs(u, g.hx, g.hy), dt)
    return ConformalTorusMetric(g, u)


def step_warped_flow(m: WarpedMetric, dt, cfl_safety=1.0, floor=None) -> WarpedMetric:
    """One RK4 step of the warped Ricci flow.

    Raises :class:`SingularityImminent` when ``min psi`` is below ``floor``
    before or after the step.
    """
    if floor is not None and m.psi.min() < floor:
        i = int(np.argmin(m.psi))
        raise SingularityImminent(m.psi[i], floor, i)
    adm = cfl_safety * warped_cfl_bound(m)
    if dt > adm:
        raise StepRejected(dt, adm)
    n, h = m.n, m.h

    def f(y):
        a, b = _warped_rhs(y[0], y[1], n, h)
        return np.stack([a, b])

    y = _rk4(np.stack([m.phi, m.psi]), f, dt)
    out = WarpedMetric(n, m.period, y[0], y[1])
    if floor is not None and out.psi.min() < floor:
        i = int(np.argmin(out.psi))
        raise SingularityImminent(out.psi[i], floor, i)
    return out


# ---------------------------------------------------------------------------
# coupled metric / form / potential stepping


def _pack(m, form=None, F=None, a0=None):
    """Flatten state into one array; returns ``(y, unpack)``."""
    parts = []
    if isinstance(m, ConformalTorusMetric):
        parts.append(m.u[None])
        if form is not None:
            parts.append(np.stack([form.p, form.q]))
    else:
        parts.append(np.stack([m.phi, m.psi]))
        if form is not None:
            parts.append(form.p[None])
    if F is not None:
        parts.append(F[None])
    return np.concatenate(parts)


def step_coupled(m, dt, form=None, F=None, a0=None, cfl_safety=1.0):
    """One RK4 step of the metric flow with an optional riding 1-form.

    ``form`` follows ``d form/dt = Delta_d form`` and ``F`` follows
    ``dF/dt = Delta F - delta a0`` (``a0`` required with ``F``); both use the
    stage metric at every RK4 stage.  Returns ``(metric, form, F)``.
    """
    if F is not None and a0 is None:
        raise ValueError("potential tracking needs the initial form a0")
    adm = metric_cfl_bound(m)
    if form is not None or F is not None:
        adm = min(adm, form_cfl_bound(m))
    adm *= cfl_safety
    if dt > adm:
        raise StepRejected(dt, adm)
    torus = isinstance(m, ConformalTorusMetric)
    nf = 0 if form is None else (2 if torus else 1)
    has_F = F is not None

    if torus:
        g = m.grid

        def f(y):
            u = y[0]
            out = [_torus_rhs(u, g.hx, g.hy)[None]]
            if nf or has_F:
                ops = TorusDEC(ConformalTorusMetric(g, u))
            if nf:
                r = ops.hodge_laplacian(OneForm(y[1], y[2]))
                out.append(np.stack([r.p, r.q]))
            if has_F:
                Fy = y[1 + nf]
                out.append((ops.scalar_laplacian(Fy) - ops.codiff1(a0))[None])
            return np.concatenate(out)
    else:
        n, h, period_ = m.n, m.h, m.period

        def f(y):
            phi, psi = y[0], y[1]
            a, b = _warped_rhs(phi, psi, n, h)
            out = [a[None], b[None]]
            if nf or has_F:
                ops = WarpedDEC(WarpedMetric(n, period_, phi, psi))
            if nf:
                out.append(ops.hodge_laplacian(RadialForm(y[2])).p[None])
            if has_F:
                Fy = y[2 + nf]
                out.append((ops.scalar_laplacian(Fy) - ops.codiff1(a0))[None])
            return np.concatenate(out)

    y = _rk4(_pack(m, form, F), f, dt)
    if not np.isfinite(y).all():
        raise GeometryError("non-finite state after step")
    if torus:
        m2 = ConformalTorusMetric(m.grid, y[0])
        form2 = OneForm(y[1], y[2]) if nf else None
    else:
        m2 = WarpedMetric(m.n, m.period, y[0], y[1])
        form2 = RadialForm(y[2]) if nf else None
    F2 = None
    if has_F:
        F2 = y[-1] - np.mean(y[-1])
    return m2, form2, F2


# ---------------------------------------------------------------------------
# traces

TRACE_COLUMNS = {
    "torus": ["t", "R_min", "R_max", "sup_rm", "area", "int_K"],
    "warped": ["t", "R_min", "R_max", "sup_rm", "psi_min", "circle_length"],
}
FORM_COLUMNS = ["form_sup", "period_1", "period_2"]


def snapshot_diagnostics(m, form=None):
    """Per-snapshot diagnostic row, always computed from the metric itself."""
    c = curvature(m)
    row = {"R_min": c.R_min, "R_max": c.R_max, "sup_rm": c.sup_rm}
    if isinstance(m, ConformalTorusMetric):
        row["area"] = m.area()
        row["int_K"] = float(np.sum(c.K * np.exp(2 * m.u)) * m.grid.hx * m.grid.hy)
    else:
        row["psi_min"] = float(m.psi.min())
        row["circle_length"] = m.circle_length()
    if form is not None:
        row["form_sup"] = sup_norm(form, m)
        if isinstance(form, OneForm):
            row["period_1"] = period(form, (1, 0), m.grid)
            row["period_2"] = period(form, (0, 1), m.grid)
        else:
            row["period_1"] = period(form, 1, m)
            row["period_2"] = 0.0
    return row


@dataclass
class FlowTrace:
    """A computed solution on ``[0, T_num)``.

    ``step_index[k]`` is the number of accepted steps before snapshot ``k``;
    ``dts`` holds every accepted step so the run can be replayed exactly.
    """

    family: str
    times: np.ndarray
    snapshots: list
    dts: np.ndarray
    step_index: np.ndarray
    termination: str
    T_num: float
    config: FlowConfig
    forms: Optional[list] = None
    meta: dict = field(default_factory=dict)
    _diag: Optional[list] = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trace times must be strictly increasing")
        if len(self.snapshots) != self.times.size:
            raise ValueError("one snapshot per time required")

    @property
    def diagnostics(self) -> List[dict]:
        if self._diag is None:
            forms = self.forms or [None] * len(self.snapshots)
            rows = []
            for t, m, a in zip(self.times, self.snapshots, forms):
                row = {"t": float(t)}
                row.update(snapshot_diagnostics(m, a))
                rows.append(row)
            self._diag = rows
        return self._diag

    def column(self, name):
        return np.array([r[name] for r in self.diagnostics])

    @property
    def singular(self):
        return self.termination == "singularity"

    def index_of_time(self, t, rtol=1e-9):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > rtol * max(1.0, abs(t)):
            raise ValueError(
                f"t={t!r} is not a snapshot time; nearest is {self.times[i]!r}"
            )
        return i


def _extrapolate_vanishing(hist):
    """Root of ``psi_min^2`` extrapolated from the last accepted steps."""
    ts = np.array([h[0] for h in hist])
    ys = np.array([h[1] ** 2 for h in hist])
    t_last, y_last = ts[-1], ys[-1]
    if len(ts) >= 3:
        # quadratic through the last three points, root beyond t_last
        c = np.polyfit(ts[-3:] - t_last, ys[-3:], 2)
        roots = np.roots(c)
        roots = roots[np.isreal(roots)].real
        roots = roots[roots > 0]
        if roots.size:
            return float(t_last + roots.min())
    if len(ts) >= 2:
        slope = (ys[-1] - ys[-2]) / (ts[-1] - ts[-2])
        if slope < 0:
            return float(t_last - y_last / slope)
    return float(t_last)


def run_flow(initial, cfg: FlowConfig, form=None) -> FlowTrace:
    """Integrate from ``initial`` until ``cfg.t_end`` or a singularity.

    The step is ``min(dt_init, cfl_safety * bound)`` with the bound
    recomputed every step (and including the form operator when a form
    rides along); the last step is clipped to land on ``t_end``.  Warped
    runs stop once ``min psi`` falls below ``singularity_floor * min psi(0)``
    and estimate ``T_num`` by extrapolating ``min psi^2``.
    """
    m = initial
    torus = isinstance(m, ConformalTorusMetric)
    a = form
    floor = None if torus else cfg.singularity_floor * float(m.psi.min())
    t = 0.0
    times, snaps, forms, idx = [0.0], [m], [a], [0]
    dts = []
    hist = []
    termination = "t_end"
    steps = 0
    while t < cfg.t_end * (1 - 1e-14):
        if steps >= cfg.max_steps:
            termination = "max_steps"
            break
        bound = cfg.cfl_safety * metric_cfl_bound(m)
        if a is not None:
            bound = min(bound, cfg.cfl_safety * form_cfl_bound(m))
        dt = min(cfg.dt_init, bound, cfg.t_end - t)
        for _ in range(30):
            try:
                m2, a2, _ = step_coupled(m, dt, form=a)
                break
            except GeometryError:
                dt *= 0.5
        else:
            raise GeometryError(f"step failed repeatedly at t={t:.6g}")
        m, a = m2, a2
        t += dt
        steps += 1
        dts.append(dt)
        if not torus:
            hist.append((t, float(m.psi.min())))
            hist = hist[-3:]
        done = t >= cfg.t_end * (1 - 1e-14)
        sing = (not torus) and m.psi.min() < floor
        if steps % cfg.snapshot_stride == 0 or done or sing:
            times.append(t)
            snaps.append(m)
            forms.append(a)
            idx.append(steps)
        if sing:
            termination = "singularity"
            break
    if termination == "singularity":
        T_num = _extrapolate_vanishing(hist)
    else:
        T_num = t
    meta = {}
    if not torus:
        meta["psi_floor"] = floor
    return FlowTrace(
        family="torus" if torus else "warped",
        times=np.array(times),
        snapshots=snaps,
        dts=np.array(dts),
        step_index=np.array(idx),
        termination=termination,
        T_num=float(T_num),
        config=cfg,
        forms=forms if form is not None else None,
        meta=meta,
    )


def replay_coupled(trace: FlowTrace, a0, with_potential=False, check_metric=True):
    """Re-run the recorded steps with a form (and potential) riding along.

    The metric part is bit-identical to the original run, which is checked
    against the stored snapshots when ``check_metric`` is set.
    """
    if trace.meta.get("dilated"):
        raise NotApplicable("cannot replay a dilated trace")
    m = trace.snapshots[0]
    a = a0
    F = np.zeros(m.u.shape if isinstance(m, ConformalTorusMetric) else m.nx) if with_potential else None
    metrics, formsl, pots, times = [m], [a], [F], [trace.times[0]]
    want = list(trace.step_index[1:])
    k = 1
    for s, dt in enumerate(trace.dts, start=1):
        m, a, F = step_coupled(m, dt, form=a, F=F, a0=a0 if with_potential else None)
        if want and s == want[0]:
            want.pop(0)
            if check_metric:
                ref = trace.snapshots[k]
                arr = m.u if isinstance(m, ConformalTorusMetric) else np.stack([m.phi, m.psi])
                rarr = ref.u if isinstance(ref, ConformalTorusMetric) else np.stack([ref.phi, ref.psi])
                if not np.array_equal(arr, rarr):
                    raise RuntimeError(f"replay diverged from stored snapshot {k}")
            metrics.append(m)
            formsl.append(a)
            pots.append(F)
            times.append(trace.times[k])
            k += 1
    return {"times": np.array(times), "metrics": metrics, "forms": formsl, "potentials": pots}


# ---------------------------------------------------------------------------
# exact cylinder


def cylinder_vanishing_time(n, psi0, variant="derived"):
    rate = 2 * (n - 2) if variant == "derived" else 2 * (n - 1)
    return psi0**2 / rate


def cylinder_soliton(n, psi0, t, variant="derived", nx=256, period=2 * np.pi) -> WarpedMetric:
    """Round cylinder ``dx^2 + psi(t)^2 g_can``.

    ``variant="derived"`` uses ``psi^2 = psi0^2 - 2(n-2) t``, the exact Ricci
    flow of a unit-sphere factor.  ``variant="alt"`` uses the coefficient
    ``2(n-1)``, i.e. ``psi^2 = 2(n-1)(T_bar - t)`` with
    ``T_bar = psi0^2 / (2(n-1))``; it is kept for comparison and is *not* a
    solution under the unit round normalization.
    """
    if variant not in ("derived", "alt"):
        raise ValueError(f"unknown variant {variant!r}")
    T = cylinder_vanishing_time(n, psi0, variant)
    if t >= T:
        raise ValueError(f"t={t} is at or past the vanishing time {T}")
    rate = 2 * (n - 2) if variant == "derived" else 2 * (n - 1)
    psi = math.sqrt(psi0**2 - rate * t)
    return WarpedMetric(n, period, np.ones(nx), np.full(nx, psi))


# ---------------------------------------------------------------------------
# dilations


def dilate(trace: FlowTrace, spec: DilationSpec, window=None) -> FlowTrace:
    """Apply ``g_j(tau) = lam g(t_j + tau/lam)`` to every snapshot.

    ``t_j`` must be a snapshot time.  The rescaled time axis is
    ``tau = lam (t - t_j)``.  If ``window = (tau_a, tau_b)`` is given, only
    snapshots inside it are kept; a window outside the coverage raises
    ``ValueError`` naming the achievable window.
    """
    lam = spec.lambda_j
    j = trace.index_of_time(spec.t_j)
    tau = lam * (trace.times - trace.times[j])
    cover = (float(tau[0]), float(tau[-1]))
    keep = np.ones(tau.size, dtype=bool)
    if window is not None:
        a, b = window
        if a < cover[0] - 1e-12 or b > cover[1] + 1e-12:
            raise ValueError(f"window {window} exceeds achievable window {cover}")
        keep = (tau >= a - 1e-12) & (tau <= b + 1e-12)
    snaps = [m.scaled(lam) for m, k in zip(trace.snapshots, keep) if k]
    forms = None
    if trace.forms is not None:
        forms = [f for f, k in zip(trace.forms, keep) if k]
    meta = dict(trace.meta)
    meta["dilated"] = True
    meta["dilation"] = {"lambda_j": lam, "t_j": spec.t_j, "x_j": spec.x_j}
    if "psi_floor" in meta:
        meta["psi_floor"] = meta["psi_floor"] * math.sqrt(lam)
    return FlowTrace(
        family=trace.family,
        times=tau[keep],
        snapshots=snaps,
        dts=trace.dts * lam,
        step_index=trace.step_index[keep],
        termination=trace.termination,
        T_num=lam * (trace.T_num - trace.times[j]),
        config=trace.config,
        forms=forms,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# scalar-curvature comparison and blowup rate


def _dimension(trace):
    return 2 if trace.family == "torus" else trace.snapshots[0].n


def rmin_comparison_check(trace: FlowTrace, slack_rel=1e-3):
    """Compare ``R_min(t)`` with the ODE solution ``R0 / (1 - (2/n) R0 t)``.

    Returns a report with the worst violation ``bound - slack - R_min`` over
    samples (positive means violated) and, for ``R0 > 0``, the check
    ``T_num <= n / (2 R0)``.
    """
    n = _dimension(trace)
    t = trace.times - trace.times[0]
    R = trace.column("R_min")
    R0 = R[0]
    slack = slack_rel * abs(R0)
    denom = 1 - (2.0 / n) * R0 * t
    valid = denom > 0
    bound = np.where(valid, R0 / np.where(valid, denom, 1.0), np.inf)
    excess = np.where(valid, bound - R, -np.inf)
    worst = float(np.max(excess)) if valid.any() else -np.inf
    violations = [
        {"t": float(trace.times[i]), "excess": float(excess[i] - slack)}
        for i in np.flatnonzero(excess > slack)
    ]
    report = {
        "n": n,
        "R0": float(R0),
        "slack": slack,
        "worst_excess": worst,
        "violations": violations,
        "ok": not violations,
    }
    if R0 > 0:
        T_max = n / (2 * R0)
        report["T_upper"] = T_max
        report["T_num"] = trace.T_num - trace.times[0]
        report["T_ok"] = bool(report["T_num"] <= T_max * (1 + slack_rel))
        report["ok"] = report["ok"] and report["T_ok"]
    return report


def blowup_rate_check(trace: FlowTrace, late_fraction=0.5):
    """Lower bound of ``(T_num - t) sup|Rm|`` over late samples.

    Late samples satisfy ``T_num - t <= late_fraction (T_num - t_0)``, which
    is invariant under dilation.
    """
    if not trace.singular:
        raise NotApplicable("trace did not terminate in a singularity")
    T = trace.T_num
    t = trace.times
    rem = T - t
    late = rem <= late_fraction * rem[0]
    prod = rem * trace.column("sup_rm")
    vals = prod[late]
    return {
        "constant": float(vals.min()),
        "last": float(vals[-1]),
        "samples": int(late.sum()),
        "T_num": T,
        "ok": bool(vals.min() > 0),
    }


# ---------------------------------------------------------------------------
# serialization: JSON header + CSV body + npz snapshot store


def _metric_header(m):
    if isinstance(m, ConformalTorusMetric):
        g = m.grid
        return {"nx": g.nx, "ny": g.ny, "lx": g.lx, "ly": g.ly}
    return {"n": m.n, "nx": m.nx, "period": m.period}


def write_trace(trace: FlowTrace, out_dir):
    """Write ``trace.json``, ``trace.csv`` and ``snapshots.npz`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = list(TRACE_COLUMNS[trace.family])
    if trace.forms is not None:
        cols += FORM_COLUMNS
    header = {
        "family": trace.family,
        "config": asdict(trace.config),
        "grid": _metric_header(trace.snapshots[0]),
        "termination": trace.termination,
        "T_num": trace.T_num,
        "columns": cols,
        "n_snapshots": len(trace.snapshots),
        "n_steps": int(trace.dts.size),
        "meta": trace.meta,
    }
    (out / "trace.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in trace.diagnostics:
        w.writerow([repr(float(row[c])) for c in cols])
    (out / "trace.csv").write_text(buf.getvalue())
    arrays = {"times": trace.times, "dts": trace.dts, "step_index": trace.step_index}
    if trace.family == "torus":
        arrays["u"] = np.stack([m.u for m in trace.snapshots])
        if trace.forms is not None:
            arrays["form_p"] = np.stack([f.p for f in trace.forms])
            arrays["form_q"] = np.stack([f.q for f in trace.forms])
    else:
        arrays["phi"] = np.stack([m.phi for m in trace.snapshots])
        arrays["psi"] = np.stack([m.psi for m in trace.snapshots])
        if trace.forms is not None:
            arrays["form_p"] = np.stack([f.p for f in trace.forms])
    np.savez_compressed(out / "snapshots.npz", **arrays)
    return out


def read_trace(in_dir) -> FlowTrace:
    """Inverse of :func:`write_trace`; diagnostics are recomputed."""
    d = Path(in_dir)
    header = json.loads((d / "trace.json").read_text())
    z = np.load(d / "snapshots.npz")
    gh = header["grid"]
    forms = None
    if header["family"] == "torus":
        grid = PeriodicGrid2(gh["nx"], gh["ny"], gh["lx"], gh["ly"])
        snaps = [ConformalTorusMetric(grid, u) for u in z["u"]]
        if "form_p" in z:
            forms = [OneForm(p, q) for p, q in zip(z["form_p"], z["form_q"])]
    else:
        snaps = [WarpedMetric(gh["n"], gh["period"], a, b) for a, b in zip(z["phi"], z["psi"])]
        if "form_p" in z:
            forms = [RadialForm(p) for p in z["form_p"]]
    return FlowTrace(
        family=header["family"],
        times=z["times"],
        snapshots=snaps,
        dts=z["dts"],
        step_index=z["step_index"],
        termination=header["termination"],
        T_num=header["T_num"],
        config=FlowConfig(**header["config"]),
        forms=forms,
        meta=header.get("meta", {}),
    )
