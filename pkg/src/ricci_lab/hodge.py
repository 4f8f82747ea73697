"""Discrete exterior calculus for 1-forms on the model geometries.

Torus forms are collocated: both components ``p dx + q dy`` live on the grid
nodes and derivatives are centered.  Codifferentials are defined as the exact
discrete adjoints of ``d`` in the metric inner products, so summation by
parts holds to round-off.  With ``Delta_d = -(d delta + delta d)`` the flat
torus operator is the componentwise Laplacian, negative semi-definite.

Warped forms are the rotationally symmetric ones, ``p(x) dx``.  They are
stored on cell edges (``x_{i+1/2}``) with potentials on nodes, which gives a
compact, exactly adjoint pair on the circle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .geom import (
    ConformalTorusMetric,
    WarpedMetric,
    dcenter,
    torus_curvature,
)

__all__ = [
    "OneForm",
    "RadialForm",
    "CohomologyClass",
    "Potential",
    "TorusDEC",
    "WarpedDEC",
    "dec_operators",
    "weitzenbock_check",
    "step_form_heat",
    "form_cfl_bound",
    "sup_norm",
    "period",
    "period_spread",
    "ComassResult",
    "comass_norm",
    "comass_lower_bound",
    "potential_track",
    "norm_axiom_check",
    "DEFAULT_LADDER",
]

DEFAULT_LADDER = (2, 8, 32, 128, 512)
# explicit RK4 reaches 2.78 on the negative real axis
_RK4_REACH = 2.5


class StepRejected(Exception):
    """Requested step exceeds the explicit stability bound."""

    def __init__(self, dt, admissible):
        self.dt = float(dt)
        self.admissible = float(admissible)
        super().__init__(f"dt={self.dt:.3e} exceeds admissible {self.admissible:.3e}")


# ---------------------------------------------------------------------------
# form types


@dataclass(frozen=True, eq=False)
class OneForm:
    """``p dx + q dy`` sampled on the torus grid nodes."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != q.shape:
            raise ValueError("components must share a shape")
        if not (np.isfinite(p).all() and np.isfinite(q).all()):
            raise ValueError("form has non-finite values")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    def __add__(self, other):
        return OneForm(self.p + other.p, self.q + other.q)

    def __sub__(self, other):
        return OneForm(self.p - other.p, self.q - other.q)

    def __mul__(self, c):
        return OneForm(c * self.p, c * self.q)

    __rmul__ = __mul__

    @classmethod
    def constant(cls, grid, a, b):
        return cls(np.full(grid.shape, float(a)), np.full(grid.shape, float(b)))

    @classmethod
    def from_function(cls, grid, fp, fq):
        X, Y = grid.coords()
        p = np.broadcast_to(fp(X, Y), grid.shape).astype(float)
        q = np.broadcast_to(fq(X, Y), grid.shape).astype(float)
        return cls(p, q)


@dataclass(frozen=True, eq=False)
class RadialForm:
    """``p(x) dx`` on a warped product, sampled on edges ``x_{i+1/2}``."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1:
            raise ValueError("radial form must be 1-d")
        if not np.isfinite(p).all():
            raise ValueError("form has non-finite values")
        object.__setattr__(self, "p", p)

    def __add__(self, other):
        return RadialForm(self.p + other.p)

    def __sub__(self, other):
        return RadialForm(self.p - other.p)

    def __mul__(self, c):
        return RadialForm(c * self.p)

    __rmul__ = __mul__

    @classmethod
    def from_function(cls, m: WarpedMetric, fp):
        xe = (np.arange(m.nx) + 0.5) * m.h
        return cls(np.broadcast_to(fp(xe), xe.shape).astype(float))


@dataclass
class Potential:
    """Gauge function ``F`` with ``phi = phi_0 + dF``; stored mean-zero."""

    F: np.ndarray

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float) - np.mean(self.F)


# ---------------------------------------------------------------------------
# operator bundles


class TorusDEC:
    """d, codifferentials and Laplacians for a conformal torus metric."""

    def __init__(self, m: ConformalTorusMetric):
        self.metric = m
        self.hx = m.grid.hx
        self.hy = m.grid.hy
        self.w = np.exp(-2 * m.u)  # inverse conformal factor
        self.vol = 1.0 / self.w

    def Dx(self, f):
        return dcenter(f, self.hx, 0)

    def Dy(self, f):
        return dcenter(f, self.hy, 1)

    def d0(self, F):
        return OneForm(self.Dx(F), self.Dy(F))

    def d1(self, a: OneForm):
        return self.Dx(a.q) - self.Dy(a.p)

    def codiff1(self, a: OneForm):
        return -self.w * (self.Dx(a.p) + self.Dy(a.q))

    def codiff2(self, f):
        wf = self.w * f
        return OneForm(self.Dy(wf), -self.Dx(wf))

    def hodge_laplacian(self, a: OneForm):
        d = self.d0(self.codiff1(a))
        c = self.codiff2(self.d1(a))
        return OneForm(-(d.p + c.p), -(d.q + c.q))

    def scalar_laplacian(self, F):
        return -self.codiff1(self.d0(F))

    # metric inner products (volume factor hx*hy included)
    def ip0(self, F, G):
        return float(np.sum(F * G * self.vol) * self.hx * self.hy)

    def ip1(self, a: OneForm, b: OneForm):
        # |.|^2 = e^{-2u}(..), dA = e^{2u} dx dy: weights cancel in 2-d
        return float(np.sum(a.p * b.p + a.q * b.q) * self.hx * self.hy)

    def ip2(self, f, g):
        return float(np.sum(f * g * self.w) * self.hx * self.hy)

    def christoffel(self):
        """``G[k, i, j] = Gamma^k_ij`` for ``g = exp(2u) delta``."""
        u = self.metric.u
        du = (self.Dx(u), self.Dy(u))
        G = np.zeros((2, 2, 2) + u.shape)
        for k in range(2):
            for i in range(2):
                for j in range(2):
                    val = 0.0
                    if k == i:
                        val = val + du[j]
                    if k == j:
                        val = val + du[i]
                    if i == j:
                        val = val - du[k]
                    G[k, i, j] = val
        return G

    def rough_laplacian(self, a: OneForm):
        """``g^{li} nabla_l nabla_i a_j`` with Christoffel symbols."""
        G = self.christoffel()
        D = (self.Dx, self.Dy)
        comp = (a.p, a.q)
        # T[i][j] = nabla_i a_j
        T = [[D[i](comp[j]) - sum(G[k, i, j] * comp[k] for k in range(2)) for j in range(2)]
             for i in range(2)]
        out = []
        for j in range(2):
            acc = 0.0
            for l in range(2):
                # (nabla_l T)_{l j}
                val = D[l](T[l][j])
                val = val - sum(G[m, l, l] * T[m][j] for m in range(2))
                val = val - sum(G[m, l, j] * T[l][m] for m in range(2))
                acc = acc + val
            out.append(self.w * acc)
        return OneForm(out[0], out[1])

    def stability_bound(self):
        """Spectral-radius bound for ``Delta_d`` on 1-forms and ``Delta`` on functions."""
        return 2.0 * float(self.w.max()) * (1.0 / self.hx**2 + 1.0 / self.hy**2)


class WarpedDEC:
    """Exterior calculus on rotationally symmetric forms of a warped product.

    Functions live on nodes, 1-forms ``p dx`` on edges.  The sphere factor
    only enters through the volume density ``phi psi^{n-1}`` (its constant
    area is dropped).
    """

    def __init__(self, m: WarpedMetric):
        self.metric = m
        self.h = m.h
        n = m.n
        phi, psi = m.phi, m.psi
        self.phi_e = 0.5 * (phi + np.roll(phi, -1))
        psi_e = 0.5 * (psi + np.roll(psi, -1))
        self.V = phi * psi ** (n - 1)
        # edge weight of the 1-form inner product: psi^{n-1}/phi
        self.we = psi_e ** (n - 1) / self.phi_e

    def d0(self, F):
        return RadialForm((np.roll(F, -1) - F) / self.h)

    def codiff1(self, a: RadialForm):
        A = self.we * a.p
        return -(A - np.roll(A, 1)) / (self.V * self.h)

    def hodge_laplacian(self, a: RadialForm):
        return RadialForm(-self.d0(self.codiff1(a)).p)

    def scalar_laplacian(self, F):
        return -self.codiff1(self.d0(F))

    def ip0(self, F, G):
        return float(np.sum(F * G * self.V) * self.h)

    def ip1(self, a: RadialForm, b: RadialForm):
        return float(np.sum(a.p * b.p * self.we) * self.h)

    def stability_bound(self):
        h2 = self.h**2
        we, V = self.we, self.V
        Vr = np.roll(V, -1)  # node right of each edge
        row = (we * (1 / V + 1 / Vr) + np.roll(we, -1) / Vr + np.roll(we, 1) / V) / h2
        rown = (np.roll(we, 1) + we) / (V * h2) * 2
        return float(max(row.max(), rown.max()))


def dec_operators(m):
    """Operator bundle ``{d0, d1, codifferential, rough_laplacian, hodge_laplacian}``."""
    if isinstance(m, ConformalTorusMetric):
        return TorusDEC(m)
    if isinstance(m, WarpedMetric):
        return WarpedDEC(m)
    raise TypeError(f"unsupported metric type {type(m).__name__}")


def weitzenbock_check(m: ConformalTorusMetric, a: OneForm):
    """Sup residual of ``Delta_d a - (Delta a - K a)`` on a conformal torus."""
    ops = TorusDEC(m)
    hl = ops.hodge_laplacian(a)
    rl = ops.rough_laplacian(a)
    K = torus_curvature(m).K
    rp = hl.p - (rl.p - K * a.p)
    rq = hl.q - (rl.q - K * a.q)
    res = float(np.max(np.hypot(rp, rq)))
    scale = float(np.max(np.hypot(hl.p, hl.q)))
    return {"residual": res, "scale": scale, "h": max(m.grid.hx, m.grid.hy)}


# ---------------------------------------------------------------------------
# heat flow on a fixed metric


def form_cfl_bound(m):
    """Largest stable RK4 step for the 1-form heat equation on ``m``."""
    return _RK4_REACH / dec_operators(m).stability_bound()


def _rk4(y, f, dt):
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def step_form_heat(a, m, dt, cfl_safety=1.0):
    """One RK4 step of ``d a / dt = Delta_d a`` with the metric held fixed.

    Coupled metric/form stepping lives in :func:`ricci_lab.flow.step_coupled`.
    """
    adm = cfl_safety * form_cfl_bound(m)
    if dt > adm:
        raise StepRejected(dt, adm)
    ops = dec_operators(m)
    if isinstance(a, OneForm):
        y = np.stack([a.p, a.q])

        def f(y):
            r = ops.hodge_laplacian(OneForm(y[0], y[1]))
            return np.stack([r.p, r.q])

        y = _rk4(y, f, dt)
        return OneForm(y[0], y[1])
    y = _rk4(a.p, lambda y: ops.hodge_laplacian(RadialForm(y)).p, dt)
    return RadialForm(y)


# ---------------------------------------------------------------------------
# norms and periods


def pointwise_norm(a, m):
    if isinstance(a, OneForm):
        return np.exp(-m.u) * np.hypot(a.p, a.q)
    phi_e = 0.5 * (m.phi + np.roll(m.phi, -1))
    return np.abs(a.p) / phi_e


def sup_norm(a, m) -> float:
    """``sup_x |a(x)|_g`` over grid nodes (edges for radial forms)."""
    return float(np.max(pointwise_norm(a, m)))


def _row_periods(a: OneForm, hx, hy):
    return np.sum(a.p, axis=0) * hx, np.sum(a.q, axis=1) * hy


def period(a, winding, grid=None) -> float:
    """Line integral of ``a`` over an axis-aligned loop with the given winding.

    Torus: winding ``(p, q)`` follows row ``y = 0`` ``p`` times and column
    ``x = 0`` ``q`` times; ``grid`` is required.  Warped: ``winding`` is the
    integer multiple of the circle and ``grid`` is the metric (for ``h``).
    """
    if isinstance(a, OneForm):
        if grid is None:
            raise ValueError("torus period needs the grid")
        px, py = _row_periods(a, grid.hx, grid.hy)
        wp, wq = winding
        if not closedness_ok(a, grid):
            spread = period_spread(a, grid)
            warnings.warn(
                f"form is not closed; period depends on representative by up to {spread:.2e}",
                stacklevel=2,
            )
        return float(wp * px[0] + wq * py[0])
    k = winding if np.isscalar(winding) else winding[0]
    return float(k * np.sum(a.p) * grid.h)


def period_spread(a: OneForm, grid) -> float:
    """Largest spread of the generator periods over parallel grid lines."""
    px, py = _row_periods(a, grid.hx, grid.hy)
    return float(max(np.ptp(px), np.ptp(py)))


def curl(a: OneForm, grid):
    return dcenter(a.q, grid.hx, 0) - dcenter(a.p, grid.hy, 1)


def closedness_ok(a: OneForm, grid, rtol=1e-6):
    scale = max(np.abs(a.p).max(), np.abs(a.q).max(), 1e-300)
    L = max(grid.lx, grid.ly)
    return float(np.abs(curl(a, grid)).max()) * L <= rtol * scale * 10 + 1e-12


# ---------------------------------------------------------------------------
# cohomology classes and the comass norm


@dataclass(eq=False)
class CohomologyClass:
    """A de Rham class given by a closed representative.

    ``periods`` are the integrals over the generators: ``(P_x, P_y)`` on the
    torus and ``(P,)`` on the warped circle.
    """

    base: object
    periods: tuple = ()
    grid: object = None

    def __post_init__(self):
        if isinstance(self.base, OneForm):
            if self.grid is None:
                raise ValueError("torus classes need the grid")
            if not closedness_ok(self.base, self.grid):
                raise ValueError(
                    f"representative is not closed: sup|curl|="
                    f"{np.abs(curl(self.base, self.grid)).max():.2e}"
                )
            px, py = _row_periods(self.base, self.grid.hx, self.grid.hy)
            self.periods = (float(px[0]), float(py[0]))
        else:
            self.periods = (float(np.sum(self.base.p) * self.grid.h),)

    @classmethod
    def from_periods(cls, m, periods):
        """Constant-coefficient representative with prescribed periods."""
        if isinstance(m, ConformalTorusMetric):
            g = m.grid
            base = OneForm.constant(g, periods[0] / g.lx, periods[1] / g.ly)
            return cls(base, grid=g)
        P = periods[0] if np.ndim(periods) else periods
        return cls(RadialForm(np.full(m.nx, P / m.period)), grid=m)

    def pairing(self, winding) -> float:
        """``<Phi, alpha>`` for an integral winding vector."""
        w = np.atleast_1d(winding)
        return float(np.dot(self.periods, w[: len(self.periods)]))

    def __add__(self, other):
        return CohomologyClass(self.base + other.base, grid=self.grid)

    def __mul__(self, c):
        return CohomologyClass(self.base * c, grid=self.grid)

    __rmul__ = __mul__


@dataclass
class ComassResult:
    """Certified bracket ``lower <= N_g(Phi) <= value``."""

    value: float
    lower: float
    minimizer: Potential
    log: list = field(default_factory=list)
    converged: bool = True

    @property
    def gap(self):
        return self.value - self.lower

    def log_csv(self):
        lines = ["iteration,k,surrogate,sup,gap"]
        for r in self.log:
            lines.append(f"{r[0]},{r[1]},{r[2]:.12g},{r[3]:.12g},{r[4]:.6g}")
        return "\n".join(lines) + "\n"


def comass_lower_bound(cls: CohomologyClass, m, loops=None) -> float:
    """Best bound ``|<Phi, alpha>| / length(a)`` over the available loops.

    Grid lines are always used.  ``loops`` may add ``(winding, length)``
    pairs, e.g. shortest geodesics from :mod:`ricci_lab.loops`.
    """
    best = 0.0
    if isinstance(m, ConformalTorusMetric):
        g = m.grid
        e = np.exp(m.u)
        row_len = np.sum(e, axis=0) * g.hx  # y = const lines
        col_len = np.sum(e, axis=1) * g.hy
        best = max(abs(cls.periods[0]) / row_len.min(), abs(cls.periods[1]) / col_len.min())
    else:
        best = abs(cls.periods[0]) / m.circle_length()
    for w, length in loops or ():
        if length > 0:
            best = max(best, abs(cls.pairing(w)) / length)
    return float(best)


def _lp_norm(n, k):
    """``(mean n^{2k})^{1/2k}`` and ``dJ/dn``, scaled to avoid overflow."""
    nmax = n.max()
    if nmax <= 0:
        return 0.0, np.zeros_like(n)
    r = n / nmax
    r2k1 = r ** (2 * k - 1)
    S = np.mean(r2k1 * r)
    J = nmax * S ** (1.0 / (2 * k))
    dJ = S ** (1.0 / (2 * k) - 1.0) * r2k1 / n.size
    return J, dJ


def comass_norm(
    cls: CohomologyClass,
    m,
    ladder=DEFAULT_LADDER,
    F0: Optional[np.ndarray] = None,
    rtol=1e-8,
    maxiter=3000,
    loops=None,
) -> ComassResult:
    """Upper/lower bracket for ``N_g(Phi) = inf_{phi in Phi} sup |phi|_g``.

    The sup norm is smoothed by the ``L^{2k}`` mean over grid nodes and
    minimized for each ``k`` in ``ladder``, warm-starting every level from
    the previous one.  ``value`` is the sup norm of the final iterate (an
    upper bound); ``lower`` comes from :func:`comass_lower_bound`.
    """
    ops = dec_operators(m)
    base = cls.base
    torus = isinstance(base, OneForm)
    shape = base.p.shape
    x0 = np.zeros(shape) if F0 is None else np.array(F0, dtype=float)
    x0 = x0.ravel()

    if torus:
        wu = np.exp(-m.u)

        def fields(F):
            dF = ops.d0(F)
            return base.p + dF.p, base.q + dF.q

        def norms(F):
            vp, vq = fields(F)
            return wu * np.hypot(vp, vq)

        def fun(x, k):
            F = x.reshape(shape)
            vp, vq = fields(F)
            n = wu * np.hypot(vp, vq)
            J, dJ = _lp_norm(n, k)
            safe = np.where(n > 0, n, 1.0)
            s = np.where(n > 0, dJ * wu * wu / safe, 0.0)
            gp, gq = s * vp, s * vq
            # adjoint of centered D is -D
            grad = -(ops.Dx(gp) + ops.Dy(gq))
            return J, grad.ravel()
    else:
        phi_e = ops.phi_e
        h = ops.h

        def norms(F):
            return np.abs(base.p + ops.d0(F).p) / phi_e

        def fun(x, k):
            v = base.p + (np.roll(x, -1) - x) / h
            n = np.abs(v) / phi_e
            J, dJ = _lp_norm(n, k)
            gv = dJ * np.sign(v) / phi_e
            grad = (np.roll(gv, 1) - gv) / h
            return J, grad

    log = []
    it = [0]
    lower = comass_lower_bound(cls, m, loops)
    converged = True
    x = x0
    for k in ladder:
        def cb(xk, k=k):
            it[0] += 1
            if it[0] % 25 == 0:
                sup = float(norms(xk.reshape(shape)).max())
                log.append((it[0], k, float(fun(xk, k)[0]), sup, sup - lower))

        res = minimize(
            fun, x, args=(k,), jac=True, method="L-BFGS-B", callback=cb,
            options={"maxiter": maxiter, "ftol": rtol * 1e-2, "gtol": 1e-12, "maxcor": 20},
        )
        x = res.x
        sup = float(norms(x.reshape(shape)).max())
        log.append((it[0], k, float(res.fun), sup, sup - lower))
        if not res.success and res.nit >= maxiter:
            converged = False
    F = x.reshape(shape)
    value = float(norms(F).max())
    # the start point is itself a valid representative
    start = float(norms(x0.reshape(shape)).max())
    if start < value:
        value, F = start, x0.reshape(shape)
    return ComassResult(value=value, lower=min(lower, value), minimizer=Potential(F),
                        log=log, converged=converged)


def norm_axiom_check(m, classes, scalars=(-2.0, 0.5, 3.0), **kw):
    """Numerical homogeneity, triangle inequality and positivity of ``N_g``.

    Returns a dict with the worst homogeneity error (relative), the worst
    triangle excess (``N(a+b) - N(a) - N(b)``, should be <= solver gap) and
    the smallest certified lower bound over the supplied classes.
    """
    vals = [comass_norm(c, m, **kw) for c in classes]
    hom = 0.0
    for c, v in zip(classes, vals):
        for s in scalars:
            vs = comass_norm(c * s, m, **kw).value
            hom = max(hom, abs(vs - abs(s) * v.value) / max(abs(s) * v.value, 1e-300))
    tri = -np.inf
    gaps = []
    for i in range(len(classes)):
        for j in range(i + 1, len(classes)):
            r = comass_norm(classes[i] + classes[j], m, **kw)
            tri = max(tri, r.value - vals[i].value - vals[j].value)
            gaps.append(r.gap)
    return {
        "values": [v.value for v in vals],
        "homogeneity_rel_error": hom,
        "triangle_excess": float(tri),
        "max_gap": float(max([v.gap for v in vals] + gaps)),
        "min_lower_bound": float(min(v.lower for v in vals)),
    }


# ---------------------------------------------------------------------------
# potential tracking along a flow


def potential_track(a0, trace):
    """Integrate ``dF/dt = Delta F - delta a0`` along a recorded flow.

    The metric evolution is replayed from the first snapshot with the step
    sizes stored in the trace, together with the form heat flow started at
    ``a0``.  At each snapshot the identity ``a(t) = a0 + dF(t)`` is checked.

    Returns a dict with ``times``, ``potentials`` (list of
    :class:`Potential`) and ``residuals`` (sup of the pointwise norm of
    ``a - a0 - dF``).
    """
    from .flow import replay_coupled

    out = replay_coupled(trace, a0, with_potential=True)
    residuals = []
    for m, a, F in zip(out["metrics"], out["forms"], out["potentials"]):
        ops = dec_operators(m)
        diff = a - a0 - ops.d0(F)
        residuals.append(sup_norm(diff, m))
    return {
        "times": out["times"],
        "forms": out["forms"],
        "potentials": [Potential(F) for F in out["potentials"]],
        "residuals": np.array(residuals),
    }
