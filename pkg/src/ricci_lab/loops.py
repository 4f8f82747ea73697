"""Closed curves in fixed winding classes, shortening, and frames.

Curves are polylines in universal-cover coordinates.  A loop of winding
``(p, q)`` on the torus stores ``N`` vertices; the closing vertex is the
first one translated by ``(p lx, q ly)``.  On a warped product a vertex is
``(x, w)`` with ``w`` in ``R^n`` and sphere point ``theta = w / |w|``; the
closing vertex is ``(x_0 + k * period, w_0)``.

Shortening minimizes the discrete energy ``N * sum |segment|_g^2`` with
L-BFGS.  Critical points of the energy are constant-speed discrete
geodesics, so no resampling is needed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import optimize, sparse
from scipy.sparse import csgraph

from .geom import (
    ConformalTorusMetric,
    FourierInterpolant1,
    FourierInterpolant2,
    WarpedMetric,
    curvature,
)

__all__ = [
    "WindingClass",
    "LoopPolyline",
    "GeodesicFrame",
    "MinLengthResult",
    "STENCIL_BIAS",
    "loop_length",
    "geodesic_residual",
    "straight_loop",
    "shorten_loop",
    "min_length",
    "dijkstra_cover_oracle",
    "stable_norm",
    "build_frame",
    "transport_holonomy",
    "stability_integral",
    "length_derivative",
    "length_derivative_crosscheck",
    "decay_bound_check",
    "unstable_geodesic_example",
    "write_geodesic_dump",
]

# Worst relative excess of a 16-neighbour lattice path over a straight line:
# the widest angular gap between stencil directions is atan(1/2).
STENCIL_BIAS = 1.0 / math.cos(0.5 * math.atan(0.5)) - 1.0


@dataclass(frozen=True)
class WindingClass:
    """Winding data: ``(p, q)`` on the torus, ``k = p`` on a warped product."""

    p: int
    q: int = 0
    family: str = "torus"

    def __post_init__(self):
        if self.family not in ("torus", "warped"):
            raise ValueError(f"unknown family {self.family!r}")
        if int(self.p) != self.p or int(self.q) != self.q:
            raise ValueError("winding numbers must be integers")
        if self.family == "warped" and self.q != 0:
            raise ValueError("warped winding is a single integer")

    @classmethod
    def warped(cls, k):
        return cls(int(k), 0, "warped")

    @property
    def trivial(self):
        return self.p == 0 and self.q == 0

    def multiple(self, k):
        return WindingClass(self.p * k, self.q * k, self.family)

    def vector(self):
        return (self.p, self.q) if self.family == "torus" else (self.p,)

    def shift(self, m):
        if self.family == "torus":
            g = m.grid
            return np.array([self.p * g.lx, self.q * g.ly])
        s = np.zeros(1 + m.n)
        s[0] = self.p * m.period
        return s


def _family(m):
    return "torus" if isinstance(m, ConformalTorusMetric) else "warped"


@dataclass(frozen=True, eq=False)
class LoopPolyline:
    """Closed polyline; ``vertices`` has shape ``(N, 2)`` or ``(N, 1 + n)``."""

    vertices: np.ndarray
    winding: WindingClass
    shift: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] < 16:
            raise ValueError("a loop needs at least 16 vertices")
        s = np.asarray(self.shift, dtype=float)
        if s.shape != (v.shape[1],):
            raise ValueError("shift must match the vertex dimension")
        if not np.isfinite(v).all():
            raise ValueError("non-finite vertex")
        nxt = np.roll(v, -1, axis=0)
        nxt[-1] += s
        if np.any(np.all(nxt == v, axis=1)):
            raise ValueError("repeated consecutive vertices")
        v.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "shift", s)

    @property
    def N(self):
        return self.vertices.shape[0]

    def closed_vertices(self):
        """Vertices with the translated first vertex appended."""
        return np.vstack([self.vertices, self.vertices[:1] + self.shift])

    def segments(self):
        nxt = np.roll(self.vertices, -1, axis=0)
        nxt[-1] += self.shift
        return nxt - self.vertices

    def cover(self, k):
        """The ``k``-fold traversal, a loop in class ``k * winding``."""
        v = np.vstack([self.vertices + j * self.shift for j in range(k)])
        return LoopPolyline(v, self.winding.multiple(k), k * self.shift)

    def translated(self, offset):
        return LoopPolyline(self.vertices + offset, self.winding, self.shift)


# ---------------------------------------------------------------------------
# metric evaluation along curves


class _TorusEval:
    def __init__(self, m: ConformalTorusMetric):
        self.m = m
        self.f = m.interpolant()

    def u(self, P, grad=False, hess=False):
        return self.f(P[:, 0], P[:, 1], grad=grad, hess=hess)


class _WarpedEval:
    def __init__(self, m: WarpedMetric):
        self.m = m
        self.phi = FourierInterpolant1(m.phi, m.period)
        self.psi = FourierInterpolant1(m.psi, m.period)
        # shared mode set so one exponential table serves both profiles
        n = m.nx
        self.k = 2 * np.pi * np.fft.fftfreq(n, d=m.period / n)
        self.c = np.stack([np.fft.fft(m.phi), np.fft.fft(m.psi)], axis=1) / n
        self._cache = (None, None)

    def _table(self, x):
        key, E = self._cache
        if key is not None and key.shape == x.shape and np.array_equal(key, x):
            return E
        E = np.exp(1j * np.multiply.outer(x, self.k))
        self._cache = (x.copy(), E)
        return E

    def at(self, x, deriv=0):
        x = np.asarray(x, dtype=float)
        E = self._table(x)
        v = (E @ (self.c * ((1j * self.k) ** deriv)[:, None])).real
        return v[..., 0], v[..., 1]


def _evaluator(m):
    return _TorusEval(m) if _family(m) == "torus" else _WarpedEval(m)


def _split_warped(V):
    x = V[:, 0]
    W = V[:, 1:]
    r = np.linalg.norm(W, axis=1)
    return x, W, r, W / r[:, None]


_GL_X, _GL_W = np.polynomial.legendre.leggauss(3)
_GL_S = 0.5 * (_GL_X + 1)
_GL_W = 0.5 * _GL_W


def _segment_lengths(c: LoopPolyline, ev):
    """Length of every straight segment, by 3-point Gauss quadrature.

    Warped segments move linearly in ``x`` and along the great-circle arc
    between their sphere points.
    """
    D = c.segments()
    V = c.vertices
    if isinstance(ev, _TorusEval):
        nd = np.linalg.norm(D, axis=1)
        acc = np.zeros(c.N)
        for s, w in zip(_GL_S, _GL_W):
            acc += w * np.exp(ev.u(V + s * D))
        return acc * nd
    x, _, _, th = _split_warped(c.closed_vertices())
    dth = np.linalg.norm(np.diff(th, axis=0), axis=1)
    ang = 2 * np.arcsin(np.clip(dth / 2, 0, 1))
    acc = np.zeros(c.N)
    for s, w in zip(_GL_S, _GL_W):
        phi, psi = ev.at(V[:, 0] + s * D[:, 0])
        acc += w * np.sqrt((phi * D[:, 0]) ** 2 + (psi * ang) ** 2)
    return acc


def loop_length(c: LoopPolyline, m) -> float:
    """Sum of segment lengths with the metric evaluated at segment midpoints."""
    return float(np.sum(_segment_lengths(c, _evaluator(m))))


# ---------------------------------------------------------------------------
# discrete energy and its gradient


def _torus_energy(flat, N, shift, ev):
    V = flat.reshape(N, 2)
    nxt = np.roll(V, -1, axis=0)
    nxt[-1] += shift
    D = nxt - V
    u, gu = ev.u(V + 0.5 * D, grad=True)
    w = np.exp(2 * u)
    d2 = np.sum(D * D, axis=1)
    E = N * np.sum(w * d2)
    curv = (d2 * w)[:, None] * gu.T
    A = -2 * w[:, None] * D + curv
    B = 2 * w[:, None] * D + curv
    G = N * (A + np.roll(B, 1, axis=0))
    return E, G.ravel()


def _warped_energy(flat, N, shift, ev):
    V = flat.reshape(N, -1)
    x, W, r, th = _split_warped(V)
    xn = np.roll(x, -1)
    xn[-1] += shift[0]
    dx = xn - x
    dth = np.roll(th, -1, axis=0) - th
    xm = x + 0.5 * dx
    phi, psi = ev.at(xm)
    dphi, dpsi = ev.at(xm, 1)
    a2 = np.sum(dth * dth, axis=1)
    E = N * np.sum(phi**2 * dx**2 + psi**2 * a2)
    # d/dx_i: segment i (start) and segment i-1 (end)
    half = phi * dphi * dx**2 + psi * dpsi * a2
    gx = N * ((-2 * phi**2 * dx + half) + np.roll(2 * phi**2 * dx + half, 1))
    gth = N * (-2 * (psi**2)[:, None] * dth + np.roll(2 * (psi**2)[:, None] * dth, 1, axis=0))
    gth -= np.sum(gth * th, axis=1)[:, None] * th
    gW = gth / r[:, None]
    return E, np.column_stack([gx, gW]).ravel()


def _energy_fn(c, m, ev):
    f = _torus_energy if _family(m) == "torus" else _warped_energy
    return lambda z: f(z, c.N, c.shift, ev)


def geodesic_residual(c: LoopPolyline, m, ev=None) -> float:
    """Largest discrete turning defect per vertex (dimensionless).

    Zero exactly at critical points of the discrete energy.
    """
    ev = ev or _evaluator(m)
    _, G = _energy_fn(c, m, ev)(c.vertices.ravel())
    N = c.N
    s = np.sum(_segment_lengths(c, ev)) / N
    G = G.reshape(N, -1)
    if isinstance(ev, _TorusEval):
        rho = np.exp(ev.u(c.vertices))
        g = np.linalg.norm(G, axis=1) / rho
    else:
        x, W, r, th = _split_warped(c.vertices)
        phi, psi = ev.at(x)
        g = np.sqrt((G[:, 0] / phi) ** 2 + np.sum((G[:, 1:] * r[:, None]) ** 2, axis=1) / psi**2)
    return float(np.max(g) / (2 * N * s))


# ---------------------------------------------------------------------------
# construction and shortening


def straight_loop(winding: WindingClass, m, N=128, base=None, theta=None) -> LoopPolyline:
    """Straight loop from ``base`` to its translate (warped: an x-circle)."""
    if winding.trivial:
        raise ValueError("straight loop needs a nontrivial winding")
    shift = winding.shift(m)
    t = np.arange(N) / N
    if winding.family == "torus":
        b = np.zeros(2) if base is None else np.asarray(base, dtype=float)
        V = b + np.outer(t, shift)
    else:
        x0 = 0.0 if base is None else float(base)
        th = np.zeros(m.n) if theta is None else np.asarray(theta, dtype=float)
        if theta is None:
            th[0] = 1.0
        V = np.column_stack([x0 + t * shift[0], np.tile(th / np.linalg.norm(th), (N, 1))])
    return LoopPolyline(V, winding, shift)


def shorten_loop(c: LoopPolyline, m, tol=1e-8, maxiter=20000, rtol_length=1e-9) -> LoopPolyline:
    """Minimize the discrete energy from ``c``; returns a discrete geodesic.

    Runs L-BFGS until the geodesic residual is at most ``tol`` or the length
    decreases by less than ``rtol_length`` between restarts.
    """
    if c.winding.trivial:
        raise ValueError("trivial winding: loops collapse, nothing to shorten")
    ev = _evaluator(m)
    f = _energy_fn(c, m, ev)
    z = c.vertices.ravel().copy()
    last = np.inf
    cur = c
    for _ in range(20):
        res = optimize.minimize(
            f, z, jac=True, method="L-BFGS-B",
            options={"maxiter": maxiter, "ftol": 1e-16, "gtol": 1e-14, "maxcor": 20},
        )
        z = res.x
        V = z.reshape(c.N, -1)
        if c.winding.family == "warped":
            _, W, r, _ = _split_warped(V)
            V = np.column_stack([V[:, 0], W / r[:, None]])
            z = V.ravel()
        cur = LoopPolyline(V, c.winding, c.shift)
        L = loop_length(cur, m)
        if L < 1e-10:
            raise ValueError("loop collapsed to a point")
        if geodesic_residual(cur, m, ev) <= tol or last - L < rtol_length * L:
            break
        last = L
    return cur


@dataclass
class MinLengthResult:
    value: float
    loop: LoopPolyline
    shorten_value: float
    oracle_value: Optional[float]
    residual: float
    candidates: List[float] = field(default_factory=list)

    @property
    def discrepancy(self):
        if self.oracle_value is None:
            return None
        return (self.oracle_value - self.shorten_value) / self.shorten_value

    @property
    def flagged(self):
        d = self.discrepancy
        return d is not None and abs(d) > 0.05


def _starts(winding, m, N, multistart, seed):
    rng = np.random.default_rng(seed)
    out = []
    if winding.family == "torus":
        g = m.grid
        shift = winding.shift(m)
        nrm = np.array([-shift[1], shift[0]]) / np.linalg.norm(shift)
        # transversal period along the normal direction
        span = abs(nrm[0]) * g.lx + abs(nrm[1]) * g.ly
        n_axis = max(1, min(4, multistart))
        t = np.arange(N) / N
        for j in range(n_axis):
            c = straight_loop(winding, m, N, base=nrm * span * j / n_axis)
            # straight lines are often symmetric saddles; a tiny wiggle lets the descent leave them
            wig = 1e-3 * span * np.sin(2 * np.pi * t + j)
            out.append(LoopPolyline(c.vertices + np.outer(wig, nrm), winding, shift))
        for _ in range(multistart - n_axis):
            base = rng.uniform(0, 1, 2) * (g.lx, g.ly)
            c = straight_loop(winding, m, N, base=base)
            amp = 0.2 * span * rng.uniform(0.2, 1.0)
            wig = amp * np.sin(2 * np.pi * rng.integers(1, 4) * t + rng.uniform(0, 2 * np.pi))
            out.append(LoopPolyline(c.vertices + np.outer(wig, nrm), winding, shift))
    else:
        n_axis = 1
        out.append(straight_loop(winding, m, N))
        t = np.arange(N) / N
        for _ in range(multistart - n_axis):
            c = straight_loop(winding, m, N, base=rng.uniform(0, m.period))
            V = c.vertices.copy()
            bump = rng.standard_normal(m.n) * 0.3
            V[:, 1:] += np.outer(np.sin(2 * np.pi * t * rng.integers(1, 3)), bump)
            out.append(LoopPolyline(V, winding, c.shift))
    return out


def _prefer_radial(c, m, tol):
    """Swap a warped loop for its x-circle shadow when that is not longer.

    Dropping the sphere motion never lengthens a curve, so the shadow is the
    better representative; this only removes discretization-level noise.
    """
    V = c.vertices.copy()
    th = V[0, 1:] / np.linalg.norm(V[0, 1:])
    if np.max(np.abs(V[:, 1:] - th)) < 1e-12:
        return c
    V[:, 1:] = th
    p = shorten_loop(LoopPolyline(V, c.winding, c.shift), m, tol=tol)
    if loop_length(p, m) <= loop_length(c, m) * (1 + 1e-9):
        return p
    return c


def min_length(
    winding: WindingClass, m, multistart=8, N=128, oracle=True, seed=0, extra_starts=(), tol=1e-8
) -> MinLengthResult:
    """``inf`` of length over the class, estimated by multistart shortening.

    With ``oracle`` set, :func:`dijkstra_cover_oracle` provides an independent
    upper bound; the smaller of the two is returned.
    """
    if winding.trivial:
        raise ValueError("min_length needs a nontrivial winding")
    starts = list(extra_starts) + _starts(winding, m, N, multistart, seed)
    best, bestL, cands = None, np.inf, []
    for c in starts:
        s = shorten_loop(c, m, tol=tol)
        if winding.family == "warped":
            s = _prefer_radial(s, m, tol)
        L = loop_length(s, m)
        cands.append(L)
        # ties go to the earlier (axis-aligned) start
        if L < bestL * (1 - 1e-10):
            best, bestL = s, L
    ov = dijkstra_cover_oracle(winding, m) if oracle else None
    value = bestL if ov is None else min(bestL, ov)
    return MinLengthResult(value, best, bestL, ov, geodesic_residual(best, m), cands)


# ---------------------------------------------------------------------------
# lattice oracle

_STENCIL = [(1, 0), (0, 1), (1, 1), (1, -1), (1, 2), (2, 1), (1, -2), (2, -1)]


def _lattice_graph(nx_w, ny_w, weights):
    """Undirected 16-neighbour graph on an ``nx_w x ny_w`` window.

    ``weights[k]`` is an ``(nx_w, ny_w)`` array of edge weights for stencil
    offset ``k`` starting at each node.
    """
    idx = np.arange(nx_w * ny_w).reshape(nx_w, ny_w)
    rows, cols, vals = [], [], []
    for (a, b), w in zip(_STENCIL, weights):
        i0, i1 = 0, nx_w - a
        j0, j1 = max(0, -b), ny_w - max(0, b)
        src = idx[i0:i1, j0:j1]
        dst = idx[i0 + a:i1 + a, j0 + b:j1 + b]
        rows.append(src.ravel())
        cols.append(dst.ravel())
        vals.append(w[i0:i1, j0:j1].ravel())
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    n = nx_w * ny_w
    return sparse.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()


def dijkstra_cover_oracle(
    winding: WindingClass, m, k_copies=1, refinement=1, source_stride=4, max_edges=8_000_000
) -> float:
    """Shortest lattice loop in the class, an upper bound for the true ``inf``.

    Paths live on a 16-neighbour lattice in a window of the universal cover.
    Edge weights integrate the metric along each straight edge with
    Simpson's rule.  Lattice paths overestimate straight directions outside
    the stencil by at most :data:`STENCIL_BIAS`.
    """
    if winding.trivial:
        raise ValueError("oracle needs a nontrivial winding")
    if winding.family == "torus":
        return _torus_oracle(winding, m, k_copies, refinement, source_stride, max_edges)
    return _warped_oracle(winding, m, k_copies, refinement, max_edges)


def _check_budget(n_nodes, max_edges, refinement):
    edges = 8 * n_nodes
    if edges > max_edges:
        sug = max(1, int(refinement * math.sqrt(max_edges / edges)))
        raise MemoryError(
            f"lattice needs {edges} edges (cap {max_edges}); use refinement <= {sug}"
        )


def _torus_oracle(winding, m, k_copies, refinement, source_stride, max_edges):
    g = m.grid
    p, q = winding.p, winding.q
    swap = p == 0
    if swap:
        # reflect so that the class has a nonzero first component
        p, q = q, p
    nxl, nyl = g.nx * refinement, g.ny * refinement
    lx, ly = (g.ly, g.lx) if swap else (g.lx, g.ly)
    if swap:
        nxl, nyl = nyl, nxl
    hx, hy = lx / nxl, ly / nyl
    sp, sq = (1 if p > 0 else -1), (1 if q >= 0 else -1)
    ap, aq = abs(p), abs(q)
    mx = max(2, int(0.25 * nxl * k_copies))
    my = max(2, int(0.25 * nyl * k_copies))
    nx_w = ap * nxl + 2 * mx + 1
    ny_w = aq * nyl + nyl + 2 * my
    _check_budget(nx_w * ny_w, max_edges, refinement)
    f = m.interpolant()

    def rho(X, Y):
        # window coordinates -> physical coordinates (undo reflections)
        X = sp * X
        Y = sq * Y
        if swap:
            X, Y = Y, X
        return np.exp(f(X.ravel(), Y.ravel())).reshape(X.shape)

    I = (np.arange(nx_w) - mx) * hx
    J = (np.arange(ny_w) - my) * hy
    X, Y = np.meshgrid(I, J, indexing="ij")
    r0 = rho(X, Y)
    weights = []
    for a, b in _STENCIL:
        ex, ey = a * hx, b * hy
        rm = rho(X + 0.5 * ex, Y + 0.5 * ey)
        r1 = np.roll(np.roll(r0, -a, 0), -b, 1)
        weights.append(math.hypot(ex, ey) * (r0 + 4 * rm + r1) / 6.0)
    G = _lattice_graph(nx_w, ny_w, weights)
    idx = np.arange(nx_w * ny_w).reshape(nx_w, ny_w)
    js = np.arange(my, my + nyl, max(1, source_stride))
    src = idx[mx, js]
    dst = idx[mx + ap * nxl, js + aq * nyl]
    D = csgraph.dijkstra(G, directed=False, indices=src)
    return float(np.min(D[np.arange(src.size), dst]))


def _warped_oracle(winding, m, k_copies, refinement, max_edges):
    k = abs(winding.p)
    nxl = m.nx * refinement
    hx = m.period / nxl
    ev = _WarpedEval(m)
    htheta = hx * float(np.mean(m.phi) / np.mean(m.psi))
    nth = int(math.ceil(0.5 * math.pi / htheta))
    mx = max(2, int(0.25 * nxl * k_copies))
    nx_w = k * nxl + 2 * mx + 1
    ny_w = 2 * nth + 1
    _check_budget(nx_w * ny_w, max_edges, refinement)
    X = (np.arange(nx_w) - mx) * hx
    T = (np.arange(ny_w) - nth) * htheta

    def pp(x):
        a, b = ev.at(x)
        return a, b

    weights = []
    for a, b in _STENCIL:
        ex, et = a * hx, b * htheta
        vals = []
        for xs in (X, X + 0.5 * ex, X + ex):
            ph, ps = pp(xs)
            vals.append(np.sqrt((ph * ex) ** 2 + (ps * et) ** 2))
        w1 = (vals[0] + 4 * vals[1] + vals[2]) / 6.0
        weights.append(np.repeat(w1[:, None], ny_w, axis=1))
    G = _lattice_graph(nx_w, ny_w, weights)
    idx = np.arange(nx_w * ny_w).reshape(nx_w, ny_w)
    D = csgraph.dijkstra(G, directed=False, indices=[idx[mx, nth]])
    return float(D[0, idx[mx + k * nxl, nth]])


# ---------------------------------------------------------------------------
# stable norm


def stable_norm(winding: WindingClass, m, k_max=8, base: Optional[MinLengthResult] = None, tol=1e-8):
    """``l(k Gamma) / k`` for ``k <= k_max`` and the estimate ``m_g = min_k``.

    Each multiple is shortened from the ``k``-fold cover of the class
    minimizer, so ``l(k Gamma) <= k l(Gamma)`` up to solver tolerance.
    """
    if k_max < 4:
        raise ValueError("k_max must be at least 4")
    if base is None:
        base = min_length(winding, m, oracle=False, tol=tol)
    vals = {1: base.shorten_value}
    loops = {1: base.loop}
    for k in range(2, k_max + 1):
        s = shorten_loop(base.loop.cover(k), m, tol=tol)
        vals[k] = min(loop_length(s, m), k * base.shorten_value)
        loops[k] = s
    ratios = {k: v / k for k, v in vals.items()}
    return {"lengths": vals, "values": ratios, "estimate": min(ratios.values()), "loops": loops}


# ---------------------------------------------------------------------------
# frames


@dataclass
class GeodesicFrame:
    """Orthonormal frame along a loop, in orthonormal-coframe components.

    ``tangent`` is the unit tangent per vertex (``e_n = V``), ``normals`` has
    shape ``(N, n - 1, d)``.  ``rotation_rate`` is the constant rate at which
    the holonomy defect is spread over the loop, ``holonomy`` the measured
    defect angle and ``defect`` the largest pointwise departure of the
    stored frame from the uniformly corrected parallel transport.
    """

    tangent: np.ndarray
    segment_tangent: np.ndarray
    normals: np.ndarray
    rotation_rate: float
    holonomy: float
    defect: float
    length: float
    ds: np.ndarray

    def orthonormality_error(self):
        F = np.concatenate([self.normals, self.tangent[:, None, :]], axis=1)
        G = np.einsum("nid,njd->nij", F, F)
        return float(np.abs(G - np.eye(F.shape[1])).max())

    @property
    def certified(self):
        return self.rotation_rate * self.length <= abs(self.holonomy) + 1e-9 and self.defect < 1e-6


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def build_frame(c: LoopPolyline, m, tol=1e-6) -> GeodesicFrame:
    """Frame ``(e_1, ..., e_{n-1}, V)`` along a discrete geodesic.

    Torus: the normal ``J V`` compared against discrete parallel transport.
    The transport angle per vertex is the turning angle forced by the
    discrete geodesic equation, so a critical point of the energy has zero
    holonomy defect.  Warped: only x-circles at a fixed sphere point, where
    the sphere directions scaled by ``1 / psi`` are parallel.
    """
    ev = _evaluator(m)
    res = geodesic_residual(c, m, ev)
    if res > tol:
        raise ValueError(f"input is not a geodesic (residual {res:.2e} > {tol:.1e})")
    ds = _segment_lengths(c, ev)
    L = float(ds.sum())
    if isinstance(ev, _TorusEval):
        return _torus_frame(c, ev, ds, L)
    return _warped_frame(c, m, ev, ds, L)


def _torus_frame(c, ev, ds, L):
    D = c.segments()
    u, gu = ev.u(c.vertices + 0.5 * D, grad=True)
    w = np.exp(2 * u)
    nd = np.linalg.norm(D, axis=1)
    T = D / nd[:, None]
    Tp = np.roll(T, 1, axis=0)
    d2 = nd**2
    Gm = (d2 * w)[:, None] * gu.T
    G = Gm + np.roll(Gm, 1, axis=0)
    a = w * nd
    b = np.roll(a, 1)
    B = T + Tp
    B /= np.linalg.norm(B, axis=1)[:, None]
    Nrm = np.column_stack([-B[:, 1], B[:, 0]])
    dtheta = np.arctan2(Tp[:, 0] * T[:, 1] - Tp[:, 1] * T[:, 0], np.sum(Tp * T, axis=1))
    arg = np.sum(G * Nrm, axis=1) / (2 * (a + b))
    dbeta = 2 * np.arcsin(np.clip(arg, -1, 1))
    r = dtheta - dbeta
    H = float(_wrap(np.sum(r)))
    dsv = 0.5 * (ds + np.roll(ds, 1))
    cum = np.cumsum(r - H * dsv / L)
    return GeodesicFrame(
        tangent=B,
        segment_tangent=T,
        normals=Nrm[:, None, :],
        rotation_rate=abs(H) / L,
        holonomy=H,
        defect=float(np.max(np.abs(cum - cum.mean()))),
        length=L,
        ds=ds,
    )


def _warped_frame(c, m, ev, ds, L):
    x, W, r, th = _split_warped(c.vertices)
    th0 = th.mean(axis=0)
    th0 /= np.linalg.norm(th0)
    if np.max(np.linalg.norm(th - th0, axis=1)) > 1e-6:
        raise ValueError("warped frames are built only for x-circles at a fixed sphere point")
    n = m.n
    # orthonormal basis of the tangent space of the sphere at th0
    Q, _ = np.linalg.qr(np.column_stack([th0, np.eye(n)]))
    basis = Q[:, 1:n].T * np.sign(Q[:, 0] @ th0)
    N = c.N
    d = 1 + n
    tangent = np.zeros((N, d))
    tangent[:, 0] = np.sign(c.shift[0])
    normals = np.zeros((N, n - 1, d))
    normals[:, :, 1:] = basis[None]
    # covariant derivative of e = psi^{-1} d_theta along V = phi^{-1} d_x:
    # d/ds(1/psi) + Gamma^theta_{x theta} (dx/ds) (1/psi), scaled by psi
    phi, psi = ev.at(x)
    _, dpsi = ev.at(x, 1)
    term1 = -dpsi / (psi**2 * phi)
    term2 = (dpsi / psi) * (1 / phi) * (1 / psi)
    rate = float(np.max(np.abs(psi * (term1 + term2))))
    return GeodesicFrame(
        tangent=tangent,
        segment_tangent=tangent.copy(),
        normals=normals,
        rotation_rate=rate,
        holonomy=rate * L,
        defect=0.0,
        length=L,
        ds=ds,
    )


def transport_holonomy(c: LoopPolyline, m, nodes=5) -> float:
    """Holonomy angle of a torus loop by quadrature of the transport ODE.

    In conformal coordinates a parallel vector rotates at rate
    ``x' x grad u`` relative to the coordinate axes; the holonomy is the
    tangent's total turning minus that rotation.  Independent of the
    discrete connection used in :func:`build_frame`.
    """
    if _family(m) != "torus":
        raise ValueError("torus loops only")
    f = m.interpolant()
    D = c.segments()
    xs, wq = np.polynomial.legendre.leggauss(nodes)
    s = 0.5 * (xs + 1)
    beta = 0.0
    for sj, wj in zip(s, wq):
        P = c.vertices + sj * D
        _, gu = f(P[:, 0], P[:, 1], grad=True)
        beta += 0.5 * wj * np.sum(D[:, 0] * gu[1] - D[:, 1] * gu[0])
    T = D / np.linalg.norm(D, axis=1)[:, None]
    Tp = np.roll(T, 1, axis=0)
    turning = np.sum(np.arctan2(Tp[:, 0] * T[:, 1] - Tp[:, 1] * T[:, 0], np.sum(Tp * T, axis=1)))
    return float(_wrap(turning - beta))


# ---------------------------------------------------------------------------
# second variation and length derivative


def _sectional_along(c, m, ev):
    """Sectional curvature of the (tangent, normal) plane at segment midpoints."""
    D = c.segments()
    M = c.vertices + 0.5 * D
    if isinstance(ev, _TorusEval):
        u, _, H = ev.u(M, grad=True, hess=True)
        return -np.exp(-2 * u) * (H[0, 0] + H[1, 1])
    phi, psi = ev.at(M[:, 0])
    dphi, dpsi = ev.at(M[:, 0], 1)
    _, ddpsi = ev.at(M[:, 0], 2)
    psi_ss = (ddpsi - dphi * dpsi / phi) / phi**2
    return -psi_ss / psi


def stability_integral(c: LoopPolyline, frame: GeodesicFrame, X, m) -> float:
    """Discrete ``int (|nabla_V X|^2 - <R(V, X) X, V>) ds``.

    ``X`` holds the normal components of the test field at the vertices,
    shape ``(N,)`` or ``(N, n - 1)``, or is a callable of arclength
    returning that array.  Only x-circles are supported on warped metrics
    (see :func:`build_frame`).
    """
    ev = _evaluator(m)
    ds = frame.ds
    if callable(X):
        s = np.concatenate([[0.0], np.cumsum(ds)[:-1]])
        X = X(s)
    f = np.asarray(X, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] != c.N:
        raise ValueError("one set of components per vertex required")
    fn = np.roll(f, -1, axis=0)
    deriv = (fn - f) / ds[:, None]
    fbar2 = 0.5 * np.sum(f * f + fn * fn, axis=1)
    K = _sectional_along(c, m, ev)
    w2 = frame.rotation_rate**2
    return float(np.sum((np.sum(deriv**2, axis=1) + (w2 - K) * fbar2) * ds))


def length_derivative(c: LoopPolyline, m, curv=None) -> float:
    """``-int Rc(V, V) ds`` from grid curvature fields interpolated to midpoints."""
    curv = curv if curv is not None else curvature(m)
    D = c.segments()
    M = c.vertices + 0.5 * D
    ds = _segment_lengths(c, _evaluator(m))
    if _family(m) == "torus":
        g = m.grid
        K = FourierInterpolant2(curv.K, g.lx, g.ly)(M[:, 0], M[:, 1])
        return float(-np.sum(K * ds))
    ev = _WarpedEval(m)
    rs = FourierInterpolant1(curv.rc_ss, m.period)(M[:, 0])
    rp = FourierInterpolant1(curv.rc_sph, m.period)(M[:, 0])
    phi, _ = ev.at(M[:, 0])
    vs2 = np.clip((phi * D[:, 0] / ds) ** 2, 0, 1)
    return float(-np.sum((rs * vs2 + rp * (1 - vs2)) * ds))


def length_derivative_crosscheck(c: LoopPolyline, m, dt=None, curv=None):
    """Compare :func:`length_derivative` with a centered difference along the flow."""
    from .flow import metric_cfl_bound, step_coupled

    if dt is None:
        dt = 0.25 * metric_cfl_bound(m)
    mp, _, _ = step_coupled(m, dt)
    mm, _, _ = step_coupled(m, -dt)
    fd = (loop_length(c, mp) - loop_length(c, mm)) / (2 * dt)
    an = length_derivative(c, m, curv)
    L = loop_length(c, m)
    if _family(m) == "torus":
        h = max(m.grid.hx, m.grid.hy)
    else:
        h = m.h
    budget = 10 * (dt**2 + h**2) * max(1.0, L)
    return {"analytic": an, "finite_difference": fd, "discrepancy": abs(an - fd),
            "budget": budget, "flagged": abs(an - fd) > budget}


# ---------------------------------------------------------------------------
# decay bound along a trace


def decay_bound_check(trace, winding: WindingClass, slack_rel=1e-3, multistart=4, N=128, tol=1e-8):
    """Track ``l(t)^2 + C_eff t`` over the snapshots of ``trace``.

    ``C_eff = (n - 1) max_t (rotation_rate^2 l^2)`` from :func:`build_frame`.
    A violation at snapshot ``k`` is the amount by which the series drops
    below ``max_{j<k} q_j (1 - slack_rel (t_k - t_j))``.
    """
    ells, rates, loops, residuals = [], [], [], []
    prev = None
    for m in trace.snapshots:
        extra = [prev] if prev is not None else []
        r = min_length(winding, m, multistart=multistart, N=N, oracle=False,
                       extra_starts=extra, tol=tol)
        fr = build_frame(r.loop, m, tol=max(1e-6, 10 * r.residual))
        ells.append(r.shorten_value)
        rates.append(fr.rotation_rate)
        loops.append(r.loop)
        residuals.append(r.residual)
        prev = r.loop
    t = np.asarray(trace.times) - trace.times[0]
    ells = np.array(ells)
    rates = np.array(rates)
    n = 2 if trace.family == "torus" else trace.snapshots[0].n
    C_eff = float(np.max((n - 1) * rates**2 * ells**2))
    qv = ells**2 + C_eff * t
    viol = np.zeros_like(qv)
    for k in range(1, qv.size):
        ref = np.max(qv[:k] * (1 - slack_rel * (t[k] - t[:k])))
        viol[k] = ref - qv[k]
    floor = 1e-9 * qv.max()
    with np.errstate(divide="ignore", invalid="ignore"):
        need = np.where(t > 0, (ells[0] ** 2 - ells**2) / t, 0.0)
    return {
        "times": trace.times,
        "lengths": ells,
        "rotation_rates": rates,
        "C_eff": C_eff,
        "C_fit": float(max(0.0, np.max(need))),
        "series": qv,
        "worst_violation": float(viol.max()),
        "violations": [(float(trace.times[k]), float(viol[k])) for k in np.flatnonzero(viol > floor)],
        "loops": loops,
        "residuals": residuals,
        "ok": bool(viol.max() <= floor),
    }


# ---------------------------------------------------------------------------
# fixtures and dumps


def unstable_geodesic_example(n=64, N=128, amp=0.3):
    """Geodesic along the maximum of ``u = amp cos y``: a non-minimizing saddle.

    Returns ``(metric, loop, frame, X)`` with the constant normal field ``X``
    that makes the second variation negative.
    """
    from .geom import PeriodicGrid2

    g = PeriodicGrid2(n, n)
    m = ConformalTorusMetric.from_function(g, lambda x, y: amp * np.cos(y))
    c = straight_loop(WindingClass(1, 0), m, N)
    fr = build_frame(c, m)
    return m, c, fr, np.ones(N)


def write_geodesic_dump(path, entries):
    """CSV with one row per vertex: ``snapshot, t, vertex, coords..., length, residual``.

    ``entries`` is a sequence of ``(t, loop, length, residual)``.
    """
    entries = list(entries)
    d = entries[0][1].vertices.shape[1] if entries else 2
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["snapshot", "t", "vertex"] + [f"c{i}" for i in range(d)] + ["length", "residual"])
        for k, (t, loop, L, res) in enumerate(entries):
            for i, v in enumerate(loop.vertices):
                w.writerow([k, repr(float(t)), i] + [repr(float(a)) for a in v] + [repr(float(L)), repr(float(res))])
