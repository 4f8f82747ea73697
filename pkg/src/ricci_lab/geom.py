"""Metrics and curvature for the two model families.

Two testbeds are supported:

* conformal 2-tori, ``g = exp(2u) (dx^2 + dy^2)`` on a periodic grid;
* warped products on ``S^1 x S^{n-1}``, ``g = phi(x)^2 dx^2 + psi(x)^2 g_can``
  with ``g_can`` the unit round metric.

Curvature conventions
---------------------
Warped Ricci components are reported in an orthonormal frame:

``rc_ss  = Rc(e_s, e_s)    = -(n-1) psi_ss / psi``
``rc_sph = Rc(e_th, e_th)  = -psi_ss / psi + (n-2) (1 - psi_s^2) / psi^2``

where ``s`` is arclength along the circle (``ds = phi dx``).  The coordinate
components are ``Rc_xx = phi^2 rc_ss`` and ``Rc = psi^2 rc_sph g_can`` on the
sphere factor, so Ricci flow reads ``d_t phi = -Rc_xx / phi = -rc_ss phi`` and
``d_t psi = -rc_sph psi``.

``sup_rm`` is the sup over the manifold of the largest absolute sectional
curvature.  The Riemann tensor of both families is diagonal on 2-planes of
the natural frame, so this is the operator norm of the curvature operator.
On a surface it is ``sup |K|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "GeometryError",
    "SingularityImminent",
    "PeriodicGrid2",
    "ConformalTorusMetric",
    "WarpedMetric",
    "CurvatureFields",
    "OracleCurvature",
    "FourierInterpolant1",
    "FourierInterpolant2",
    "dcenter",
    "lap_compact",
    "torus_curvature",
    "gauss_bonnet_integral",
    "warped_derivatives",
    "warped_curvature",
    "curvature",
    "warped_oracle_metric",
    "generic_curvature_oracle",
    "ORACLE_MAX_NODES",
]

# hard cap for generic_curvature_oracle grids
ORACLE_MAX_NODES = 300_000


class GeometryError(ValueError):
    """Invalid metric data."""


class SingularityImminent(Exception):
    """The warped sphere radius dropped below the configured floor.

    This is a flow event, not a failure: integrators catch it and stop.
    """

    def __init__(self, psi_min, floor, index):
        self.psi_min = float(psi_min)
        self.floor = float(floor)
        self.index = int(index)
        super().__init__(
            f"psi_min={self.psi_min:.3e} below floor {self.floor:.3e} at node {self.index}"
        )


# ---------------------------------------------------------------------------
# periodic finite differences


def dcenter(f, h, axis=0):
    """Second-order centered first derivative on a periodic axis."""
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * h)


def lap_compact(f, h, axis=0):
    """Three-point second derivative on a periodic axis."""
    return (np.roll(f, -1, axis=axis) - 2.0 * f + np.roll(f, 1, axis=axis)) / (h * h)


def _check_finite(name, arr):
    bad = ~np.isfinite(arr)
    if bad.any():
        loc = tuple(int(i) for i in np.argwhere(bad)[0])
        raise GeometryError(f"{name} is not finite at index {loc}")


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class PeriodicGrid2:
    """Uniform periodic grid on ``[0, lx) x [0, ly)``.

    Field arrays have shape ``(nx, ny)``; entry ``[i, j]`` sits at
    ``(i * hx, j * hy)``.
    """

    nx: int
    ny: int
    lx: float = 2 * np.pi
    ly: float = 2 * np.pi

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise GeometryError("grid counts must be integers")
        if self.nx < 8 or self.ny < 8:
            raise GeometryError(f"grid too small: {self.nx}x{self.ny} (need >= 8)")
        if not (np.isfinite(self.lx) and np.isfinite(self.ly)) or self.lx <= 0 or self.ly <= 0:
            raise GeometryError("periods must be finite and positive")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def shape(self):
        return (self.nx, self.ny)

    def coords(self):
        """Meshgrid ``(X, Y)`` with ``indexing='ij'``."""
        x = np.arange(self.nx) * self.hx
        y = np.arange(self.ny) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def refined(self, factor=2):
        return PeriodicGrid2(self.nx * factor, self.ny * factor, self.lx, self.ly)


@dataclass(frozen=True, eq=False)
class ConformalTorusMetric:
    """``g = exp(2u) (dx^2 + dy^2)`` on a periodic grid."""

    grid: PeriodicGrid2
    u: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if u.shape != self.grid.shape:
            raise GeometryError(f"u has shape {u.shape}, grid is {self.grid.shape}")
        _check_finite("u", u)
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @classmethod
    def from_function(cls, grid, fn):
        X, Y = grid.coords()
        return cls(grid, np.broadcast_to(fn(X, Y), grid.shape).astype(float))

    @classmethod
    def flat(cls, grid):
        return cls(grid, np.zeros(grid.shape))

    def scaled(self, lam):
        """The metric ``lam * g``."""
        return ConformalTorusMetric(self.grid, self.u + 0.5 * np.log(lam))

    def area(self):
        return float(np.sum(np.exp(2 * self.u)) * self.grid.hx * self.grid.hy)

    def interpolant(self):
        return FourierInterpolant2(self.u, self.grid.lx, self.grid.ly)


@dataclass(frozen=True, eq=False)
class WarpedMetric:
    """``g = phi(x)^2 dx^2 + psi(x)^2 g_can`` on ``S^1 x S^{n-1}``.

    ``phi`` and ``psi`` are sampled at ``x_i = i * period / nx``.
    """

    n: int
    period: float
    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise GeometryError(f"ambient dimension must be an integer >= 3, got {self.n}")
        phi = np.asarray(self.phi, dtype=float)
        psi = np.asarray(self.psi, dtype=float)
        if phi.ndim != 1 or phi.shape != psi.shape:
            raise GeometryError("phi and psi must be 1-d arrays of equal length")
        if phi.size < 8:
            raise GeometryError("need at least 8 nodes on the circle")
        if not np.isfinite(self.period) or self.period <= 0:
            raise GeometryError("period must be finite and positive")
        _check_finite("phi", phi)
        _check_finite("psi", psi)
        if np.any(phi <= 0):
            raise GeometryError(f"phi not positive at node {int(np.argmin(phi))}")
        if np.any(psi <= 0):
            raise GeometryError(f"psi not positive at node {int(np.argmin(psi))}")
        phi.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)

    @property
    def nx(self) -> int:
        return self.phi.size

    @property
    def h(self) -> float:
        return self.period / self.nx

    def x(self):
        return np.arange(self.nx) * self.h

    @classmethod
    def from_functions(cls, n, nx, period, phi_fn, psi_fn):
        x = np.arange(nx) * (period / nx)
        phi = np.broadcast_to(phi_fn(x), x.shape).astype(float)
        psi = np.broadcast_to(psi_fn(x), x.shape).astype(float)
        return cls(n, period, phi, psi)

    def scaled(self, lam):
        r = np.sqrt(lam)
        return WarpedMetric(self.n, self.period, self.phi * r, self.psi * r)

    def circle_length(self):
        """Length of an x-circle at a fixed sphere point, ``∮ phi dx``."""
        return float(np.sum(self.phi) * self.h)


@dataclass
class CurvatureFields:
    """Curvature of a model metric.

    Torus: ``K`` and ``R = 2K``.  Warped: ``rc_ss``, ``rc_sph``, the two
    sectional curvatures ``sec_radial`` (planes containing ``e_s``) and
    ``sec_sphere`` (planes tangent to the sphere factor), and ``R``.
    """

    R: np.ndarray
    sup_rm: float
    K: Optional[np.ndarray] = None
    rc_ss: Optional[np.ndarray] = None
    rc_sph: Optional[np.ndarray] = None
    sec_radial: Optional[np.ndarray] = None
    sec_sphere: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    @property
    def R_min(self):
        return float(np.min(self.R))

    @property
    def R_max(self):
        return float(np.max(self.R))


# ---------------------------------------------------------------------------
# curvature of the model families


def torus_curvature(m: ConformalTorusMetric) -> CurvatureFields:
    """Gauss curvature ``K = -exp(-2u) (u_xx + u_yy)`` by centered differences."""
    g = m.grid
    lap = lap_compact(m.u, g.hx, 0) + lap_compact(m.u, g.hy, 1)
    K = -np.exp(-2 * m.u) * lap
    return CurvatureFields(R=2 * K, K=K, sup_rm=float(np.max(np.abs(K))))


def gauss_bonnet_integral(m: ConformalTorusMetric, K=None):
    """Return ``(int K dA, int |K| dA)``."""
    if K is None:
        K = torus_curvature(m).K
    dA = np.exp(2 * m.u) * m.grid.hx * m.grid.hy
    return float(np.sum(K * dA)), float(np.sum(np.abs(K) * dA))


def warped_derivatives(m: WarpedMetric):
    """Arclength derivatives ``(psi_s, psi_ss)`` on the nodes."""
    h = m.h
    phi, psi = m.phi, m.psi
    psi_x = dcenter(psi, h)
    phi_x = dcenter(phi, h)
    psi_s = psi_x / phi
    # psi_ss = (psi_xx - phi_x psi_x / phi) / phi^2 keeps the compact stencil
    psi_ss = (lap_compact(psi, h) - phi_x * psi_x / phi) / phi**2
    return psi_s, psi_ss


def warped_curvature(m: WarpedMetric, floor: Optional[float] = None) -> CurvatureFields:
    """Closed-form curvature of a warped product, see module docstring.

    If ``floor`` is given and ``min psi < floor``, raises
    :class:`SingularityImminent`.
    """
    if floor is not None and m.psi.min() < floor:
        i = int(np.argmin(m.psi))
        raise SingularityImminent(m.psi[i], floor, i)
    n = m.n
    psi_s, psi_ss = warped_derivatives(m)
    psi = m.psi
    sec_radial = -psi_ss / psi
    sec_sphere = (1.0 - psi_s**2) / psi**2
    rc_ss = (n - 1) * sec_radial
    rc_sph = sec_radial + (n - 2) * sec_sphere
    R = rc_ss + (n - 1) * rc_sph
    sup = np.max(np.abs(sec_radial))
    if n >= 3:
        sup = max(sup, np.max(np.abs(sec_sphere)))
    return CurvatureFields(
        R=R,
        sup_rm=float(sup),
        rc_ss=rc_ss,
        rc_sph=rc_sph,
        sec_radial=sec_radial,
        sec_sphere=sec_sphere,
        extras={"psi_s": psi_s, "psi_ss": psi_ss},
    )


def curvature(m) -> CurvatureFields:
    if isinstance(m, ConformalTorusMetric):
        return torus_curvature(m)
    if isinstance(m, WarpedMetric):
        return warped_curvature(m)
    raise TypeError(f"unsupported metric type {type(m).__name__}")


# ---------------------------------------------------------------------------
# generic oracle


@dataclass
class OracleCurvature:
    """Output of :func:`generic_curvature_oracle`.

    ``riemann[a, b, c, d]`` is ``R^a_{bcd}`` with
    ``R(X,Y)Z = nabla_X nabla_Y Z - nabla_Y nabla_X Z - nabla_[X,Y] Z``.
    """

    christoffel: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray
    metric: np.ndarray

    def riemann_lowered(self):
        return np.einsum("ae...,ebcd...->abcd...", self.metric, self.riemann)

    def sectional(self, a, b):
        """Sectional curvature of the coordinate plane ``(d_a, d_b)``."""
        g = self.metric
        Rl = self.riemann_lowered()
        area2 = g[a, a] * g[b, b] - g[a, b] ** 2
        return Rl[a, b, a, b] / area2


def _deriv(f, h, axis, periodic):
    if periodic:
        return dcenter(f, h, axis)
    return np.gradient(f, h, axis=axis, edge_order=2)


def generic_curvature_oracle(
    g: np.ndarray,
    spacings: Sequence[float],
    periodic: Sequence[bool],
) -> OracleCurvature:
    """Riemann and Ricci tensors of a coordinate metric by finite differences.

    Parameters
    ----------
    g : array, shape ``(d, d, n_1, ..., n_d)``
        Metric components sampled on a uniform coordinate grid.
    spacings : sequence of float
        Grid spacing along each coordinate axis.
    periodic : sequence of bool
        Whether each axis wraps.  Non-periodic axes use second-order
        one-sided stencils at the ends; values within two nodes of a
        non-periodic boundary should not be trusted.

    Notes
    -----
    Desk-scale only: grids above ``ORACLE_MAX_NODES`` nodes are rejected.
    Christoffel symbols and their derivatives are both taken with centered
    differences, so all outputs converge at second order in the spacing.
    """
    g = np.asarray(g, dtype=float)
    d = g.shape[0]
    if g.shape[1] != d or g.ndim != 2 + d:
        raise GeometryError(f"metric array shape {g.shape} is not (d, d, *grid) with d axes")
    if len(spacings) != d or len(periodic) != d:
        raise GeometryError("need one spacing and one periodic flag per axis")
    grid_shape = g.shape[2:]
    if int(np.prod(grid_shape)) > ORACLE_MAX_NODES:
        raise GeometryError(
            f"oracle grid {grid_shape} exceeds {ORACLE_MAX_NODES} nodes"
        )
    gm = np.moveaxis(g, (0, 1), (-2, -1))
    if not np.allclose(gm, np.swapaxes(gm, -1, -2)):
        raise GeometryError("metric not symmetric")
    eig = np.linalg.eigvalsh(gm)
    if np.any(eig <= 0):
        loc = np.unravel_index(int(np.argmin(eig.min(axis=-1))), grid_shape)
        raise GeometryError(f"metric not positive definite at {tuple(int(i) for i in loc)}")
    ginv = np.moveaxis(np.linalg.inv(gm), (-2, -1), (0, 1))

    def D(f, coord, lead):
        return _deriv(f, spacings[coord], lead + coord, periodic[coord])

    # dg[c, a, b] = d_c g_ab
    dg = np.stack([D(g, c, 2) for c in range(d)])
    # Gamma^a_bc = 1/2 g^ad (d_b g_dc + d_c g_db - d_d g_bc)
    low = 0.5 * (
        np.einsum("bdc...->dbc...", dg)
        + np.einsum("cdb...->dbc...", dg)
        - dg
    )
    gam = np.einsum("ad...,dbc...->abc...", ginv, low)
    # dgam[e, a, b, c] = d_e Gamma^a_bc
    dgam = np.stack([D(gam, e, 3) for e in range(d)])
    # R^a_bcd = d_c G^a_db - d_d G^a_cb + G^a_ce G^e_db - G^a_de G^e_cb
    riem = (
        np.einsum("cadb...->abcd...", dgam)
        - np.einsum("dacb...->abcd...", dgam)
        + np.einsum("ace...,edb...->abcd...", gam, gam)
        - np.einsum("ade...,ecb...->abcd...", gam, gam)
    )
    ric = np.einsum("abad...->bd...", riem)
    scal = np.einsum("bd...,bd...->...", ginv, ric)
    return OracleCurvature(christoffel=gam, riemann=riem, ricci=ric, scalar=scal, metric=g)


def warped_oracle_metric(m: WarpedMetric, ntheta=9, theta_range=(1.0, 2.0)):
    """Sample a 3-d warped metric in spherical coordinates for the oracle.

    Only ``n = 3`` is supported: coordinates ``(x, theta, varphi)`` with
    ``g = diag(phi^2, psi^2, psi^2 sin^2 theta)``.  The polar axis is
    non-periodic and kept away from the poles; ``varphi`` is periodic.
    Returns ``(g, spacings, periodic, theta)``.
    """
    if m.n != 3:
        raise GeometryError("oracle sampling implemented for n = 3")
    th = np.linspace(theta_range[0], theta_range[1], ntheta)
    hth = th[1] - th[0]
    nv = 8
    hv = 2 * np.pi / nv
    nx = m.nx
    g = np.zeros((3, 3, nx, ntheta, nv))
    g[0, 0] = (m.phi**2)[:, None, None]
    g[1, 1] = (m.psi**2)[:, None, None]
    g[2, 2] = (m.psi**2)[:, None, None] * (np.sin(th) ** 2)[None, :, None]
    return g, (m.h, hth, hv), (True, False, True), th


# ---------------------------------------------------------------------------
# trigonometric interpolation, used to evaluate metrics off-grid


class FourierInterpolant1:
    """Trigonometric interpolant of a periodic 1-d sample."""

    def __init__(self, f, period, tol=1e-13):
        f = np.asarray(f, dtype=float)
        n = f.size
        c = np.fft.fft(f) / n
        k = 2 * np.pi * np.fft.fftfreq(n, d=period / n)
        keep = np.abs(c) > tol * max(np.abs(c).max(), 1e-300)
        keep[0] = True
        self.c = c[keep]
        self.k = k[keep]

    def __call__(self, x, deriv=0):
        x = np.asarray(x, dtype=float)
        E = np.exp(1j * np.multiply.outer(x, self.k))
        coef = self.c * (1j * self.k) ** deriv
        return (E @ coef).real


class FourierInterpolant2:
    """Trigonometric interpolant of a periodic 2-d sample.

    Modes with negligible coefficients are dropped along each axis, so
    evaluation costs ``O(P * mx * my)`` with ``mx, my`` the retained bands.
    """

    def __init__(self, f, lx, ly, tol=1e-12):
        f = np.asarray(f, dtype=float)
        nx, ny = f.shape
        c = np.fft.fft2(f) / (nx * ny)
        kx = 2 * np.pi * np.fft.fftfreq(nx, d=lx / nx)
        ky = 2 * np.pi * np.fft.fftfreq(ny, d=ly / ny)
        a = np.abs(c)
        thr = tol * max(a.max(), 1e-300)
        rows = a.max(axis=1) > thr
        cols = a.max(axis=0) > thr
        rows[0] = cols[0] = True
        self.c = c[np.ix_(rows, cols)]
        self.kx = kx[rows]
        self.ky = ky[cols]

    def __call__(self, x, y, grad=False, hess=False):
        """Value at points; optionally gradient ``(2, P)`` and Hessian ``(2, 2, P)``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        Ex = np.exp(1j * np.multiply.outer(x, self.kx))
        Ey = np.exp(1j * np.multiply.outer(y, self.ky))
        A = Ex @ self.c
        val = np.sum(A * Ey, axis=1).real
        if not grad and not hess:
            return val
        out = [val]
        ikx, iky = 1j * self.kx, 1j * self.ky
        Ax = (Ex * ikx) @ self.c
        gx = np.sum(Ax * Ey, axis=1).real
        gy = np.sum(A * Ey * iky, axis=1).real
        if grad:
            out.append(np.stack([gx, gy]))
        if hess:
            gxx = np.sum(((Ex * ikx**2) @ self.c) * Ey, axis=1).real
            gxy = np.sum(Ax * Ey * iky, axis=1).real
            gyy = np.sum(A * Ey * iky**2, axis=1).real
            out.append(np.array([[gxx, gxy], [gxy, gyy]]))
        return tuple(out)
