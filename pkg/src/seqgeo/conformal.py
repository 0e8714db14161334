"""Conformal transformations of statistical manifolds.

Transformed tensors, the Weyl-Schouten tensor set with the flatness
criteria, and the two explicit gauge constructions: the affine gauge of a
full family and the quadric-hypersurface gauge of a curved family.
Defining equations are treated as verification targets with registered
closed-form solutions, never as PDEs to be solved numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import expfam, geometry, tensorops as tops
from .errors import (
    GaugeMismatchError,
    GaugeSingularityError,
    UnsupportedShapeError,
)
from .expfam import ExponentialFamily
from .geometry import CurvedFamily
from .tensorops import Point, TensorField, as_coords


@dataclass(frozen=True)
class Gauge:
    """A positive scalar field with its log-gradient.

    ``s`` and ``ds`` (the log-gradient and its derivative matrix) fall
    back to central differences of ``log nu`` when not supplied.
    """

    nu: Callable[[np.ndarray], float]
    s: Callable[[np.ndarray], np.ndarray] | None = None
    ds: Callable[[np.ndarray], np.ndarray] | None = None
    chart: str = "theta"
    name: str = ""

    def nu_at(self, x) -> float:
        v = float(self.nu(as_coords(x)))
        if not np.isfinite(v) or v <= 0.0:
            raise GaugeSingularityError(f"gauge is not positive at {x!r} (value {v!r})")
        return v

    def _log_nu(self, x: np.ndarray) -> float:
        return math.log(self.nu_at(x))

    def s_at(self, x) -> np.ndarray:
        xa = as_coords(x)
        self.nu_at(xa)
        if self.s is not None:
            return np.asarray(self.s(xa), dtype=float)
        return tops.differentiate(self._log_nu, xa, order=1).values

    def ds_at(self, x) -> np.ndarray:
        xa = as_coords(x)
        if self.ds is not None:
            return np.asarray(self.ds(xa), dtype=float)
        if self.s is not None:
            return tops.jacobian(self.s, xa).T  # ds[j, k] = d_j s_k
        return tops.differentiate(self._log_nu, xa, order=2).values


def constant_gauge(value: float, chart: str = "theta") -> Gauge:
    if value <= 0:
        raise GaugeSingularityError("constant gauge must be positive")
    return Gauge(
        nu=lambda x: value,
        s=lambda x: np.zeros_like(x),
        ds=lambda x: np.zeros((x.shape[0], x.shape[0])),
        chart=chart,
        name=f"const({value})",
    )


def exp_linear_gauge(a, chart: str = "theta") -> Gauge:
    """Gauge ``nu = exp(a . x)``; everywhere positive, constant log-gradient."""
    av = np.asarray(a, dtype=float)
    return Gauge(
        nu=lambda x: math.exp(float(av @ x)),
        s=lambda x: av.copy(),
        ds=lambda x: np.zeros((av.shape[0], av.shape[0])),
        chart=chart,
        name="exp-linear",
    )


# ---------------------------------------------------------------------------
# pointwise transformation formulas


def conformal_metric_skewness(
    g: TensorField | np.ndarray,
    t: TensorField | np.ndarray,
    gauge: Gauge,
    at,
) -> tuple[TensorField, TensorField]:
    """Transformed metric and skewness: nu*g and nu*[T + sym(g x s)]."""
    x = as_coords(at)
    nu = gauge.nu_at(x)
    s = gauge.s_at(x)
    gv = np.asarray(g.values if isinstance(g, TensorField) else g, dtype=float)
    tv = np.asarray(t.values if isinstance(t, TensorField) else t, dtype=float)
    sym = (
        np.einsum("ij,k->ijk", gv, s)
        + np.einsum("jk,i->ijk", gv, s)
        + np.einsum("ki,j->ijk", gv, s)
    )
    return (
        TensorField(nu * gv, ("lo", "lo")),
        TensorField(nu * (tv + sym), ("lo",) * 3),
    )


def conformal_connection(
    gamma: TensorField | np.ndarray,
    g: TensorField | np.ndarray,
    gauge: Gauge,
    alpha: float,
    at,
) -> TensorField:
    """Transformed alpha-connection components (same chart)."""
    x = as_coords(at)
    nu = gauge.nu_at(x)
    s = gauge.s_at(x)
    gv = np.asarray(g.values if isinstance(g, TensorField) else g, dtype=float)
    cv = np.asarray(gamma.values if isinstance(gamma, TensorField) else gamma, dtype=float)
    plus = 0.5 * (1.0 - alpha) * (
        np.einsum("ki,j->ijk", gv, s) + np.einsum("kj,i->ijk", gv, s)
    )
    minus = 0.5 * (1.0 + alpha) * np.einsum("ij,k->ijk", gv, s)
    return TensorField(nu * (cv + plus - minus), ("lo",) * 3)


def _s_alpha(gv, ginv, gamma_alpha, s, ds, alpha):
    # s^(alpha)_ij, the correction block entering the curvature transform
    pref = 0.5 * (1.0 - alpha)
    if pref == 0.0:
        return np.zeros_like(gv)
    mixed = np.einsum("ijl,lk->ijk", gamma_alpha, ginv)
    nabla = ds - np.einsum("ijk,k->ij", mixed, s)
    s2 = float(s @ ginv @ s)
    return pref * (nabla - pref * np.outer(s, s) + 0.25 * (1.0 + alpha) * s2 * gv)


def conformal_rc_curvature(
    r: TensorField | np.ndarray,
    g: TensorField | np.ndarray,
    gamma_alpha: TensorField | np.ndarray,
    gamma_minus_alpha: TensorField | np.ndarray,
    gauge: Gauge,
    alpha: float,
    at,
) -> TensorField:
    """Transformed alpha-curvature; antisymmetry in the first slots is preserved."""
    x = as_coords(at)
    nu = gauge.nu_at(x)
    s = gauge.s_at(x)
    ds = gauge.ds_at(x)
    gv = np.asarray(g.values if isinstance(g, TensorField) else g, dtype=float)
    rv = np.asarray(r.values if isinstance(r, TensorField) else r, dtype=float)
    ga = np.asarray(gamma_alpha.values if isinstance(gamma_alpha, TensorField) else gamma_alpha, dtype=float)
    gm = np.asarray(
        gamma_minus_alpha.values if isinstance(gamma_minus_alpha, TensorField) else gamma_minus_alpha,
        dtype=float,
    )
    ginv = tops.invert_matrix(gv)
    sa = _s_alpha(gv, ginv, ga, s, ds, alpha)
    sma = _s_alpha(gv, ginv, gm, s, ds, -alpha)
    vals = nu * (
        rv
        - np.einsum("il,jk->ijkl", gv, sa)
        + np.einsum("jl,ik->ijkl", gv, sa)
        - np.einsum("jk,il->ijkl", gv, sma)
        + np.einsum("ik,jl->ijkl", gv, sma)
    )
    return TensorField(vals, ("lo",) * 4)


# ---------------------------------------------------------------------------
# chart geometries: bundles of fields a Weyl-Schouten evaluation needs


@dataclass(frozen=True)
class ChartGeometry:
    """Metric, skewness, both unit connections and the (-1)-curvature as fields."""

    dim: int
    metric: Callable[[np.ndarray], np.ndarray]
    skewness: Callable[[np.ndarray], np.ndarray]
    gamma_p1: Callable[[np.ndarray], np.ndarray]
    gamma_m1: Callable[[np.ndarray], np.ndarray]
    rc_m1: Callable[[np.ndarray], np.ndarray]
    name: str = ""


def expfam_chart_geometry(fam: ExponentialFamily) -> ChartGeometry:
    """Theta-chart geometry of a full family (the +1 connection vanishes)."""

    def rc(x):
        return expfam.rc_curvature(
            lambda y: expfam.skewness(fam, y).values,
            lambda y: expfam.metric(fam, Point(y, "theta")).values,
            x,
        ).values

    return ChartGeometry(
        dim=fam.n,
        metric=lambda x: expfam.metric(fam, Point(x, "theta")).values,
        skewness=lambda x: expfam.skewness(fam, x).values,
        gamma_p1=lambda x: np.zeros((fam.n,) * 3),
        gamma_m1=lambda x: expfam.skewness(fam, x).values,
        rc_m1=rc,
        name=fam.name or "expfam",
    )


def curved_chart_geometry(fam: CurvedFamily) -> ChartGeometry:
    """u-chart geometry of a curved family; curvature from the Gauss equation."""

    def skew(x):
        f = geometry.frame_at(fam, x)
        t = expfam.skewness(fam.ambient, fam.theta(x)).values
        return np.einsum("ijk,ai,bj,ck->abc", t, f.tangent_theta, f.tangent_theta, f.tangent_theta)

    return ChartGeometry(
        dim=fam.m,
        metric=lambda x: geometry.induced_metric(fam, x).values,
        skewness=skew,
        gamma_p1=lambda x: geometry.sub_connections(fam, x)[0].values,
        gamma_m1=lambda x: geometry.sub_connections(fam, x)[1].values,
        rc_m1=lambda x: geometry.gauss_curvature(fam, x)[1].values,
        name=fam.name or "curved",
    )


def conformal_chart_geometry(geom: ChartGeometry, gauge: Gauge) -> ChartGeometry:
    """The same chart after a conformal transformation by ``gauge``."""

    def metric(x):
        return gauge.nu_at(x) * geom.metric(x)

    def skew(x):
        _, tbar = conformal_metric_skewness(geom.metric(x), geom.skewness(x), gauge, x)
        return tbar.values

    def gp1(x):
        return conformal_connection(geom.gamma_p1(x), geom.metric(x), gauge, 1.0, x).values

    def gm1(x):
        return conformal_connection(geom.gamma_m1(x), geom.metric(x), gauge, -1.0, x).values

    def rc(x):
        return conformal_rc_curvature(
            geom.rc_m1(x), geom.metric(x), geom.gamma_m1(x), geom.gamma_p1(x), gauge, -1.0, x
        ).values

    return ChartGeometry(
        dim=geom.dim,
        metric=metric,
        skewness=skew,
        gamma_p1=gp1,
        gamma_m1=gm1,
        rc_m1=rc,
        name=f"{geom.name}|{gauge.name or 'gauge'}",
    )


# ---------------------------------------------------------------------------
# Weyl-Schouten tensors and flatness


@dataclass(frozen=True)
class WeylSchouten:
    """The three (-1)-Weyl-Schouten tensors at a point."""

    w4: TensorField  # W^(-1)l_ijk, last slot contravariant
    w3: TensorField
    w2: TensorField

    def max_residuals(self) -> dict[str, float]:
        return {
            "w4": float(np.abs(self.w4.values).max()),
            "w3": float(np.abs(self.w3.values).max()),
            "w2": float(np.abs(self.w2.values).max()),
        }


def _ricci(geom: ChartGeometry, x: np.ndarray) -> np.ndarray:
    r = geom.rc_m1(x)
    ginv = tops.invert_matrix(geom.metric(x))
    mixed = np.einsum("ijkr,rl->ijkl", r, ginv)
    return np.einsum("lijl->ij", mixed)


def weyl_schouten(geom: ChartGeometry, at, step: float | None = None) -> WeylSchouten:
    """Evaluate the Weyl-Schouten set at one point of the chart."""
    m = geom.dim
    if m < 2:
        raise UnsupportedShapeError("Weyl-Schouten tensors need dim >= 2")
    x = as_coords(at).copy()
    g = geom.metric(x)
    ginv = tops.invert_matrix(g)
    r = geom.rc_m1(x)
    mixed = np.einsum("ijkr,rl->ijkl", r, ginv)
    ric = np.einsum("lijl->ij", mixed)
    eye = np.eye(m)
    w4 = mixed - (
        np.einsum("il,jk->ijkl", eye, ric) - np.einsum("jl,ik->ijkl", eye, ric)
    ) / (m - 1.0)

    h = tops._steps(x, step, tops.STEP_ORDER1)
    dric = np.empty((m, m, m))
    for i in range(m):
        e = np.zeros(m)
        e[i] = h[i]
        dric[i] = (_ricci(geom, x + e) - _ricci(geom, x - e)) / (2.0 * h[i])
    gm1_mixed = np.einsum("ijr,rl->ijl", geom.gamma_m1(x), ginv)
    nabla = (
        dric
        - np.einsum("ijl,lk->ijk", gm1_mixed, ric)
        - np.einsum("ikl,jl->ijk", gm1_mixed, ric)
    )
    w3 = (nabla - nabla.transpose(1, 0, 2)) / (m - 1.0)
    w2 = ric - ric.T
    return WeylSchouten(
        TensorField(w4, ("lo", "lo", "lo", "up")),
        TensorField(w3, ("lo",) * 3),
        TensorField(w2, ("lo", "lo")),
    )


@dataclass(frozen=True)
class FlatnessReport:
    flat: bool
    dim: int
    max_residual: float
    worst_point: np.ndarray
    residuals: dict = field(default_factory=dict)


def flatness_test(geom: ChartGeometry, grid: np.ndarray, tolerance: float = 1e-4) -> FlatnessReport:
    """Conformal flatness verdict over a probe grid.

    The verdict uses the order-4 tensor for dim >= 3 and the pair
    (order-3, order-2) for dim 2, reporting the worst residual and where
    it occurred.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    worst = -1.0
    worst_point = grid[0]
    per = {"w4": 0.0, "w3": 0.0, "w2": 0.0}
    for x in grid:
        ws = weyl_schouten(geom, x)
        res = ws.max_residuals()
        for k in per:
            per[k] = max(per[k], res[k])
        crit = res["w4"] if geom.dim >= 3 else max(res["w3"], res["w2"])
        if crit > worst:
            worst = crit
            worst_point = x
    return FlatnessReport(
        flat=worst <= tolerance,
        dim=geom.dim,
        max_residual=worst,
        worst_point=np.array(worst_point),
        residuals=per,
    )


# ---------------------------------------------------------------------------
# explicit gauges


@dataclass(frozen=True)
class ConformalCoordinates:
    """The flattening coordinate map attached to an explicit gauge."""

    source_chart: str
    forward: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]   # (new, old)
    constants: dict
    hessian: Callable[[np.ndarray], np.ndarray] | None = None  # (new, old, old)
    inverse: Callable | None = None                # inverse(new, guess) -> old
    phi_bar: Callable | None = None
    psi_bar: Callable | None = None                # psi_bar(xi, guess) -> float

    def hessian_at(self, x: np.ndarray) -> np.ndarray:
        if self.hessian is not None:
            return np.asarray(self.hessian(x), dtype=float)
        jac = lambda y: np.asarray(self.jacobian(y), dtype=float).ravel()
        d_new = np.asarray(self.jacobian(x)).shape[0]
        d_old = x.shape[0]
        flat = tops.jacobian(jac, x)  # (new*old, old)
        return flat.reshape(d_new, d_old, d_old)


def expfam_gauge(
    fam: ExponentialFamily,
    c0: float,
    c,
    d,
    dmat,
) -> tuple[Gauge, ConformalCoordinates]:
    """Affine gauge and flattening coordinates of a full family.

    ``nu = 1/|c0 + c.eta|`` with the map ``h = nu (d + D eta)``; ``D``
    must have rank n. The returned gauge lives on the eta chart; use
    :func:`expfam_gauge_on_theta` for the same gauge as a field over theta.
    """
    cv = np.asarray(c, dtype=float)
    dv = np.asarray(d, dtype=float)
    dm = np.atleast_2d(np.asarray(dmat, dtype=float))
    if np.linalg.matrix_rank(dm) < fam.n:
        raise UnsupportedShapeError("coordinate matrix D must have full rank")

    def denom(eta):
        b = c0 + float(cv @ eta)
        if abs(b) < 1e-300:
            raise GaugeSingularityError("affine gauge denominator crosses zero")
        return b

    def nu(eta):
        return 1.0 / abs(denom(eta))

    def s(eta):
        return -cv / denom(eta)

    def ds(eta):
        b = denom(eta)
        return np.outer(cv, cv) / b**2

    gauge = Gauge(nu=nu, s=s, ds=ds, chart="eta", name="affine")

    def forward(eta):
        return nu(eta) * (dv + dm @ eta)

    def jac(eta):
        b = denom(eta)
        n = nu(eta)
        dnu = -np.sign(b) * cv / b**2
        return np.outer(dv + dm @ eta, dnu) + n * dm

    def inverse(h, guess):
        return tops.newton_solve(forward, h, Point(as_coords(guess), "eta"), tol=1e-12).coords

    def phi_bar(h, guess):
        eta = inverse(h, guess)
        pair = expfam.theta_of_eta(fam, eta, guess=eta)
        return nu(eta) * pair.phi_value

    def psi_bar(xi, guess_h, guess_eta):
        xiv = as_coords(xi)
        grad = lambda h: tops.differentiate(
            lambda y: phi_bar(y, guess_eta), h, order=1
        ).values
        h = tops.newton_solve(grad, xiv, Point(as_coords(guess_h), "eta"), tol=1e-9).coords
        return float(xiv @ h) - phi_bar(h, guess_eta), h

    coords = ConformalCoordinates(
        source_chart="eta",
        forward=forward,
        jacobian=jac,
        constants={"c0": c0, "c": cv, "d": dv, "D": dm},
        inverse=inverse,
        phi_bar=phi_bar,
        psi_bar=psi_bar,
    )
    return gauge, coords


def expfam_gauge_on_theta(fam: ExponentialFamily, c0: float, c) -> Gauge:
    """The affine gauge pulled back to the theta chart, with analytic log-gradient."""
    cv = np.asarray(c, dtype=float)

    def denom(theta):
        eta = expfam.eta_of_theta(fam, theta).coords
        b = c0 + float(cv @ eta)
        if abs(b) < 1e-300:
            raise GaugeSingularityError("affine gauge denominator crosses zero")
        return b

    def nu(theta):
        return 1.0 / abs(denom(theta))

    def s(theta):
        g = expfam.metric(fam, Point(theta, "theta")).values
        return -(g @ cv) / denom(theta)

    def ds(theta):
        b = denom(theta)
        g = expfam.metric(fam, Point(theta, "theta")).values
        t = expfam.skewness(fam, theta).values
        a = g @ cv
        return -np.einsum("ijk,i->jk", t, cv) / b + np.outer(a, a) / b**2

    return Gauge(nu=nu, s=s, ds=ds, chart="theta", name="affine|theta")


def quadric_gauge(
    fam: CurvedFamily,
    eta0,
    dmat,
    grid: np.ndarray,
    gauge: Gauge | None = None,
    pde_tolerance: float = 1e-6,
) -> tuple[Gauge, ConformalCoordinates]:
    """Gauge and flattening coordinates of a dual quadric hypersurface.

    The gauge must be registered on the family (or passed in); its
    defining equation is verified on the probe grid and a
    :class:`GaugeMismatchError` is raised when the residual exceeds
    ``pde_tolerance``. The coordinate map scales selected mean
    coordinates by the gauge.
    """
    gauge = gauge or fam.registered_gauge
    if gauge is None:
        raise GaugeMismatchError("no registered gauge for this family")
    cls = geometry.classify(fam, grid)
    if not cls.dual_quadric:
        raise UnsupportedShapeError(
            f"family is not a dual quadric hypersurface (residual {cls.dual_quadric_residual:.3e})"
        )
    k0l0 = cls.k0 * cls.l0
    res = gauge_pde_residual(fam, gauge, k0l0, grid)
    if res > pde_tolerance:
        raise GaugeMismatchError(
            f"gauge equation residual {res:.3e} exceeds tolerance {pde_tolerance:.1e}"
        )

    e0 = np.asarray(eta0, dtype=float)
    dm = np.atleast_2d(np.asarray(dmat, dtype=float))
    if np.linalg.matrix_rank(dm) < fam.m:
        raise UnsupportedShapeError("coordinate matrix D must have rank m")

    def forward(u):
        return gauge.nu_at(u) * (dm @ (fam.eta(u) - e0))

    def jac(u):
        nu = gauge.nu_at(u)
        s = gauge.s_at(u)
        f = geometry.frame_at(fam, u)
        base = dm @ (fam.eta(u) - e0)
        return nu * (np.outer(base, s) + dm @ f.tangent_eta.T)

    def inverse(ubar, guess):
        return tops.newton_solve(forward, ubar, Point(as_coords(guess), "u"), tol=1e-12).coords

    def phi_bar(ubar, guess):
        u = inverse(ubar, guess)
        return gauge.nu_at(u) / k0l0

    coords = ConformalCoordinates(
        source_chart="u",
        forward=forward,
        jacobian=jac,
        constants={"eta0": e0, "D": dm, "k0": cls.k0, "l0": cls.l0},
        inverse=inverse,
        phi_bar=phi_bar,
    )
    return gauge, coords


def gauge_pde_residual(fam: CurvedFamily, gauge: Gauge, k0l0: float, grid: np.ndarray) -> float:
    """Max-norm residual of the quadric gauge equation over a grid."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    worst = 0.0
    for u in grid:
        s = gauge.s_at(u)
        ds = gauge.ds_at(u)
        g = geometry.induced_metric(fam, u).values
        ginv = tops.invert_matrix(g)
        _, gm1 = geometry.sub_connections(fam, u)
        mixed = np.einsum("abd,dc->abc", gm1.values, ginv)
        lhs = ds - np.einsum("abc,c->ab", mixed, s) - np.outer(s, s)
        worst = max(worst, float(np.abs(lhs - k0l0 * g).max()))
    return worst


def conformal_sub_quantities(
    fam: CurvedFamily,
    gauge: Gauge,
    u,
    s_kappa: np.ndarray | None = None,
) -> tuple[TensorField, TensorField, TensorField]:
    """Transformed (-1)-connection, transformed 1-extrinsic curvature, and
    the conformal 1-extrinsic curvature of the submanifold.

    ``s_kappa`` defaults to the mean extrinsic curvature, the choice that
    kills the transformed extrinsic curvature on totally umbilic families.
    """
    ua = as_coords(u)
    nu = gauge.nu_at(ua)
    s = gauge.s_at(ua)
    g = geometry.induced_metric(fam, ua).values
    ginv = tops.invert_matrix(g)
    _, gm1 = geometry.sub_connections(fam, ua)
    h1, _ = geometry.es_curvature(fam, ua)
    hk = np.einsum("abk,ab->k", h1.values, ginv) / fam.m
    if s_kappa is None:
        s_kappa = hk
    s_kappa = np.atleast_1d(np.asarray(s_kappa, dtype=float))

    gamma_bar = nu * (
        gm1.values + np.einsum("ca,b->abc", g, s) + np.einsum("cb,a->abc", g, s)
    )
    h1_bar = nu * (h1.values - np.einsum("ab,k->abk", g, s_kappa))
    k1 = h1.values - np.einsum("ab,k->abk", g, hk)
    return (
        TensorField(gamma_bar, ("lo",) * 3),
        TensorField(h1_bar, ("lo",) * 3),
        TensorField(k1, ("lo",) * 3),
    )


def ubar_chart_connection(
    fam: CurvedFamily,
    gauge: Gauge,
    coords: ConformalCoordinates,
    u,
) -> TensorField:
    """Transformed (-1)-connection expressed in the flattening coordinates.

    Verifies the flattening claim: the result should vanish on the whole
    chart for a dual quadric hypersurface with its registered gauge.
    """
    ua = as_coords(u)
    gamma_bar, _, _ = conformal_sub_quantities(fam, gauge, ua)
    nu = gauge.nu_at(ua)
    g_bar = nu * geometry.induced_metric(fam, ua).values

    cmat = np.asarray(coords.jacobian(ua), dtype=float)  # C[p, a] = d ubar^p / d u^a
    hess = coords.hessian_at(ua)                         # hess[p, a, b] = d_a d_b ubar^p
    cinv = np.linalg.inv(cmat)                           # cinv[a, p] = d u^a / d ubar^p
    basis = cinv.T                                       # basis[p, a] = d u^a / d ubar^p
    # d basis[q, b] / d ubar^p, by differentiating the inverse matrix through u
    dbasis = -np.einsum("pe,bm,mea,aq->pqb", basis, cinv, hess, cinv)
    return expfam.connection_coordinate_change(gamma_bar, basis, dbasis, g_bar)
