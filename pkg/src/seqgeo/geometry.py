"""Curved exponential families: frames, induced geometry, extrinsic curvature.

A ``CurvedFamily`` wraps an embedding ``u -> theta(u)`` into an ambient
family together with optional analytic frame/Hessian callbacks; every
operation falls back to finite differences when a callback is missing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import expfam, tensorops as tops
from .errors import ChartError, UnsupportedShapeError
from .expfam import ExponentialFamily
from .tensorops import TensorField, as_coords

EMBED_CONSISTENCY_TOL = 1e-8


@dataclass(frozen=True)
class CurvedFamily:
    """An m-dimensional submanifold of an n-dimensional ambient family."""

    ambient: ExponentialFamily
    m: int
    embed_theta: Callable[[np.ndarray], np.ndarray]
    embed_eta: Callable[[np.ndarray], np.ndarray] | None = None
    tangent_theta: Callable[[np.ndarray], np.ndarray] | None = None
    tangent_eta: Callable[[np.ndarray], np.ndarray] | None = None
    normal_theta: Callable[[np.ndarray], np.ndarray] | None = None
    normal_eta: Callable[[np.ndarray], np.ndarray] | None = None
    hess_theta: Callable[[np.ndarray], np.ndarray] | None = None
    hess_eta: Callable[[np.ndarray], np.ndarray] | None = None
    domain: Callable[[np.ndarray], bool] | None = None
    normal_sign: int = 1
    registered_gauge: Any = None
    name: str = ""

    @property
    def n(self) -> int:
        return self.ambient.n

    @property
    def codim(self) -> int:
        return self.ambient.n - self.m

    @property
    def analytic(self) -> bool:
        return self.tangent_theta is not None and self.hess_theta is not None

    def check_domain(self, u: np.ndarray) -> None:
        if self.domain is not None and not self.domain(u):
            raise ChartError(f"u={u!r} outside the chart domain of {self.name or '<anon>'}")

    def theta(self, u) -> np.ndarray:
        ua = as_coords(u)
        self.check_domain(ua)
        return np.asarray(self.embed_theta(ua), dtype=float)

    def eta(self, u) -> np.ndarray:
        ua = as_coords(u)
        self.check_domain(ua)
        if self.embed_eta is not None:
            return np.asarray(self.embed_eta(ua), dtype=float)
        return expfam.eta_of_theta(self.ambient, self.theta(ua)).coords


@dataclass(frozen=True)
class Frame:
    """Tangent and normal frames at one point of the submanifold."""

    tangent_theta: np.ndarray  # (m, n)  B_a^i
    tangent_eta: np.ndarray    # (m, n)  B_{ai}
    normal_theta: np.ndarray   # (n-m, n)  B_kappa^i
    normal_eta: np.ndarray     # (n-m, n)  B_{kappa i}


@dataclass(frozen=True)
class Classification:
    """Structural classification of a curved family over a probe grid."""

    umbilic: bool
    umbilic_residual: float
    es_epsilon: float
    es_epsilon_residual: float
    dual_quadric: bool
    k0: float
    l0: float
    theta0: np.ndarray
    eta0: np.ndarray
    dual_quadric_residual: float
    quadric_identity_residual: float
    constant_curvature: float
    constant_curvature_residual: float
    tolerance: float


def _tangent_theta(fam: CurvedFamily, u: np.ndarray) -> np.ndarray:
    if fam.tangent_theta is not None:
        return np.asarray(fam.tangent_theta(u), dtype=float)
    return tops.jacobian(fam.embed_theta, u).T  # rows indexed by a


def _tangent_eta(fam: CurvedFamily, u: np.ndarray) -> np.ndarray:
    if fam.tangent_eta is not None:
        return np.asarray(fam.tangent_eta(u), dtype=float)
    return tops.jacobian(fam.eta, u).T


def theta_hessian(fam: CurvedFamily, u) -> np.ndarray:
    """Second derivatives of the natural-parameter embedding, shape (m, m, n)."""
    ua = as_coords(u)
    if fam.hess_theta is not None:
        return np.asarray(fam.hess_theta(ua), dtype=float)
    n = fam.n
    out = np.empty((fam.m, fam.m, n))
    for i in range(n):
        comp = lambda v, i=i: float(fam.embed_theta(v)[i])
        out[:, :, i] = tops.differentiate(comp, ua, order=2).values
    return out


def eta_hessian(fam: CurvedFamily, u) -> np.ndarray:
    """Second derivatives of the mean-parameter embedding, shape (m, m, n)."""
    ua = as_coords(u)
    if fam.hess_eta is not None:
        return np.asarray(fam.hess_eta(ua), dtype=float)
    n = fam.n
    out = np.empty((fam.m, fam.m, n))
    for i in range(n):
        comp = lambda v, i=i: float(fam.eta(v)[i])
        out[:, :, i] = tops.differentiate(comp, ua, order=2).values
    return out


def frame_at(fam: CurvedFamily, u) -> Frame:
    """Tangent rows from the embedding Jacobian plus the bi-orthogonal normal pair.

    The natural-parameter normal solves ``B_kappa^i B_{ai} = 0`` and the
    mean-parameter normal solves ``B_{kappa i} B_a^i = 0``; the pair is
    cross-normalized to ``B_kappa^i B_{kappa i} = identity`` with balanced
    Euclidean lengths. The sign follows the family's registered convention.
    """
    ua = as_coords(u)
    fam.check_domain(ua)
    bt = _tangent_theta(fam, ua)
    be = _tangent_eta(fam, ua)
    if np.linalg.matrix_rank(bt) < fam.m:
        raise ChartError(f"embedding Jacobian is rank deficient at u={ua!r}")
    if fam.normal_theta is not None and fam.normal_eta is not None:
        return Frame(bt, be, np.asarray(fam.normal_theta(ua), dtype=float),
                     np.asarray(fam.normal_eta(ua), dtype=float))

    nt = np.linalg.svd(be)[2][fam.m:]   # complement of the eta-type tangents
    ne = np.linalg.svd(bt)[2][fam.m:]   # complement of the theta-type tangents
    cross = nt @ ne.T
    if abs(np.linalg.det(cross)) < 1e-12:
        raise ChartError("degenerate normal pairing")
    if fam.codim == 1:
        p = float(cross[0, 0])
        scale = math.sqrt(abs(p))
        nt = nt / scale
        ne = np.copysign(1.0, p) * ne / scale
        theta_u = fam.theta(ua)
        orient = float(nt[0] @ theta_u)
        if abs(orient) > 1e-12 * max(1.0, float(np.abs(theta_u).max())):
            flip = orient * fam.normal_sign < 0
        else:
            flip = nt[0, np.argmax(np.abs(nt[0]))] < 0
        if flip:
            nt, ne = -nt, -ne
    else:
        ne = np.linalg.solve(cross, ne)
    return Frame(bt, be, nt, ne)


def induced_metric(fam: CurvedFamily, u) -> TensorField:
    """Pullback of the ambient Fisher metric: g_ab = B_a^i B_b^j g_ij."""
    ua = as_coords(u)
    f = frame_at(fam, ua)
    vals = f.tangent_theta @ f.tangent_eta.T
    vals = 0.5 * (vals + vals.T)
    if np.linalg.eigvalsh(vals).min() <= 0:
        raise ChartError(f"induced metric not positive definite at u={ua!r}")
    return TensorField(vals, ("lo", "lo"))


def normal_metric(fam: CurvedFamily, u) -> np.ndarray:
    f = frame_at(fam, u)
    return f.normal_theta @ f.normal_eta.T


def sub_connections(fam: CurvedFamily, u) -> tuple[TensorField, TensorField]:
    """The +1/-1 connection components of the submanifold chart.

    ``G1_abc = (d_a B_b^j) B_cj`` and ``G-1_abc = (d_a B_bj) B_c^j``.
    """
    ua = as_coords(u)
    f = frame_at(fam, ua)
    ht = theta_hessian(fam, ua)
    he = eta_hessian(fam, ua)
    g1 = np.einsum("abj,cj->abc", ht, f.tangent_eta)
    gm1 = np.einsum("abj,cj->abc", he, f.tangent_theta)
    return TensorField(g1, ("lo",) * 3), TensorField(gm1, ("lo",) * 3)


def es_curvature(fam: CurvedFamily, u) -> tuple[TensorField, TensorField]:
    """Euler-Schouten (extrinsic) curvature pair of the embedding."""
    ua = as_coords(u)
    f = frame_at(fam, ua)
    ht = theta_hessian(fam, ua)
    he = eta_hessian(fam, ua)
    h1 = np.einsum("abj,kj->abk", ht, f.normal_eta)
    hm1 = np.einsum("abj,kj->abk", he, f.normal_theta)
    return TensorField(h1, ("lo",) * 3), TensorField(hm1, ("lo",) * 3)


def gauss_curvature(fam: CurvedFamily, u) -> tuple[TensorField, TensorField]:
    """Curvature of the submanifold from the Gauss equation.

    The ambient family is flat, so the curvature is the antisymmetrized
    product of the two extrinsic curvature tensors.
    """
    ua = as_coords(u)
    h1, hm1 = es_curvature(fam, ua)
    gkk_inv = tops.invert_matrix(normal_metric(fam, ua))
    r1 = np.einsum("adk,bcl,kl->abcd", hm1.values, h1.values, gkk_inv) - np.einsum(
        "bdk,acl,kl->abcd", hm1.values, h1.values, gkk_inv
    )
    rm1 = np.einsum("adk,bcl,kl->abcd", h1.values, hm1.values, gkk_inv) - np.einsum(
        "bdk,acl,kl->abcd", h1.values, hm1.values, gkk_inv
    )
    return TensorField(r1, ("lo",) * 4), TensorField(rm1, ("lo",) * 4)


def direct_rc_curvature(fam: CurvedFamily, u, alpha: int) -> TensorField:
    """Curvature via the intrinsic formula applied to the sub-connection field."""
    if alpha not in (1, -1):
        raise ValueError("alpha must be +1 or -1")
    idx = 0 if alpha == 1 else 1
    gamma_field = lambda x: sub_connections(fam, x)[idx].values
    metric_field = lambda x: induced_metric(fam, x).values
    return expfam.rc_curvature(gamma_field, metric_field, u)


def t_akk(fam: CurvedFamily, u) -> np.ndarray:
    """Ambient skewness contracted once with a tangent and twice with the normal frame."""
    ua = as_coords(u)
    f = frame_at(fam, ua)
    t = expfam.skewness(fam.ambient, fam.theta(ua)).values
    gkk_inv = tops.invert_matrix(normal_metric(fam, ua))
    return np.einsum(
        "ijk,ai,pj,qk,pq->a", t, f.tangent_theta, f.normal_theta, f.normal_theta, gkk_inv
    )


def classify(
    fam: CurvedFamily,
    grid: np.ndarray,
    tolerance: float | None = None,
) -> Classification:
    """Fit the structural constants of the family over a probe grid.

    Least-squares fits: epsilon from the ratio of the two extrinsic
    curvatures, (k0, theta0) and (l0, eta0) from affine regression of the
    normal frames on the embedding, and the curvature constant from the
    constant-curvature pattern. Flags require the corresponding max-norm
    residual to stay within ``tolerance``.
    """
    if tolerance is None:
        tolerance = 1e-6 if fam.analytic else 1e-4
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if fam.codim != 1:
        raise UnsupportedShapeError("dual-quadric classification needs a hypersurface (n = m + 1)")

    h1s, hm1s, gs, frames, thetas, etas, r1s = [], [], [], [], [], [], []
    for u in grid:
        f = frame_at(fam, u)
        h1, hm1 = es_curvature(fam, u)
        g = induced_metric(fam, u).values
        r1, _ = gauss_curvature(fam, u)
        frames.append(f)
        h1s.append(h1.values)
        hm1s.append(hm1.values)
        gs.append(g)
        r1s.append(r1.values)
        thetas.append(fam.theta(u))
        etas.append(fam.eta(u))

    # epsilon: least squares of H^(-1) against H^(1)
    num = sum(float(np.sum(a * b)) for a, b in zip(hm1s, h1s))
    den = sum(float(np.sum(b * b)) for b in h1s)
    eps = num / den if den > 0 else 0.0
    eps_res = max(float(np.abs(a - eps * b).max()) for a, b in zip(hm1s, h1s))

    # umbilicity: H^(1)_abk = H^(1)_k g_ab
    umb_res = 0.0
    for h1, g in zip(h1s, gs):
        ginv = tops.invert_matrix(g)
        hk = np.einsum("abk,ab->k", h1, ginv) / fam.m
        umb_res = max(umb_res, float(np.abs(h1 - np.einsum("k,ab->abk", hk, g)).max()))

    # dual quadric: B_kappa = k0 (theta - theta0), eta analogue
    def affine_fit(rows, points):
        n = fam.n
        a_rows, b_rows = [], []
        for vec, pt in zip(rows, points):
            for i in range(n):
                row = np.zeros(1 + n)
                row[0] = pt[i]
                row[1 + i] = -1.0
                a_rows.append(row)
                b_rows.append(vec[i])
        sol, *_ = np.linalg.lstsq(np.array(a_rows), np.array(b_rows), rcond=None)
        k = float(sol[0])
        base = sol[1:] / k if abs(k) > 1e-8 else np.zeros(n)
        res = max(
            float(np.abs(vec - k * (pt - base)).max()) for vec, pt in zip(rows, points)
        )
        return k, base, res

    k0, theta0, res_k = affine_fit([f.normal_theta[0] for f in frames], thetas)
    l0, eta0, res_l = affine_fit([f.normal_eta[0] for f in frames], etas)
    dq_res = max(res_k, res_l)

    ident_res = 0.0
    if abs(k0) > 1e-8 and abs(l0) > 1e-8:
        target = 1.0 / (k0 * l0)
        ident_res = max(
            abs(float((th - theta0) @ (et - eta0)) - target)
            for th, et in zip(thetas, etas)
        )
    dual_quadric = (
        abs(k0) > 1e-8 and abs(l0) > 1e-8 and dq_res <= tolerance and ident_res <= tolerance
    )

    # constant curvature: R^(1)_abcd = lam (g_ad g_bc - g_ac g_bd)
    num_l = 0.0
    den_l = 0.0
    cc_res = 0.0
    pats = []
    for g in gs:
        pat = np.einsum("ad,bc->abcd", g, g) - np.einsum("ac,bd->abcd", g, g)
        pats.append(pat)
    for r, pat in zip(r1s, pats):
        num_l += float(np.sum(r * pat))
        den_l += float(np.sum(pat * pat))
    lam = num_l / den_l if den_l > 0 else 0.0
    cc_res = max(float(np.abs(r - lam * pat).max()) for r, pat in zip(r1s, pats))

    return Classification(
        umbilic=umb_res <= tolerance,
        umbilic_residual=umb_res,
        es_epsilon=eps,
        es_epsilon_residual=eps_res,
        dual_quadric=dual_quadric,
        k0=k0,
        l0=l0,
        theta0=theta0,
        eta0=eta0,
        dual_quadric_residual=dq_res,
        quadric_identity_residual=ident_res,
        constant_curvature=lam,
        constant_curvature_residual=cc_res,
        tolerance=tolerance,
    )


def chart_grid(ranges: list[tuple[float, float]], count: int, margin: float = 1e-2, seed: int = 7) -> np.ndarray:
    """Deterministic quasi-random probe grid inside a box, away from its edges."""
    rng = np.random.default_rng(seed)
    lo = np.array([a + margin for a, _ in ranges])
    hi = np.array([b - margin for _, b in ranges])
    if np.any(hi <= lo):
        raise ChartError("margin exceeds chart range")
    return lo + (hi - lo) * rng.random((count, len(ranges)))
