"""Concrete families: von Mises-Fisher on the sphere and the hyperboloid
model on Minkowski's unit shell, plus Gaussian/Poisson fixtures.

Both directional models are radial exponential families: the potential
depends on the natural parameter only through a (possibly indefinite)
norm, which gives closed-form analytic derivatives up to third order.
Unit-time samplers are implemented for m = 2, the simulation dimension;
all geometry works for any m >= 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from .conformal import Gauge
from .errors import (
    ChartError,
    EvaluationDomainError,
    GaugeSingularityError,
    MleUndefinedError,
    ParameterError,
    UnsupportedShapeError,
)
from .expfam import ExponentialFamily
from .geometry import CurvedFamily, chart_grid
from .tensorops import as_coords

SUPPORT_TOL = 1e-12
_DOMAIN_SLACK = 1e-3


# ---------------------------------------------------------------------------
# Bessel-ratio mean-resultant functions and their closed-form derivatives


def vmf_mean_resultant(rho: float, m: int) -> float:
    """I_{(m+1)/2}(rho) / I_{(m-1)/2}(rho); increasing, maps (0,inf) to (0,1)."""
    if rho <= 0:
        raise ParameterError("concentration must be positive")
    if m == 2:
        if rho < 1e-3:
            # series of coth(rho) - 1/rho, avoids cancellation near zero
            return rho / 3.0 - rho**3 / 45.0 + 2.0 * rho**5 / 945.0
        return 1.0 / math.tanh(rho) - 1.0 / rho
    nu = 0.5 * (m - 1)
    return float(special.iv(nu + 1.0, rho) / special.iv(nu, rho))


def hyperboloid_mean_resultant(rho: float, m: int) -> float:
    """K_{(m+1)/2}(rho) / K_{(m-1)/2}(rho); decreasing, maps (0,inf) to (inf,1).

    Even m uses the stable upward ratio recurrence from the half-integer
    seed; odd m needs integer-order Bessel values.
    """
    if rho <= 0:
        raise ParameterError("concentration must be positive")
    if m % 2 == 0:
        ratio = 1.0 + 1.0 / rho  # K_{3/2} / K_{1/2}
        nu = 1.5
        while nu <= 0.5 * (m - 1):
            ratio = 1.0 / ratio + 2.0 * nu / rho
            nu += 1.0
        return ratio
    nu = 0.5 * (m - 1)
    return float(special.kv(nu + 1.0, rho) / special.kv(nu, rho))


def _vmf_dag_derivs(rho: float, m: int) -> tuple[float, float, float]:
    d = vmf_mean_resultant(rho, m)
    d1 = 1.0 - (m / rho) * d - d * d
    d2 = (m / rho**2) * d - (m / rho) * d1 - 2.0 * d * d1
    return d, d1, d2


def _hyp_dag_derivs(rho: float, m: int) -> tuple[float, float, float]:
    d = hyperboloid_mean_resultant(rho, m)
    d1 = d * d - (m / rho) * d - 1.0
    d2 = 2.0 * d * d1 - (m / rho) * d1 + (m / rho**2) * d
    return d, d1, d2


# ---------------------------------------------------------------------------
# radial ambient families


def _radial_family(
    n: int,
    signs: np.ndarray,
    fval: Callable[[float], float],
    fderivs: Callable[[float], tuple[float, float, float]],
    domain: Callable[[np.ndarray], bool],
    eta_inverse: Callable[[np.ndarray], np.ndarray] | None,
    name: str,
) -> ExponentialFamily:
    smat = np.diag(signs)

    def rho_of(t: np.ndarray) -> float:
        q = float(np.dot(signs, t * t))
        if q <= 0:
            raise EvaluationDomainError(f"{name}: natural parameter outside the radial domain")
        return math.sqrt(q)

    def psi(t):
        return fval(rho_of(t))

    def grad(t):
        rho = rho_of(t)
        f1, _, _ = fderivs(rho)
        return (f1 / rho) * (signs * t)

    def hess(t):
        rho = rho_of(t)
        f1, f2, _ = fderivs(rho)
        q = signs * t
        a = (f2 - f1 / rho) / rho**2
        return a * np.outer(q, q) + (f1 / rho) * smat

    def third(t):
        rho = rho_of(t)
        f1, f2, f3 = fderivs(rho)
        q = signs * t
        a = (f2 - f1 / rho) / rho**2
        ap = f3 / rho**2 - 3.0 * f2 / rho**3 + 3.0 * f1 / rho**4
        qqq = np.einsum("i,j,k->ijk", q, q, q)
        mix = (
            np.einsum("ij,k->ijk", smat, q)
            + np.einsum("jk,i->ijk", smat, q)
            + np.einsum("ki,j->ijk", smat, q)
        )
        return (ap / rho) * qqq + a * mix

    return ExponentialFamily(
        n=n, psi=psi, grad=grad, hess=hess, third=third,
        domain=domain, eta_inverse=eta_inverse, name=name,
    )


def vmf_family(m: int, fallback_bracket: float = 1e6) -> ExponentialFamily:
    """Ambient family of the von Mises-Fisher model on the m-sphere."""
    n = m + 1
    signs = np.ones(n)
    const = 0.5 * (m + 1) * math.log(2.0 * math.pi)

    if m == 2:
        def fval(rho):
            if rho > 350.0:  # sinh overflows; asymptotic log form
                return math.log(4.0 * math.pi) + rho - math.log(2.0 * rho)
            return math.log(4.0 * math.pi) + math.log(math.sinh(rho) / rho)
    else:
        nu = 0.5 * (m - 1)

        def fval(rho):
            return const + 0.5 * (1 - m) * math.log(rho) + math.log(float(special.iv(nu, rho)))

    fder = lambda rho: _vmf_dag_derivs(rho, m)

    def eta_inverse(eta):
        nrm = float(np.linalg.norm(eta))
        if not 0.0 < nrm < 1.0:
            raise EvaluationDomainError("mean vector must have norm in (0, 1)")
        from scipy.optimize import brentq

        hi = 1.0
        while vmf_mean_resultant(hi, m) < nrm and hi < fallback_bracket:
            hi *= 2.0
        rho = brentq(lambda x: vmf_mean_resultant(x, m) - nrm, 1e-12, hi, xtol=1e-15, rtol=1e-15)
        return (rho / nrm) * eta

    return _radial_family(
        n, signs, fval, fder,
        domain=lambda t: float(np.dot(t, t)) > 1e-16,
        eta_inverse=eta_inverse,
        name=f"vmf-ambient(m={m})",
    )


def hyperboloid_family(m: int) -> ExponentialFamily:
    """Ambient family of the hyperboloid model; natural domain is the past timelike cone."""
    n = m + 1
    signs = np.concatenate(([1.0], -np.ones(n - 1)))

    if m == 2:
        def fval(rho):
            return math.log(2.0 * math.pi) - rho - math.log(rho)
    else:
        nu = 0.5 * (m - 1)
        const = math.log(2.0) + 0.5 * (m - 1) * math.log(2.0 * math.pi)

        def fval(rho):
            return const + 0.5 * (1 - m) * math.log(rho) + math.log(float(special.kv(nu, rho)))

    def fder(rho):
        d, d1, d2 = _hyp_dag_derivs(rho, m)
        return -d, -d1, -d2  # potential decreases in the radial direction

    def domain(t):
        q = float(np.dot(signs, t * t))
        return q > 0 and t[0] < 0

    def eta_inverse(eta):
        q = float(np.dot(signs, eta * eta))
        if q <= 0 or eta[0] <= 0:
            raise EvaluationDomainError("mean vector must be future timelike")
        nrm = math.sqrt(q)
        if nrm <= 1.0:
            raise EvaluationDomainError("mean vector norm must exceed 1")
        if m == 2:
            rho = 1.0 / (nrm - 1.0)
        else:
            from scipy.optimize import brentq

            lo = 1e-12
            hi = 2.0 / (nrm - 1.0) + 10.0
            rho = brentq(
                lambda x: hyperboloid_mean_resultant(x, m) - nrm, lo, hi, xtol=1e-15, rtol=1e-15
            )
        xi = eta / nrm
        return -rho * (signs * xi)

    return _radial_family(n, signs, fval, fder, domain, eta_inverse, f"hyperboloid-ambient(m={m})")


# ---------------------------------------------------------------------------
# angular charts (spherical / hyperbolic-polar coordinates)


def _fval_factor(kind: str, role: str, x: float, order: int) -> float:
    if kind == "circ":
        fns = (math.sin, math.cos)
        idx = order + (0 if role == "s" else 1)
        v = fns[idx % 2](x)
        return v if (idx % 4) < 2 else -v
    if role == "s":
        return math.sinh(x) if order % 2 == 0 else math.cosh(x)
    return math.cosh(x) if order % 2 == 0 else math.sinh(x)


def _xi(u: np.ndarray, kinds: list[str], derivs: tuple[int, ...]) -> np.ndarray:
    m = u.shape[0]
    out = np.empty(m + 1)
    for i in range(m + 1):
        axes = list(range(min(i, m)))
        roles = ["s"] * len(axes)
        if i < m:
            axes.append(i)
            roles.append("c")
        val = 1.0
        for a in range(m):
            d = derivs[a]
            if a in axes:
                val *= _fval_factor(kinds[a], roles[axes.index(a)], u[a], d)
            elif d > 0:
                val = 0.0
                break
        out[i] = val
    return out


def _xi_jacobian(u, kinds):
    m = u.shape[0]
    base = tuple(0 for _ in range(m))
    rows = []
    for a in range(m):
        d = list(base)
        d[a] = 1
        rows.append(_xi(u, kinds, tuple(d)))
    return np.array(rows)  # (m, m+1)


def _xi_hessian(u, kinds):
    m = u.shape[0]
    out = np.empty((m, m, m + 1))
    for a in range(m):
        for b in range(a, m):
            d = [0] * m
            d[a] += 1
            d[b] += 1
            v = _xi(u, kinds, tuple(d))
            out[a, b] = v
            out[b, a] = v
    return out


def _sph_angles(xi: np.ndarray) -> np.ndarray:
    """Angles of a unit vector: the inverse of the spherical chart, branch-fixed."""
    k = xi.shape[0] - 1
    u = np.empty(k)
    for a in range(k - 1):
        u[a] = math.atan2(float(np.linalg.norm(xi[a + 1:])), float(xi[a]))
    u[k - 1] = math.atan2(float(xi[k]), float(xi[k - 1])) % (2.0 * math.pi)
    return u


# ---------------------------------------------------------------------------
# the two directional models


class _DirectionalModel:
    """Shared machinery; subclasses fix the factor kinds and sign structure."""

    kinds: list[str]
    m: int
    r: float
    r_dagger: float
    family: ExponentialFamily
    _lam: np.ndarray  # theta = r * lam * xi, componentwise signs

    def direction(self, u) -> np.ndarray:
        ua = as_coords(u)
        return _xi(ua, self.kinds, tuple([0] * self.m))

    def embed(self, u) -> tuple[np.ndarray, np.ndarray]:
        """Natural and mean parameter of the chart point."""
        ua = as_coords(u)
        self._check_chart(ua)
        xi = _xi(ua, self.kinds, tuple([0] * self.m))
        return self.r * self._lam * xi, self.r_dagger * xi

    def _check_chart(self, u: np.ndarray) -> None:
        if u.shape[0] != self.m:
            raise ChartError(f"chart point must have dimension {self.m}")
        lo = 0.0 if self.kinds[0] == "circ" else -math.inf
        if not (lo - _DOMAIN_SLACK <= u[0] <= (math.pi if self.kinds[0] == "circ" else math.inf) + _DOMAIN_SLACK):
            raise ChartError(f"first chart coordinate {u[0]!r} out of range")
        for a in range(1, self.m - 1):
            if not -_DOMAIN_SLACK <= u[a] <= math.pi + _DOMAIN_SLACK:
                raise ChartError(f"chart coordinate {a + 1} out of range: {u[a]!r}")
        if self.m >= 2 and not -_DOMAIN_SLACK <= u[self.m - 1] <= 2.0 * math.pi + _DOMAIN_SLACK:
            raise ChartError(f"azimuthal coordinate out of range: {u[self.m - 1]!r}")

    def _curved(self, normal_theta_sign: float, normal_sign: int) -> CurvedFamily:
        lam = self._lam

        def embed_theta(u):
            self._check_chart(u)
            return self.r * lam * _xi(u, self.kinds, tuple([0] * self.m))

        def embed_eta(u):
            return self.r_dagger * _xi(u, self.kinds, tuple([0] * self.m))

        def tangent_theta(u):
            return self.r * _xi_jacobian(u, self.kinds) * lam

        def tangent_eta(u):
            return self.r_dagger * _xi_jacobian(u, self.kinds)

        def normal_theta(u):
            return (normal_theta_sign * lam * _xi(u, self.kinds, tuple([0] * self.m)))[None, :]

        def normal_eta(u):
            return _xi(u, self.kinds, tuple([0] * self.m))[None, :]

        def hess_theta(u):
            return self.r * _xi_hessian(u, self.kinds) * lam

        def hess_eta(u):
            return self.r_dagger * _xi_hessian(u, self.kinds)

        return CurvedFamily(
            ambient=self.family,
            m=self.m,
            embed_theta=embed_theta,
            embed_eta=embed_eta,
            tangent_theta=tangent_theta,
            tangent_eta=tangent_eta,
            normal_theta=normal_theta,
            normal_eta=normal_eta,
            hess_theta=hess_theta,
            hess_eta=hess_eta,
            normal_sign=normal_sign,
            registered_gauge=self.gauge(),
            name=type(self).__name__,
        )

    def gauge(self) -> Gauge:
        kinds = self.kinds
        m = self.m

        def nu(u):
            prod = 1.0
            for a in range(m):
                f = math.sinh(u[a]) if kinds[a] == "hyp" else math.sin(u[a])
                if abs(f) < 1e-12:
                    raise GaugeSingularityError(f"gauge singular at u={u!r}")
                prod *= abs(f)
            return 1.0 / prod

        def s(u):
            out = np.empty(m)
            for a in range(m):
                if kinds[a] == "hyp":
                    out[a] = -math.cosh(u[a]) / math.sinh(u[a])
                else:
                    out[a] = -math.cos(u[a]) / math.sin(u[a])
            return out

        def ds(u):
            out = np.zeros((m, m))
            for a in range(m):
                if kinds[a] == "hyp":
                    out[a, a] = 1.0 / math.sinh(u[a]) ** 2
                else:
                    out[a, a] = 1.0 / math.sin(u[a]) ** 2
            return out

        return Gauge(nu=nu, s=s, ds=ds, chart="u", name=f"{type(self).__name__}-gauge")

    def nu_many(self, us: np.ndarray) -> np.ndarray:
        us = np.atleast_2d(us)
        prod = np.ones(us.shape[0])
        for a in range(self.m):
            f = np.sinh(us[:, a]) if self.kinds[a] == "hyp" else np.sin(us[:, a])
            prod = prod * np.abs(f)
        with np.errstate(divide="ignore"):
            return np.where(prod > 0, 1.0 / np.maximum(prod, 1e-300), np.inf)

    def wrap_deviation(self, dev: np.ndarray) -> np.ndarray:
        """Chart deviation with the azimuthal coordinate wrapped to (-pi, pi]."""
        out = np.array(dev, dtype=float)
        out[..., self.m - 1] = np.mod(out[..., self.m - 1] + math.pi, 2.0 * math.pi) - math.pi
        return out

    def probe_grid(self, count: int = 20, margin: float = 1e-2, seed: int = 7):
        ranges = []
        for a in range(self.m):
            if self.kinds[a] == "hyp":
                ranges.append((0.05, 1.5))
            else:
                ranges.append((0.0, math.pi))
        return chart_grid(ranges, count, margin=margin, seed=seed)


class VmfModel(_DirectionalModel):
    """von Mises-Fisher family on the unit m-sphere with fixed concentration."""

    def __init__(self, m: int = 2, r: float = 0.25):
        if m < 2:
            raise ParameterError("directional models need m >= 2")
        if r <= 0:
            raise ParameterError("concentration r must be positive")
        self.m = int(m)
        self.r = float(r)
        self.kinds = ["circ"] * self.m
        self.r_dagger = vmf_mean_resultant(self.r, self.m)
        self._lam = np.ones(self.m + 1)
        self.family = vmf_family(self.m)
        self.curved = self._curved(normal_theta_sign=1.0, normal_sign=1)

    def stopping_constant(self) -> float:
        rr = self.r * self.r_dagger
        return -0.5 * (self.m / rr - 1.0 / self.r_dagger**2)

    def support_residual(self, x: np.ndarray) -> float:
        return abs(float(np.linalg.norm(x)) - 1.0)

    def sample_many(self, u, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw unit observations around the chart direction; m = 2 only."""
        if self.m != 2:
            raise UnsupportedShapeError("unit sampler is implemented for m = 2")
        xi = self.direction(u)
        e1, e2 = _orthonormal_complement(xi)
        uu = rng.random(size)
        w = 1.0 + np.log(uu + (1.0 - uu) * math.exp(-2.0 * self.r)) / self.r
        phi = 2.0 * math.pi * rng.random(size)
        st = np.sqrt(np.maximum(1.0 - w * w, 0.0))
        x = (
            w[:, None] * xi[None, :]
            + (st * np.cos(phi))[:, None] * e1[None, :]
            + (st * np.sin(phi))[:, None] * e2[None, :]
        )
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    def sample_unit(self, u, rng: np.random.Generator) -> "UnitObservation":
        return UnitObservation(self.sample_many(u, rng, 1)[0], kind="sphere")

    def mle_direction(self, xbar) -> np.ndarray:
        xb = as_coords(xbar)
        nrm = float(np.linalg.norm(xb))
        if nrm <= 1e-300:
            raise MleUndefinedError("zero mean vector: direction undefined")
        return _sph_angles(xb / nrm)

    def mle_many(self, ts: np.ndarray, sums: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized closed-form estimator from running sums; returns (u, defined)."""
        nrm = np.linalg.norm(sums, axis=1)
        ok = nrm > 1e-300
        safe = np.where(ok, nrm, 1.0)
        xi = sums / safe[:, None]
        u1 = np.arctan2(np.hypot(xi[:, 1], xi[:, 2]), xi[:, 0])
        u2 = np.mod(np.arctan2(xi[:, 2], xi[:, 1]), 2.0 * math.pi)
        return np.stack([u1, u2], axis=1), ok

    def criterion_many(self, ts: np.ndarray, sums: np.ndarray) -> np.ndarray:
        """Observed-information statistic along a trajectory (closed form at the MLE)."""
        return np.linalg.norm(sums, axis=1) / self.r_dagger


class HyperboloidModel(_DirectionalModel):
    """Hyperboloid family on the future unit shell of Minkowski space."""

    def __init__(self, m: int = 2, r: float = 0.1):
        if m < 2:
            raise ParameterError("directional models need m >= 2")
        if r <= 0:
            raise ParameterError("concentration r must be positive")
        self.m = int(m)
        self.r = float(r)
        self.kinds = ["hyp"] + ["circ"] * (self.m - 1)
        self.r_dagger = hyperboloid_mean_resultant(self.r, self.m)
        self._lam = np.concatenate(([-1.0], np.ones(self.m)))
        self.family = hyperboloid_family(self.m)
        self.curved = self._curved(normal_theta_sign=-1.0, normal_sign=-1)
        self._signs = np.concatenate(([1.0], -np.ones(self.m)))

    def stopping_constant(self) -> float:
        rr = self.r * self.r_dagger
        return -0.5 * (-self.m / rr - 1.0 / self.r_dagger**2)

    def support_residual(self, x: np.ndarray) -> float:
        q = float(np.dot(self._signs, x * x))
        return abs(q - 1.0) if x[0] > 0 else math.inf

    def sample_many(self, u, rng: np.random.Generator, size: int) -> np.ndarray:
        """Boosted radial draws: the radial cosh is a shifted exponential."""
        if self.m != 2:
            raise UnsupportedShapeError("unit sampler is implemented for m = 2")
        ua = as_coords(u)
        ch, sh = math.cosh(ua[0]), math.sinh(ua[0])
        n1, n2 = math.cos(ua[1]), math.sin(ua[1])
        boost = np.array(
            [
                [ch, sh * n1, sh * n2],
                [sh * n1, 1.0 + (ch - 1.0) * n1 * n1, (ch - 1.0) * n1 * n2],
                [sh * n2, (ch - 1.0) * n1 * n2, 1.0 + (ch - 1.0) * n2 * n2],
            ]
        )
        e = -np.log1p(-rng.random(size))
        y = 1.0 + e / self.r
        sr = np.sqrt(np.maximum(y * y - 1.0, 0.0))
        phi = 2.0 * math.pi * rng.random(size)
        xloc = np.stack([y, sr * np.cos(phi), sr * np.sin(phi)], axis=1)
        x = xloc @ boost.T
        q = x[:, 0] ** 2 - x[:, 1] ** 2 - x[:, 2] ** 2
        return x / np.sqrt(q)[:, None]

    def sample_unit(self, u, rng: np.random.Generator) -> "UnitObservation":
        return UnitObservation(self.sample_many(u, rng, 1)[0], kind="hyperboloid")

    def mle_direction(self, xbar) -> np.ndarray:
        xb = as_coords(xbar)
        q = float(np.dot(self._signs, xb * xb))
        if q <= 0 or xb[0] <= 0:
            raise MleUndefinedError("mean vector is not future timelike")
        xi = xb / math.sqrt(q)
        u1 = math.asinh(float(np.linalg.norm(xi[1:])))
        tail = _sph_angles(xi[1:]) if self.m > 2 else np.array(
            [math.atan2(float(xi[2]), float(xi[1])) % (2.0 * math.pi)]
        )
        return np.concatenate(([u1], tail))

    def mle_many(self, ts: np.ndarray, sums: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        q = sums[:, 0] ** 2 - sums[:, 1] ** 2 - sums[:, 2] ** 2
        ok = (q > 0) & (sums[:, 0] > 0)
        safe = np.where(ok, np.sqrt(np.where(q > 0, q, 1.0)), 1.0)
        xi = sums / safe[:, None]
        u1 = np.arcsinh(np.hypot(xi[:, 1], xi[:, 2]))
        u2 = np.mod(np.arctan2(xi[:, 2], xi[:, 1]), 2.0 * math.pi)
        return np.stack([u1, u2], axis=1), ok

    def criterion_many(self, ts: np.ndarray, sums: np.ndarray) -> np.ndarray:
        q = np.maximum(sums[:, 0] ** 2 - sums[:, 1] ** 2 - sums[:, 2] ** 2, 0.0)
        return np.sqrt(q) / self.r_dagger


@dataclass(frozen=True)
class UnitObservation:
    """A single draw on the support manifold."""

    x: np.ndarray
    kind: str = "sphere"

    def __post_init__(self):
        xv = np.asarray(self.x, dtype=float)
        if self.kind == "sphere":
            res = abs(float(np.linalg.norm(xv)) - 1.0)
        else:
            q = xv[0] ** 2 - float(np.dot(xv[1:], xv[1:]))
            res = abs(q - 1.0) if xv[0] > 0 else math.inf
        if res > SUPPORT_TOL:
            raise EvaluationDomainError(f"observation off the support manifold by {res:.2e}")
        object.__setattr__(self, "x", xv)


def _orthonormal_complement(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([0.0, 0.0, 1.0]) if abs(xi[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = a - (a @ xi) * xi
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(xi, e1)
    return e1, e2


# ---------------------------------------------------------------------------
# full-family fixtures and a flat curved fixture


def gaussian_family(n: int) -> ExponentialFamily:
    """Unit-covariance Gaussian mean family; self-dual coordinates."""
    return ExponentialFamily(
        n=n,
        psi=lambda t: 0.5 * float(t @ t),
        grad=lambda t: t.copy(),
        hess=lambda t: np.eye(n),
        third=lambda t: np.zeros((n, n, n)),
        eta_inverse=lambda e: e.copy(),
        name=f"gaussian({n})",
    )


def poisson_family(n: int = 1) -> ExponentialFamily:
    """Independent Poisson coordinates with log-link natural parameters."""

    def third(t):
        out = np.zeros((n, n, n))
        e = np.exp(t)
        for i in range(n):
            out[i, i, i] = e[i]
        return out

    def eta_inverse(e):
        if np.any(e <= 0):
            raise EvaluationDomainError("Poisson mean must be positive")
        return np.log(e)

    return ExponentialFamily(
        n=n,
        psi=lambda t: float(np.sum(np.exp(t))),
        grad=lambda t: np.exp(t),
        hess=lambda t: np.diag(np.exp(t)),
        third=third,
        eta_inverse=eta_inverse,
        name=f"poisson({n})",
    )


class LinearGaussianModel:
    """Flat fixture: an affine submanifold of a Gaussian mean family.

    Zero curvature everywhere, closed-form estimator, criterion equal to
    the sample size; used to pin down degenerate behaviour of the
    sequential machinery.
    """

    def __init__(self, a_matrix):
        a = np.atleast_2d(np.asarray(a_matrix, dtype=float))
        self.a = a
        self.n, self.m = a.shape
        if np.linalg.matrix_rank(a) < self.m:
            raise ParameterError("embedding matrix must have full column rank")
        self.family = gaussian_family(self.n)
        self._pinv = np.linalg.pinv(a)
        self.curved = CurvedFamily(
            ambient=self.family,
            m=self.m,
            embed_theta=lambda u: a @ u,
            embed_eta=lambda u: a @ u,
            tangent_theta=lambda u: a.T,
            tangent_eta=lambda u: a.T,
            hess_theta=lambda u: np.zeros((self.m, self.m, self.n)),
            hess_eta=lambda u: np.zeros((self.m, self.m, self.n)),
            name="linear-gaussian",
        )

    def stopping_constant(self) -> float:
        return 0.0

    def embed(self, u):
        t = self.a @ as_coords(u)
        return t, t.copy()

    def gauge(self) -> Gauge:
        from .conformal import constant_gauge

        return constant_gauge(1.0, chart="u")

    def nu_many(self, us):
        return np.ones(np.atleast_2d(us).shape[0])

    def sample_many(self, u, rng: np.random.Generator, size: int) -> np.ndarray:
        mean = self.a @ as_coords(u)
        return mean[None, :] + rng.standard_normal((size, self.n))

    def mle_direction(self, xbar) -> np.ndarray:
        return self._pinv @ as_coords(xbar)

    def mle_many(self, ts: np.ndarray, sums: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (sums / ts[:, None]) @ self._pinv.T, np.ones(sums.shape[0], dtype=bool)

    def criterion_many(self, ts: np.ndarray, sums: np.ndarray) -> np.ndarray:
        return ts.astype(float)

    def wrap_deviation(self, dev):
        return np.array(dev, dtype=float)

    def support_residual(self, x):
        return 0.0
