"""Sequential estimation: stopping rule, estimator corrections, bounds.

The stopping rule triggers when the normalized observed information of
the running trajectory crosses a gauge-dependent threshold; replications
use disjoint generator streams and a deterministic burst schedule, so a
run is reproducible regardless of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry, tensorops as tops
from .conformal import ConformalCoordinates, Gauge
from .errors import ChartError, RunawayStopError
from .tensorops import as_coords

T_MIN = 3
T_MAX_FACTOR = 50.0


@dataclass(frozen=True)
class Trajectory:
    """Running sufficient statistic of one replication."""

    t: int
    sum_x: np.ndarray

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("trajectory needs at least one observation")
        object.__setattr__(self, "sum_x", np.asarray(self.sum_x, dtype=float))

    @property
    def mean_x(self) -> np.ndarray:
        return self.sum_x / self.t


@dataclass(frozen=True)
class StopDecision:
    """First crossing of the stopping boundary."""

    tau: int
    criterion_value: float
    threshold: float
    prev_criterion: float | None = None
    prev_threshold: float | None = None


@dataclass(frozen=True)
class EstimateBundle:
    """Raw, bias-corrected and transformed-coordinate estimates."""

    u_hat: np.ndarray
    u_hat_star: np.ndarray
    u_bar_hat: np.ndarray | None


def observed_information(model, trajectory: Trajectory, u_hat) -> float:
    """Normalized observed information ``-(1/m) g^{ab} d_a d_b l`` at ``u_hat``.

    The log-likelihood of the trajectory is linear in ``(sum_x, t)``, so
    the value for population data equals ``t`` exactly.
    """
    u = as_coords(u_hat)
    fam = model.curved
    g = geometry.induced_metric(fam, u).values
    ginv = tops.invert_matrix(g)
    ht = geometry.theta_hessian(fam, u)
    delta = trajectory.sum_x - trajectory.t * fam.eta(u)
    hess_l = np.einsum("abi,i->ab", ht, delta) - trajectory.t * g
    return -float(np.einsum("ab,ab->", ginv, hess_l)) / fam.m


def run_stopping(
    model,
    gauge: Gauge,
    k: float,
    u0,
    rng: np.random.Generator,
    c: float | None = None,
    t_min: int = T_MIN,
    t_max: int | None = None,
) -> tuple[StopDecision, Trajectory]:
    """Sample until the observed-information criterion crosses ``K nu + c``.

    Draws are consumed in bursts of deterministic size; the first index
    at or past the boundary wins, so results match one-at-a-time
    evaluation. Raises :class:`RunawayStopError` past the hard cap.
    """
    if k <= 0:
        raise ValueError("K must be positive")
    u0a = as_coords(u0)
    if c is None:
        c = model.stopping_constant()
    nu0 = gauge.nu_at(u0a)
    if t_max is None:
        t_max = int(math.ceil(T_MAX_FACTOR * k * nu0))
    burst = max(8, int(0.25 * k * nu0))

    dim = model.curved.ambient.n if hasattr(model, "curved") else model.n
    sum_x = np.zeros(dim)
    t = 0
    prev_crit: float | None = None
    prev_thresh: float | None = None
    while t < t_max:
        take = min(burst, t_max - t)
        xs = model.sample_many(u0a, rng, take)
        cums = sum_x[None, :] + np.cumsum(xs, axis=0)
        ts = np.arange(t + 1, t + take + 1, dtype=float)
        u_hats, defined = model.mle_many(ts, cums)
        crit = model.criterion_many(ts, cums)
        thresh = k * model.nu_many(u_hats) + c
        eligible = defined & (ts >= t_min) & np.isfinite(thresh)
        hit = eligible & (crit >= thresh)
        if np.any(hit):
            idx = int(np.argmax(hit))
            tau = int(ts[idx])
            if idx > 0 and eligible[idx - 1]:
                prev_crit = float(crit[idx - 1])
                prev_thresh = float(thresh[idx - 1])
            decision = StopDecision(
                tau=tau,
                criterion_value=float(crit[idx]),
                threshold=float(thresh[idx]),
                prev_criterion=prev_crit,
                prev_threshold=prev_thresh,
            )
            return decision, Trajectory(tau, cums[idx])
        if np.any(eligible):
            last = int(np.max(np.nonzero(eligible)[0]))
            prev_crit = float(crit[last])
            prev_thresh = float(thresh[last])
        sum_x = cums[-1]
        t += take
    raise RunawayStopError(f"no boundary crossing before t_max={t_max}")


def bias_correct(
    model,
    u_hat,
    effective_n: float,
    gauge: Gauge | None = None,
    coords: ConformalCoordinates | None = None,
) -> np.ndarray:
    """Second-order bias correction of the estimator.

    Only the tangential block contributes for the maximum-likelihood
    ancillary. Without a gauge this is the plain connection contraction
    in the original chart; with a gauge the log-gradient terms are added,
    and with flattening coordinates the whole correction is evaluated in
    the new chart (where it vanishes for a dual quadric hypersurface).
    """
    u = as_coords(u_hat)
    fam = model.curved
    if coords is not None:
        if gauge is None:
            raise ValueError("flattening coordinates require their gauge")
        from .conformal import ubar_chart_connection

        nu = gauge.nu_at(u)
        gbar = ubar_chart_connection(fam, gauge, coords, u).values / nu
        ginv_ubar = _ubar_metric_inverse(fam, coords, u)
        corr = np.einsum("bcd,da,bc->a", gbar, ginv_ubar, ginv_ubar)
        ubar = np.asarray(coords.forward(u), dtype=float)
        return ubar + corr / (2.0 * effective_n)
    g = geometry.induced_metric(fam, u).values
    ginv = tops.invert_matrix(g)
    _, gm1 = geometry.sub_connections(fam, u)
    corr = np.einsum("bcd,da,bc->a", gm1.values, ginv, ginv)
    if gauge is not None:
        s = gauge.s_at(u)
        corr = corr + 2.0 * ginv @ s
    return u + corr / (2.0 * effective_n)


def _ubar_metric_inverse(fam, coords: ConformalCoordinates, u: np.ndarray) -> np.ndarray:
    g = geometry.induced_metric(fam, u).values
    j = np.asarray(coords.jacobian(u), dtype=float)
    return j @ tops.invert_matrix(g) @ j.T


def second_order_terms(
    model,
    u0,
    gauge: Gauge | None = None,
    coords: ConformalCoordinates | None = None,
) -> np.ndarray:
    """The two surviving squared-tensor terms of the covariance expansion.

    Returns ``(1/2) (G')^2ab + (H')^2ab`` with all indices raised, in the
    original chart or, when flattening coordinates are given, in the new
    chart where both factors vanish for a dual quadric hypersurface. The
    ancillary term is identically zero for the maximum-likelihood
    ancillary.
    """
    u = as_coords(u0)
    fam = model.curved
    g = geometry.induced_metric(fam, u).values
    ginv = tops.invert_matrix(g)
    _, gm1 = geometry.sub_connections(fam, u)
    h1, _ = geometry.es_curvature(fam, u)
    gkk_inv = tops.invert_matrix(geometry.normal_metric(fam, u))

    if coords is None:
        if gauge is None:
            gprime = gm1.values
            hprime = h1.values
        else:
            s = gauge.s_at(u)
            hk = np.einsum("abk,ab->k", h1.values, ginv) / fam.m
            gprime = gm1.values + np.einsum("ca,b->abc", g, s) + np.einsum("cb,a->abc", g, s)
            hprime = h1.values - np.einsum("ab,k->abk", g, hk)
        gamma_sq = np.einsum("cda,efb,ce,df->ab", gprime, gprime, ginv, ginv)
        h_sq = np.einsum("ack,bdl,cd,kl->ab", hprime, hprime, ginv, gkk_inv)
        return ginv @ (0.5 * gamma_sq + h_sq) @ ginv

    if gauge is None:
        raise ValueError("flattening coordinates require their gauge")
    from .conformal import ubar_chart_connection

    nu = gauge.nu_at(u)
    gprime = ubar_chart_connection(fam, gauge, coords, u).values / nu
    j = np.asarray(coords.jacobian(u), dtype=float)
    jinv = np.linalg.inv(j)
    g_ubar = jinv.T @ g @ jinv
    ginv_ubar = tops.invert_matrix(g_ubar)
    hk = np.einsum("abk,ab->k", h1.values, ginv) / fam.m
    k1 = h1.values - np.einsum("ab,k->abk", g, hk)
    k1_ubar = np.einsum("abk,ap,bq->pqk", k1, jinv, jinv)
    gamma_sq = np.einsum("cda,efb,ce,df->ab", gprime, gprime, ginv_ubar, ginv_ubar)
    h_sq = np.einsum("ack,bdl,cd,kl->ab", k1_ubar, k1_ubar, ginv_ubar, gkk_inv)
    return ginv_ubar @ (0.5 * gamma_sq + h_sq) @ ginv_ubar


def asymptotic_covariance(
    model,
    u0,
    effective_n: float,
    gauge: Gauge | None = None,
    coords: ConformalCoordinates | None = None,
) -> np.ndarray:
    """Second-order covariance expansion of the corrected estimator.

    Without a gauge this is the fixed-sample-size lower bound; with the
    quadric gauge and its coordinates the second-order term cancels and
    the bound collapses to the transformed inverse metric.
    """
    u = as_coords(u0)
    base = crb(model, u, coords=coords)
    term = second_order_terms(model, u, gauge=gauge, coords=coords)
    return base + term / effective_n


def crb(model, u0, coords: ConformalCoordinates | None = None) -> np.ndarray:
    """Unit-time Cramer-Rao matrix at the truth, optionally pushed to the
    flattening coordinates through the map Jacobian."""
    u = as_coords(u0)
    g = geometry.induced_metric(model.curved, u).values
    ginv = tops.invert_matrix(g)
    if coords is None:
        return ginv
    j = np.asarray(coords.jacobian(u), dtype=float)
    if j.shape[0] != j.shape[1] or abs(np.linalg.det(j)) < 1e-300:
        raise ChartError("flattening-map Jacobian is singular at the truth point")
    return j @ ginv @ j.T


def make_estimates(
    model,
    u_hat,
    effective_n: float,
    gauge: Gauge | None = None,
    coords: ConformalCoordinates | None = None,
) -> EstimateBundle:
    u = as_coords(u_hat)
    star = bias_correct(model, u, effective_n, gauge=gauge)
    ubar = None
    if coords is not None:
        ubar = np.asarray(coords.forward(u), dtype=float)
    return EstimateBundle(u_hat=u, u_hat_star=star, u_bar_hat=ubar)
