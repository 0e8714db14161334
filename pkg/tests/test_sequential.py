import math

import numpy as np
import pytest

from seqgeo import conformal, geometry, sequential, tensorops as tops
from seqgeo.conformal import quadric_gauge
from seqgeo.errors import RunawayStopError
from seqgeo.geometry import CurvedFamily
from seqgeo.sequential import (
    StopDecision,
    Trajectory,
    asymptotic_covariance,
    bias_correct,
    crb,
    make_estimates,
    observed_information,
    run_stopping,
    second_order_terms,
)

from conftest import U0_HYP, U0_VMF
from oracles import VMF_G11, VMF_G22


@pytest.fixture(scope="module")
def vmf_coords(vmf, vmf_grid):
    return quadric_gauge(vmf.curved, np.zeros(3), np.eye(2, 3), vmf_grid)


def numeric_clone(model):
    fam = model.curved
    return CurvedFamily(
        ambient=fam.ambient, m=fam.m, embed_theta=fam.embed_theta,
        normal_sign=fam.normal_sign, name=fam.name + "-numeric",
    )


class TestObservedInformation:
    @pytest.mark.parametrize("model_name", ["vmf", "hyp"])
    def test_population_data_equals_time(self, model_name, request):
        model = request.getfixturevalue(model_name)
        u0 = U0_VMF if model_name == "vmf" else U0_HYP
        traj = Trajectory(37, 37 * model.embed(u0)[1])
        assert observed_information(model, traj, u0) == pytest.approx(37.0, abs=1e-9)

    def test_empty_trajectory_invalid(self):
        with pytest.raises(ValueError):
            Trajectory(0, np.zeros(3))

    def test_linear_in_time_and_statistic(self, vmf):
        rng = np.random.default_rng(5)
        xs = vmf.sample_many(U0_VMF, rng, 20)
        s = xs.sum(axis=0)
        u_hat = vmf.mle_direction(s / 20.0)
        one = observed_information(vmf, Trajectory(20, s), u_hat)
        two = observed_information(vmf, Trajectory(40, 2 * s), u_hat)
        assert two == pytest.approx(2 * one, rel=1e-12)

    @pytest.mark.parametrize("model_name", ["vmf", "hyp"])
    def test_closed_form_criterion_matches(self, model_name, request):
        model = request.getfixturevalue(model_name)
        u0 = U0_VMF if model_name == "vmf" else U0_HYP
        rng = np.random.default_rng(11)
        xs = model.sample_many(u0, rng, 30)
        sums = np.cumsum(xs, axis=0)
        ts = np.arange(1, 31, dtype=float)
        crit = model.criterion_many(ts, sums)
        us, _ = model.mle_many(ts, sums)
        for i in (4, 17, 29):
            generic = observed_information(model, Trajectory(int(ts[i]), sums[i]), us[i])
            assert crit[i] == pytest.approx(generic, rel=1e-10)


class TestRunStopping:
    def test_degenerate_reduction_to_fixed_sample(self, linear):
        rng = np.random.default_rng(42)
        u0 = np.array([0.4, -0.2])
        dec, traj = run_stopping(linear, linear.gauge(), 17.3, u0, rng, c=0.0)
        assert dec.tau == 18 and traj.t == 18
        dec, _ = run_stopping(linear, linear.gauge(), 6.0, u0, rng, c=0.0)
        assert dec.tau == 6
        dec, _ = run_stopping(linear, linear.gauge(), 1.5, u0, rng, c=0.0)
        assert dec.tau == 3  # warm-up floor

    def test_decision_invariants(self, vmf):
        rng = np.random.default_rng(3)
        dec, traj = run_stopping(vmf, vmf.gauge(), 120.0, U0_VMF, rng)
        assert dec.criterion_value >= dec.threshold
        assert traj.t == dec.tau
        if dec.prev_criterion is not None:
            assert dec.prev_criterion < dec.prev_threshold

    def test_determinism(self, vmf):
        a, _ = run_stopping(vmf, vmf.gauge(), 150.0, U0_VMF, np.random.default_rng(7))
        b, _ = run_stopping(vmf, vmf.gauge(), 150.0, U0_VMF, np.random.default_rng(7))
        assert a.tau == b.tau and a.criterion_value == b.criterion_value

    def test_mean_stopping_time_scales_with_gauge(self, vmf):
        taus = []
        k = 433.0
        for rep in range(400):
            rng = np.random.default_rng(900_000 + rep)
            dec, _ = run_stopping(vmf, vmf.gauge(), k, U0_VMF, rng)
            taus.append(dec.tau)
        taus = np.array(taus, dtype=float)
        target = k * vmf.gauge().nu_at(U0_VMF)
        se = taus.std(ddof=1) / math.sqrt(taus.shape[0])
        assert abs(taus.mean() - target) <= 3.0 * se

    def test_variance_order_k(self, hyp):
        ratios = []
        for k in (40.0, 80.0):
            taus = []
            for rep in range(300):
                rng = np.random.default_rng(800_000 + rep)
                dec, _ = run_stopping(hyp, hyp.gauge(), k, U0_HYP, rng)
                taus.append(dec.tau)
            taus = np.array(taus, dtype=float)
            ratios.append(taus.var(ddof=1) / k)
        assert 0.5 < ratios[1] / ratios[0] < 2.0

    def test_runaway_cap(self, vmf):
        with pytest.raises(RunawayStopError):
            run_stopping(vmf, vmf.gauge(), 200.0, U0_VMF, np.random.default_rng(1), t_max=5)

    def test_rejects_bad_k(self, vmf):
        with pytest.raises(ValueError):
            run_stopping(vmf, vmf.gauge(), -1.0, U0_VMF, np.random.default_rng(1))

    @pytest.mark.parametrize("model_name", ["vmf", "hyp"])
    def test_criterion_monotone_on_population_path(self, model_name, request):
        # along the noise-free trajectory the criterion equals t exactly, so
        # the first crossing is trivially well defined
        model = request.getfixturevalue(model_name)
        u0 = U0_VMF if model_name == "vmf" else U0_HYP
        eta = model.embed(u0)[1]
        ts = np.arange(1, 40, dtype=float)
        sums = ts[:, None] * eta[None, :]
        crit = model.criterion_many(ts, sums)
        assert np.abs(crit - ts).max() < 1e-9
        assert np.all(np.diff(crit) > 0)


class TestBiasCorrect:
    def test_flat_model_no_correction(self, linear):
        u = np.array([0.4, -0.2])
        assert np.allclose(bias_correct(linear, u, 100.0), u)

    def test_vmf_two_code_paths_agree(self, vmf):
        clone = numeric_clone(vmf)

        class Wrapper:
            curved = clone

        for n in (50.0, 500.0):
            analytic = bias_correct(vmf, U0_VMF, n)
            numeric = bias_correct(Wrapper(), U0_VMF, n)
            assert np.abs(analytic - numeric).max() < 1e-4 / n * 50.0

    def test_correction_formula(self, vmf):
        # (1/2N) Gamma^(-1)a_bc g^bc against an explicit contraction
        n = 200.0
        g = geometry.induced_metric(vmf.curved, U0_VMF).values
        ginv = np.linalg.inv(g)
        _, gm1 = geometry.sub_connections(vmf.curved, U0_VMF)
        expected = U0_VMF + np.einsum("bcd,da,bc->a", gm1.values, ginv, ginv) / (2 * n)
        assert np.abs(bias_correct(vmf, U0_VMF, n) - expected).max() < 1e-14

    def test_conformal_correction_vanishes(self, vmf, vmf_coords):
        gauge, coords = vmf_coords
        corrected = bias_correct(vmf, U0_VMF, 231.0, gauge=gauge, coords=coords)
        ubar = np.asarray(coords.forward(U0_VMF))
        assert np.abs(corrected - ubar).max() < 1e-6


class TestAsymptoticCovariance:
    def test_vmf_oalb_formula(self, vmf):
        n = 100.0
        g = geometry.induced_metric(vmf.curved, U0_VMF).values
        ginv = np.linalg.inv(g)
        _, gm1 = geometry.sub_connections(vmf.curved, U0_VMF)
        h1, _ = geometry.es_curvature(vmf.curved, U0_VMF)
        gamma_sq = np.einsum("cda,efb,ce,df->ab", gm1.values, gm1.values, ginv, ginv)
        h_sq = np.einsum("ack,bdl,cd->ab", h1.values, h1.values, ginv)
        expected = ginv + (ginv @ (0.5 * gamma_sq + h_sq) @ ginv) / n
        got = asymptotic_covariance(vmf, U0_VMF, n)
        assert np.abs(got - expected).max() < 1e-12
        # the extrinsic part alone is g^{ab}/r_dagger^2
        h_term = ginv @ h_sq @ ginv
        assert np.abs(h_term - ginv / vmf.r_dagger ** 2).max() < 1e-10

    def test_flat_model_is_exact_bound(self, linear):
        u = np.array([0.1, 0.9])
        got = asymptotic_covariance(linear, u, 10.0)
        assert np.abs(got - crb(linear, u)).max() < 1e-12

    def test_conformal_second_order_cancels(self, vmf, vmf_coords):
        gauge, coords = vmf_coords
        term = second_order_terms(vmf, U0_VMF, gauge=gauge, coords=coords)
        assert np.abs(term).max() < 1e-8
        got = asymptotic_covariance(vmf, U0_VMF, 500.0, gauge=gauge, coords=coords)
        assert np.abs(got - crb(vmf, U0_VMF, coords=coords)).max() < 1e-8

    def test_terms_agree_between_code_paths(self, vmf, hyp):
        for model, u0 in ((vmf, U0_VMF), (hyp, U0_HYP)):
            clone = numeric_clone(model)

            class Wrapper:
                curved = clone
                m = 2

            analytic = second_order_terms(model, u0)
            numeric = second_order_terms(Wrapper(), u0)
            scale = max(1.0, np.abs(analytic).max())
            assert np.abs(analytic - numeric).max() < 1e-4 * scale


class TestCrb:
    def test_vmf_closed_form(self, vmf):
        out = crb(vmf, U0_VMF)
        assert out[0, 0] == pytest.approx(1.0 / VMF_G11, rel=1e-12)
        assert out[1, 1] == pytest.approx(1.0 / VMF_G22, rel=1e-12)
        assert abs(out[0, 1]) < 1e-12

    def test_ubar_chart_jacobian_oracle(self, vmf, vmf_coords):
        # push the inverse metric through a finite-difference map Jacobian
        gauge, coords = vmf_coords
        out = crb(vmf, U0_VMF, coords=coords)
        j = tops.jacobian(coords.forward, U0_VMF)
        g = geometry.induced_metric(vmf.curved, U0_VMF).values
        expected = j @ np.linalg.inv(g) @ j.T
        assert np.abs(out - expected).max() < 1e-6

    def test_determinant_transformation(self, vmf, vmf_coords):
        gauge, coords = vmf_coords
        j = np.asarray(coords.jacobian(U0_VMF))
        det_u = np.linalg.det(crb(vmf, U0_VMF))
        det_ubar = np.linalg.det(crb(vmf, U0_VMF, coords=coords))
        assert det_ubar == pytest.approx(np.linalg.det(j) ** 2 * det_u, rel=1e-10)

    def test_invariance_under_rescaled_map(self, vmf, vmf_grid):
        _, coords_a = quadric_gauge(vmf.curved, np.zeros(3), np.eye(2, 3), vmf_grid)
        lmat = np.array([[2.0, 0.5], [0.0, 1.5]])
        _, coords_b = quadric_gauge(vmf.curved, np.zeros(3), lmat @ np.eye(2, 3), vmf_grid)
        a = crb(vmf, U0_VMF, coords=coords_a)
        b = crb(vmf, U0_VMF, coords=coords_b)
        assert np.abs(b - lmat @ a @ lmat.T).max() < 1e-10


class TestEstimateBundle:
    def test_transform_consistency(self, vmf, vmf_coords):
        gauge, coords = vmf_coords
        u_hat = np.array([0.6, 1.0])
        bundle = make_estimates(vmf, u_hat, 300.0, gauge=None, coords=coords)
        assert np.abs(bundle.u_bar_hat - coords.forward(u_hat)).max() < 1e-10
        assert np.abs(bundle.u_hat - u_hat).max() == 0.0
