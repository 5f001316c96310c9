import itertools
import json

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from armington.errors import (
    ComplexRootsError,
    DimensionError,
    NotApplicableError,
    SingularDesignError,
    SingularRecoveryError,
)
from armington.estimators import numerical_gradient
from armington.panel import Panel
from armington.pipelines import (
    BENCHMARK_LINE,
    MethodReport,
    apply_benchmark_correction,
    compute_erpt,
    construct_iiv,
    estimate,
    estimate_fm,
    estimate_iiv,
    estimate_ivfe,
    estimate_sur,
    estimate_sur_stri,
    fm_alphas,
    fm_from_series,
    fm_roots,
    format_estimate,
    iiv_series,
    naive_slope,
    normalization_rss,
    recover_eta,
    recover_eta_gradient,
    recover_sigma,
    recover_sigma_gradient,
    reports_to_tsv,
    select_normalization_point,
    select_root,
)
from armington.pipelines._common import demeaned_logs
from armington.simulator import DgpConfig, generate_moment_panel, generate_panel, run_monte_carlo

from oracles import quadratic_roots, sigma_by_root_finding
from simulations import SEED, acceptance_monte_carlo


def rounding_interval(f, point, half_width=5e-4):
    """Range of ``f`` over the box of inputs that round to ``point``."""
    corners = itertools.product(*[(x - half_width, x + half_width) for x in point])
    vals = [f(*c) for c in corners] + [f(*point)]
    return min(vals), max(vals)


# --------------------------------------------------------------------------
# recovery of the elasticity and the restrictiveness effect


class TestRecovery:
    @pytest.mark.parametrize(
        "kappa, omega, reference",
        [(-0.729, -0.654, 1.494), (0.033, -1.756, 0.965)],
    )
    def test_reference_pairs(self, kappa, omega, reference):
        assert recover_sigma(kappa, omega) == pytest.approx(reference, abs=5e-4)

    @pytest.mark.parametrize(
        "kappa, omega, reference",
        [(-0.672, 0.554, 2.070), (-0.729, -0.654, 1.494), (0.033, -1.756, 0.965)],
    )
    def test_reference_value_within_input_rounding(self, kappa, omega, reference):
        # reference values were computed from unrounded estimates
        lo, hi = rounding_interval(recover_sigma, (kappa, omega))
        assert lo - 5e-4 <= reference <= hi + 5e-4

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-3, 3), st.floats(-2, 2))
    def test_matches_root_finding(self, kappa, omega):
        assume(abs(1 + kappa * omega) > 0.05)
        gamma = kappa / (1 + kappa * omega)
        assume(abs(gamma) < 900)
        assert recover_sigma(kappa, omega) == pytest.approx(sigma_by_root_finding(kappa, omega), abs=1e-9)

    @pytest.mark.parametrize("omega", [-3.0, 0.0, 0.554, 10.0])
    def test_cobb_douglas_limit(self, omega):
        assert recover_sigma(0.0, omega) == 1.0

    @pytest.mark.parametrize("kappa, omega", [(-2.0, 0.5), (1.0, -1.0), (-1.0, 1.0 + 1e-12)])
    def test_singular(self, kappa, omega):
        with pytest.raises(SingularRecoveryError, match="1 \\+ kappa\\*omega"):
            recover_sigma(kappa, omega)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-3, 3), st.floats(-2, 2), st.floats(-2, 2))
    def test_gradients_match_finite_differences(self, kappa, omega, mu):
        assume(abs(1 + kappa * omega) > 0.05)
        g = recover_sigma_gradient(kappa, omega)
        fd = numerical_gradient(lambda p: recover_sigma(*p), np.array([kappa, omega]))
        assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(g)
        h = recover_eta_gradient(mu, kappa, omega)
        fd = numerical_gradient(lambda p: recover_eta(p[2], p[0], p[1]), np.array([kappa, omega, mu]))
        assert np.linalg.norm(h - fd) <= 1e-6 * np.linalg.norm(h) + 1e-12

    def test_restrictiveness_negative_effect(self):
        assert recover_sigma(-0.139, 0.436) == pytest.approx(1.148, abs=5e-4)
        assert recover_eta(-0.714, -0.139, 0.436) == pytest.approx(-0.760, abs=5e-4)

    def test_restrictiveness_small_positive_effect(self):
        # 0.080 / 1.032232 = 0.07750: 0.077 is reachable within input rounding
        lo, hi = rounding_interval(recover_eta, (0.080, -0.237, -0.136))
        assert lo - 5e-4 <= 0.077 <= hi + 5e-4
        assert recover_eta(0.080, -0.237, -0.136) == pytest.approx(0.0775, abs=1e-4)

    def test_vanishing_restrictiveness_channel(self):
        assert recover_eta(0.0, -0.3, 0.4) == 0.0


class TestErpt:
    def test_reference_pair(self):
        phi, _ = compute_erpt(-0.672, 0.554)
        assert phi == pytest.approx(0.6277, abs=5e-5)

    def test_full_pass_through(self):
        assert compute_erpt(0.0, 0.7)[0] == 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-3, 3), st.floats(-2, 2))
    def test_pass_through_identity(self, kappa, omega):
        assume(abs(1 + kappa * omega) > 0.05)
        gamma = 1.0 - recover_sigma(kappa, omega)
        phi, _ = compute_erpt(kappa, omega)
        assert phi == pytest.approx(1.0 / (1.0 - gamma * omega), rel=1e-10, abs=1e-12)

    def test_se_uses_gradient(self):
        cov = np.array([[0.01, 0.002], [0.002, 0.04]])
        _, se = compute_erpt(-0.5, 0.3, cov)
        g = np.array([0.3, -0.5])
        assert se == pytest.approx(np.sqrt(g @ cov @ g), rel=1e-14)


class TestCorrection:
    @pytest.mark.parametrize("sigma, expected", [(0.690, 0.501), (2.070, 3.261), (0.879, 0.879)])
    def test_affine_map(self, sigma, expected):
        assert apply_benchmark_correction(sigma)[0] == pytest.approx(expected, abs=1e-3)

    def test_benchmark_within_two_line_ses(self):
        value, se = apply_benchmark_correction(2.070)
        assert se == pytest.approx(np.hypot(0.176, 2.070 * 0.093), rel=1e-12)
        assert abs(3.446 - value) < 2 * se

    def test_sigma_se_propagates(self):
        _, a = apply_benchmark_correction(2.0)
        _, b = apply_benchmark_correction(2.0, sigma_se=0.1)
        assert b == pytest.approx(np.sqrt(a**2 + (2.0 * 0.1) ** 2), rel=1e-12)
        assert BENCHMARK_LINE.adj_r2 == 0.987


# --------------------------------------------------------------------------
# moment-product estimator


class TestFmRoots:
    def test_exact_moments(self):
        a1, a2 = fm_alphas(-2.0, 0.5)
        assert (a1, a2) == (0.25, 0.0)
        pairs = fm_roots(a1, a2)
        assert pairs[select_root(pairs)] == pytest.approx((-2.0, 0.5), abs=1e-14)

    def test_degenerate_single_root(self):
        a1, a2 = fm_alphas(-1.7, 0.0)
        pairs = fm_roots(a1, a2)
        assert len(pairs) == 1
        assert pairs[0][0] == pytest.approx(1.0 / a2, rel=1e-15)

    def test_complex_roots_carry_alphas(self):
        with pytest.raises(ComplexRootsError) as exc:
            fm_roots(-1.0, 1.0)
        assert (exc.value.alpha1, exc.value.alpha2) == (-1.0, 1.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_match_polynomial_solver(self, a1, a2):
        assume(abs(a1) > 1e-3 and a2 * a2 + 4 * a1 > 1e-6)
        ours = sorted(fm_roots(a1, a2))
        ref = sorted(quadratic_roots(a1, a2))
        np.testing.assert_allclose(ours, ref, rtol=1e-9, atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-5, -0.1), st.floats(-0.9, 0.9))
    def test_round_trip_contains_truth(self, gamma, rho):
        assume(abs(rho) > 1e-6)
        pairs = fm_roots(*fm_alphas(gamma, rho))
        assert any(
            abs(g - gamma) <= 1e-10 * abs(gamma) and abs(r - rho) <= 1e-10 * max(1, abs(rho))
            for g, r in pairs
        )

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-5, -0.1), st.floats(-0.9, 0.9))
    def test_selection_where_identified(self, gamma, rho):
        assume(abs(rho) > 1e-6 and (rho > 0 or abs(gamma * rho) < 1 - 1e-9))
        pairs = fm_roots(*fm_alphas(gamma, rho))
        g, r = pairs[select_root(pairs)]
        assert g == pytest.approx(gamma, rel=1e-10)
        assert r == pytest.approx(rho, rel=1e-10, abs=1e-12)

    @pytest.mark.parametrize("gamma, rho", [(-5.0, -0.9), (-2.0, -0.7), (-0.5, 0.3)])
    def test_twin_pair_is_observationally_equivalent(self, gamma, rho):
        np.testing.assert_allclose(fm_alphas(gamma, rho), fm_alphas(1 / rho, 1 / gamma), rtol=1e-14)

    def test_select_root_rules(self):
        assert select_root([(1.0, 0.1), (-2.0, 3.0)]) == 1
        assert select_root([(-1.0, 0.8), (-2.0, 0.1)]) == 1
        assert select_root([(1.0, 0.8), (2.0, -0.1)]) == 1


class TestFmEstimator:
    def test_report_shape(self):
        panel, _ = generate_moment_panel(T=80)
        rep = estimate_fm(panel)
        assert rep.method == "fm"
        assert len(rep.roots) == 2
        a1, a2 = rep.get("alpha1"), rep.get("alpha2")
        assert rep.gamma in [g for g, _ in fm_roots(a1, a2)]
        assert rep.get("rho") == pytest.approx(-a1 * rep.gamma, rel=1e-12)

    def test_delta_se_matches_numeric(self):
        panel, _ = generate_moment_panel(T=80, replication=1)
        ds, dz = demeaned_logs(panel)
        fit = fm_from_series(ds.values, dz.values, panel.mask)
        j = [p[0] for p in fit.roots].index(fit.gamma)
        g = numerical_gradient(lambda a: fm_roots(a[0], a[1])[j][0], fit.alpha)
        assert fit.gamma_se == pytest.approx(np.sqrt(g @ fit.alpha_cov @ g), rel=1e-6)

    def test_wls_orthogonality_of_moment_products(self):
        # the WLS residual equals -<mu nu>/gamma at the recovered pair, so the
        # weighted moment products are orthogonal to both averaged regressors
        panel, _ = generate_moment_panel(T=60, replication=2)
        ds, dz = demeaned_logs(panel)
        s, z, mask = ds.values, dz.values, panel.mask
        fit = fm_from_series(s, z, mask)
        mu_hat = np.where(mask, s - fit.gamma * z, 0.0)
        nu = iiv_series(s, z, mask, fit.rho)["nu"]
        prod = np.where(mask, mu_hat * np.nan_to_num(nu), 0.0)
        mean_prod = prod.sum(1) / mask.sum(1)
        for key in ("W1", "W2"):
            lhs = np.sum(fit.weights * mean_prod * fit.means[key])
            scale = np.sum(fit.weights * np.abs(mean_prod * fit.means[key]))
            assert abs(lhs) <= 1e-10 * scale

    def test_consistency_in_time_dimension(self):
        biases = {}
        for T in (50, 400):
            est = [estimate_fm(generate_moment_panel(T=T, replication=r)[0]).sigma for r in range(200)]
            biases[T] = abs(np.mean(est) - 3.0)
        assert biases[400] < biases[50]

    def test_reference_differences(self):
        panel, _ = generate_moment_panel(T=200, replication=3)
        rep = estimate_fm(panel, differences=True)
        assert any("reference" in w for w in rep.warnings)
        assert rep.sigma == pytest.approx(3.0, abs=0.5)

    def test_too_few_countries(self):
        panel, _ = generate_moment_panel(N=2, T=30)
        with pytest.raises(DimensionError):
            estimate_fm(panel)


class TestIiv:
    def test_zero_rho_is_fx(self):
        panel, _ = generate_moment_panel(T=20)
        nu = construct_iiv(panel, 0.0)["nu"]
        _, z = demeaned_logs(panel)
        np.testing.assert_array_equal(nu[panel.mask], z.values[panel.mask])

    def test_derivatives_masked_at_edges(self):
        mask = np.ones((2, 5), bool)
        mask[1, 2] = False
        s = np.arange(1.0, 11.0).reshape(2, 5)
        out = iiv_series(s, 2 * s, mask, 0.5, ("lag", "lead", "diff"))
        assert np.isnan(out["lag"][:, 0]).all() and np.isnan(out["lead"][:, -1]).all()
        assert np.isnan(out["diff"][:, 0]).all()
        assert np.isnan(out["lag"][1, 3]) and np.isnan(out["lead"][1, 1]) and np.isnan(out["nu"][1, 2])
        assert out["lag"][0, 1] == out["nu"][0, 0]
        assert not np.any(out["lag"] == 0.0)

    def test_unknown_derivative(self):
        with pytest.raises(ValueError):
            iiv_series(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2), bool), 0.1, ("square",))

    def test_zero_rho_collapses_to_naive_slope(self):
        panel, _ = generate_panel(DgpConfig(N=10, T=30))
        rep = estimate_iiv(panel, instruments="primary", rho_hat=0.0)
        assert rep.gamma == pytest.approx(naive_slope(panel).coefficients[0], rel=1e-10)

    def test_just_identified_sargan_blank(self):
        panel, _ = generate_moment_panel(T=60)
        rep = estimate_iiv(panel, instruments="primary")
        assert rep.instruments == ["nu"]
        assert not rep.diagnostic("sargan").applicable

    def test_auto_records_instrument_set(self):
        panel, _ = generate_moment_panel(T=60, replication=5)
        rep = estimate_iiv(panel)
        assert rep.instruments[0] == "nu"
        assert set(rep.instruments) <= {"nu", "lag", "lead", "diff"}
        sarg = rep.diagnostic("sargan")
        if len(rep.instruments) > 1:
            assert sarg.p_value >= 0.05

    def test_instrument_orthogonal_to_demand_error(self):
        corr = {}
        for T in (50, 800):
            vals = []
            for r in range(20):
                panel, err = generate_moment_panel(T=T, replication=r)
                rep = estimate_fm(panel)
                nu = construct_iiv(panel, rep.get("rho"))["nu"]
                vals.append(np.corrcoef(nu[panel.mask], err["mu"][panel.mask])[0, 1])
            corr[T] = np.mean(np.abs(vals))
        assert corr[800] < corr[50]
        assert corr[800] < 0.05

    def test_agrees_with_fm(self):
        fm, iiv = [], []
        cfg = DgpConfig(seed=99)
        for r in range(200):
            panel, _ = generate_panel(cfg, replication=r)
            rep = estimate_fm(panel)
            fm.append(rep.sigma)
            iiv.append(estimate_iiv(panel, fm_report=rep).sigma)
        iiv = np.array(iiv)
        assert abs(iiv.mean() - np.mean(fm)) < 3 * iiv.std(ddof=1) / np.sqrt(iiv.size)

    def test_consistency_in_time_dimension(self):
        biases = {}
        for T in (50, 400):
            est = []
            for r in range(200):
                panel, _ = generate_moment_panel(T=T, replication=r)
                est.append(estimate_iiv(panel, instruments="primary").sigma)
            biases[T] = abs(np.mean(est) - 3.0)
        assert biases[400] < biases[50]


# --------------------------------------------------------------------------
# normalization point and SUR


def supply_panel(noise_by_period, N=12, seed=0):
    rng = np.random.default_rng(seed)
    T = len(noise_by_period)
    shares = rng.dirichlet(np.ones(N), size=T).T
    ln_z = -(0.2 + 0.5 * np.log(shares)) - rng.normal(size=(N, T)) * np.asarray(noise_by_period)
    return Panel(range(N), range(1, T + 1), shares, np.exp(ln_z))


class TestNormalizationPoint:
    def test_quiet_period_wins(self):
        noise = np.full(8, 0.3)
        noise[3] = 1e-6
        assert select_normalization_point(supply_panel(noise)) == 4

    def test_ties_go_to_latest(self):
        rng = np.random.default_rng(1)
        shares = rng.dirichlet(np.ones(5))
        v = np.tile(shares[:, None], (1, 6))
        z = np.tile(np.exp(rng.normal(size=(5, 1))), (1, 6))
        assert select_normalization_point(Panel(range(5), range(1, 7), v, z)) == 6

    def test_override_recorded(self):
        panel, _ = generate_panel(DgpConfig(N=8, T=12))
        rep = estimate_sur(panel, theta=5)
        assert rep.theta == 5 and "theta selected by override" in rep.warnings

    def test_no_eligible_period(self):
        panel = Panel(range(2), range(4), np.ones((2, 4)), np.ones((2, 4)))
        with pytest.raises(DimensionError):
            select_normalization_point(panel)
        assert normalization_rss(panel) == {}


class TestSur:
    def test_noiseless_exact(self):
        cfg = DgpConfig(N=10, T=15, eps_scale=0.0, delta_scale=0.0)
        panel, truth = generate_panel(cfg)
        rep = estimate_sur(panel, theta="last")
        assert rep.sigma == pytest.approx(3.0, abs=1e-8)
        assert rep.get("kappa") == pytest.approx(truth.kappa, abs=1e-10)

    def test_report_identities(self):
        panel, _ = generate_panel(DgpConfig(N=15, T=30))
        rep = estimate_sur(panel)
        k, w = rep.get("kappa"), rep.get("omega")
        assert rep.sigma == pytest.approx(1 - k / (1 + k * w), abs=1e-10)
        assert rep.get("phi") == pytest.approx(1 + k * w, abs=1e-12)
        assert rep.gamma == 1 - rep.sigma

    def test_scale_invariance(self):
        panel, _ = generate_panel(DgpConfig(N=15, T=30))
        a = estimate_sur(panel)
        b = estimate_sur(panel.scale_fx(37.5))
        for key in ("kappa", "omega"):
            assert b.get(key) == pytest.approx(a.get(key), abs=1e-8)
        assert b.sigma == pytest.approx(a.sigma, abs=1e-8)
        assert b.theta == a.theta
        assert b.get("tau") == pytest.approx(a.get("tau") - np.log(37.5), abs=1e-8)

    def test_two_step_option(self):
        panel, _ = generate_panel(DgpConfig(N=15, T=30))
        a, b = estimate_sur(panel, iterate=True), estimate_sur(panel, iterate=False)
        assert a.sigma == pytest.approx(b.sigma, abs=0.05)

    def test_deterministic(self):
        panel, _ = generate_panel(DgpConfig(N=15, T=30))
        assert json.dumps(estimate_sur(panel).to_dict()) == json.dumps(estimate_sur(panel).to_dict())

    def test_bias_ordering(self):
        mc = acceptance_monte_carlo()
        naive_sigma_bias = abs((1 - mc["naive"].mean) - mc.config.sigma)
        assert abs(mc["sur"].bias) < naive_sigma_bias

    def test_no_supply_feedback(self):
        mc = run_monte_carlo(DgpConfig(omega=0.0, seed=SEED), methods=("sur", "naive"), reps=200)
        assert abs(mc["sur"].bias) < 3 * mc["sur"].mc_se
        naive_sigma = 1 - mc["naive"].estimates
        assert abs(naive_sigma.mean() - 3.0) < 3 * naive_sigma.std(ddof=1) / np.sqrt(naive_sigma.size)

    def test_no_supply_feedback_iiv(self):
        # the moment method identifies off cross-country differences in
        # volatility and needs stationary inputs, so rates differ in scale
        # and the first stage runs on reference differences
        cfg = DgpConfig(omega=0.0, seed=SEED, z_scale=tuple(np.geomspace(0.02, 0.12, 20)))
        est = []
        for r in range(200):
            panel, _ = generate_panel(cfg, replication=r)
            est.append(estimate_iiv(panel, fm_report=estimate_fm(panel, differences=True)).sigma)
        est = np.array(est)
        assert abs(est.mean() - 3.0) < 3 * est.std(ddof=1) / np.sqrt(est.size)


class TestSurStri:
    def test_recovers_parameters(self):
        cfg = DgpConfig(N=30, T=80, eta=-0.8, stri_scale=0.2)
        panel, truth = generate_panel(cfg)
        rep = estimate_sur_stri(panel, theta="last")
        assert rep.get("mu") == pytest.approx(truth.mu, abs=0.05)
        assert rep.get("eta") == pytest.approx(-0.8, abs=0.15)
        assert rep.sigma == pytest.approx(3.0, abs=0.3)
        k, w, mu = rep.get("kappa"), rep.get("omega"), rep.get("mu")
        assert rep.get("eta") == pytest.approx(mu / (1 + k * w), rel=1e-12)

    def test_needs_stri(self):
        panel, _ = generate_panel(DgpConfig(N=5, T=10))
        with pytest.raises(NotApplicableError):
            estimate_sur_stri(panel)

    def test_zero_stri_dropped_and_counted(self):
        panel, _ = generate_panel(DgpConfig(N=10, T=20, eta=-0.5))
        stri = panel.stri.copy()
        stri[0, :3] = 0.0
        p2 = Panel(panel.countries, panel.periods, panel.value, panel.fx_rate, panel.quantity, stri)
        rep = estimate_sur_stri(p2, theta="last")
        assert any("3 cells" in w for w in rep.warnings)

    def test_multicollinear_stri(self):
        panel, _ = generate_panel(DgpConfig(N=10, T=20))
        stri = np.clip(panel.fx_rate / np.nanmax(panel.fx_rate), 1e-6, 1.0)
        p2 = Panel(panel.countries, panel.periods, panel.value, panel.fx_rate, None, stri)
        with pytest.raises(SingularDesignError, match="multicollinearity"):
            estimate_sur_stri(p2, theta="last")


# --------------------------------------------------------------------------
# benchmark IV


class TestIvfe:
    def test_needs_quantity(self):
        panel, _ = generate_moment_panel(T=20)
        with pytest.raises(NotApplicableError, match="quantities"):
            estimate_ivfe(panel)

    def test_missing_quantity_cells_dropped(self):
        panel, _ = generate_panel(DgpConfig(N=10, T=20))
        q = panel.quantity.copy()
        q[2, 4] = np.nan
        p2 = Panel(panel.countries, panel.periods, panel.value, panel.fx_rate, q)
        rep = estimate_ivfe(p2)
        assert any("1 cells without quantity" in w for w in rep.warnings)
        assert rep.n_obs == p2.n_obs - 1

    @pytest.mark.parametrize("mode, n", [("primary", 1), ("both", 2)])
    def test_instrument_modes(self, mode, n):
        panel, _ = generate_panel(DgpConfig(N=10, T=20))
        rep = estimate_ivfe(panel, instruments=mode)
        assert len(rep.instruments) == n
        assert rep.diagnostic("sargan").applicable == (n > 1)
        assert [d.name for d in rep.diagnostics] == ["cragg_donald_f", "sargan", "davidson_mackinnon"]

    def test_fe_biased_iv_consistent(self):
        iv, fe = [], []
        cfg = DgpConfig(seed=11)
        for r in range(200):
            rep = estimate_ivfe(generate_panel(cfg, replication=r)[0], instruments="primary")
            iv.append(rep.sigma)
            fe.append(rep.get("sigma_fe"))
        iv, fe = np.array(iv), np.array(fe)
        assert abs(iv.mean() - 3.0) < 3 * iv.std(ddof=1) / np.sqrt(200)
        assert abs(fe.mean() - 3.0) > 3 * fe.std(ddof=1) / np.sqrt(200)

    def test_flat_supply_agreement(self):
        cfg = DgpConfig(omega=0.0, seed=12)
        diffs, flagged = [], 0
        for r in range(100):
            rep = estimate_ivfe(generate_panel(cfg, replication=r)[0], instruments="primary")
            diffs.append(rep.sigma - rep.get("sigma_fe"))
            flagged += any("plain FE estimate preferred" in w for w in rep.warnings)
        diffs = np.array(diffs)
        assert abs(diffs.mean()) < 3 * diffs.std(ddof=1) / np.sqrt(diffs.size)
        assert flagged > 80


# --------------------------------------------------------------------------
# reports


class TestReport:
    def test_json_keys(self):
        panel, _ = generate_panel(DgpConfig(N=10, T=20))
        d = estimate(panel, "sur").to_dict()
        assert {"method", "sigma", "sigma_se", "gamma", "intermediates", "theta",
                "diagnostics", "instruments", "warnings"} <= set(d)
        json.dumps(d, allow_nan=False)

    def test_non_finite_to_null(self):
        rep = MethodReport("fm", float("nan"), float("inf"), {"rho": float("nan")})
        d = rep.to_dict()
        assert d["sigma"] is None and d["sigma_se"] is None and d["intermediates"]["rho"] is None

    @pytest.mark.parametrize(
        "est, se, text", [(2.0705, 0.0412, "2.071 ~(0.041)"), (-0.5, None, "-0.500"), (float("nan"), 1.0, "")]
    )
    def test_estimate_cell(self, est, se, text):
        assert format_estimate(est, se) == text

    def test_tsv_layout(self):
        rep = MethodReport("sur", 2.07, 0.1, {"kappa": -0.672, "kappa_se": 0.05, "omega": 0.554}, theta=3)
        lines = reports_to_tsv([rep]).splitlines()
        header, row = lines[0].split("\t"), lines[1].split("\t")
        assert row[header.index("sigma")] == "2.070 ~(0.100)"
        assert row[header.index("kappa")] == "-0.672 ~(0.050)"
        assert row[header.index("omega")] == "0.554"
        assert row[header.index("rho")] == ""

    def test_unknown_method(self):
        panel, _ = generate_panel(DgpConfig(N=5, T=10))
        with pytest.raises(ValueError, match="unknown method"):
            estimate(panel, "gmm")
