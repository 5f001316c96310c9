import json

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from armington.errors import SingularRecoveryError
from armington.pipelines import recover_sigma
from armington.simulator import (
    MC_METHODS,
    DgpConfig,
    generate_panel,
    realize_lambdas,
    reduced_form_oracle,
    run_monte_carlo,
)

from simulations import acceptance_monte_carlo

NOISELESS = dict(eps_scale=0.0, delta_scale=0.0)


def row_constant(a, atol):
    """True when every column of ``a`` is constant across rows."""
    return np.allclose(a - a[:1], 0.0, atol=atol, rtol=0)


class TestConfig:
    def test_singular_feedback_rejected(self):
        # gamma = -2 and omega = -0.5 make 1 - gamma*omega vanish
        with pytest.raises(SingularRecoveryError, match="1 - gamma\\*omega"):
            DgpConfig(sigma=3.0, omega=-0.5)

    @pytest.mark.parametrize(
        "kwargs",
        [dict(N=1), dict(sigma=0.0), dict(eps_scale=-1.0), dict(shock_dist="cauchy"),
         dict(shock_dist="t", t_df=2.0), dict(theta=0), dict(missing_rate=1.0),
         dict(N=3, lambdas=(0.5, 0.5, 0.1))],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            DgpConfig(**kwargs)

    def test_theta_defaults_to_last(self):
        assert DgpConfig(T=17).theta == 17

    def test_serializable(self):
        cfg = DgpConfig(z_scale=(0.1, 0.2), N=2, lambdas=(0.25, 0.75))
        assert json.loads(json.dumps(cfg.to_dict()))["lambdas"] == [0.25, 0.75]


class TestReducedFormOracle:
    def test_acceptance_values(self):
        assert reduced_form_oracle(DgpConfig(sigma=3.0, omega=0.5)) == (-1.0, 0.5)

    def test_cobb_douglas(self):
        assert reduced_form_oracle(DgpConfig(sigma=1.0, omega=0.8)) == (0.0, pytest.approx(1.0))

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.05, 10), st.floats(-2, 2))
    def test_round_trip(self, sigma, omega):
        assume(abs(1 - (1 - sigma) * omega) > 1e-3)
        kappa, phi = reduced_form_oracle(DgpConfig(sigma=sigma, omega=omega))
        assert recover_sigma(kappa, omega) == pytest.approx(sigma, rel=1e-12, abs=1e-12)
        assert phi == pytest.approx(1 + kappa * omega, rel=1e-12)


class TestGeneratePanel:
    def test_truth_records_kappa(self):
        _, truth = generate_panel(DgpConfig(N=4, T=5))
        assert truth.kappa == -1.0 and truth.phi == 0.5

    def test_symmetric_noiseless(self):
        cfg = DgpConfig(N=5, T=8, lambdas=(0.2,) * 5, q_amplitude=0.0, q_drift=0.0, z_scale=0.0, **NOISELESS)
        panel, _ = generate_panel(cfg)
        np.testing.assert_allclose(panel.value, 0.2, rtol=1e-14)

    @pytest.mark.parametrize("sigma, omega", [(3.0, 0.5), (0.4, -1.2), (1.0, 0.3), (6.0, 0.0)])
    def test_noiseless_reduced_form(self, sigma, omega):
        panel, truth = generate_panel(DgpConfig(N=8, T=12, sigma=sigma, omega=omega, **NOISELESS))
        resid = np.log(panel.value) - truth.kappa * np.log(panel.fx_rate)
        # what remains is a country effect plus a period effect
        two_way = resid - resid.mean(0) - resid.mean(1, keepdims=True) + resid.mean()
        assert np.abs(two_way).max() <= 1e-12 * max(1.0, np.abs(resid).max())

    @pytest.mark.parametrize("eta", [None, -0.7])
    def test_structural_equations(self, eta):
        cfg = DgpConfig(N=6, T=15, theta=7, eta=eta)
        panel, tr = generate_panel(cfg)
        g, w = cfg.gamma, cfg.omega
        shift = 0.0 if eta is None else eta * tr.ln_r
        lam = np.log(tr.lambdas)[:, None]
        demand = lam + g * (tr.ln_z + tr.ln_pi - tr.ln_q) + tr.eps + shift
        np.testing.assert_allclose(tr.ln_s_latent, demand, atol=1e-12)
        np.testing.assert_allclose(tr.ln_pi, cfg.tau + w * tr.ln_s_latent + tr.delta, atol=1e-12)
        # normalization: the import price is one at theta
        np.testing.assert_allclose(tr.ln_z[:, 6] + tr.ln_pi[:, 6], 0.0, atol=1e-12)
        assert tr.ln_q[6] == 0.0

    def test_observed_prices(self):
        panel, tr = generate_panel(DgpConfig(N=6, T=10))
        ln_p = np.log(panel.fx_rate * panel.value / panel.quantity)
        np.testing.assert_allclose(ln_p, tr.ln_z + tr.ln_pi, atol=1e-12)

    def test_shares_renormalize_latent(self):
        panel, tr = generate_panel(DgpConfig(N=6, T=10))
        assert row_constant(np.log(panel.value) - tr.ln_s_latent, 1e-12)

    @pytest.mark.parametrize("missing_rate", [0.0, 0.3])
    def test_share_validity(self, missing_rate):
        panel, _ = generate_panel(DgpConfig(N=10, T=30, missing_rate=missing_rate))
        v = panel.masked("value")
        assert np.all((v[panel.mask] > 0) & (v[panel.mask] < 1))
        np.testing.assert_allclose(np.nansum(v, axis=0), 1.0, rtol=1e-13)
        assert panel.mask[:, -1].all()

    def test_stri_range(self):
        panel, tr = generate_panel(DgpConfig(N=10, T=30, eta=-0.5))
        assert np.all((panel.stri > 0) & (panel.stri <= 1))
        assert tr.mu == pytest.approx(-0.5 * tr.phi)

    @pytest.mark.parametrize("shock_dist", ["gaussian", "t"])
    def test_shocks_independent(self, shock_dist):
        cfg = DgpConfig(N=100, T=100, shock_dist=shock_dist)
        _, tr = generate_panel(cfg)
        dz = np.diff(tr.ln_z, axis=1).ravel()
        eps, delta = tr.eps[:, 1:].ravel(), tr.delta[:, 1:].ravel()
        corr = np.corrcoef(np.vstack([eps, delta, dz]))
        assert np.abs(corr[np.triu_indices(3, 1)]).max() < 0.05

    def test_deterministic(self):
        cfg = DgpConfig(N=5, T=9)
        a, ta = generate_panel(cfg, replication=3)
        b, tb = generate_panel(cfg, replication=3)
        np.testing.assert_array_equal(a.value, b.value)
        np.testing.assert_array_equal(ta.ln_z, tb.ln_z)
        c, _ = generate_panel(cfg, replication=4)
        assert not np.array_equal(a.value, c.value)

    def test_lambdas_shared_across_replications(self):
        cfg = DgpConfig(N=5, T=9)
        assert np.array_equal(generate_panel(cfg, 0)[1].lambdas, generate_panel(cfg, 1)[1].lambdas)
        np.testing.assert_allclose(realize_lambdas(cfg).sum(), 1.0)


class TestMonteCarlo:
    def test_acceptance_config(self):
        mc = acceptance_monte_carlo()
        assert abs(mc["sur"].bias) < 3 * mc["sur"].mc_se
        assert abs(mc["naive"].mean - (-1.0)) < 3 * mc["naive"].mc_se
        assert abs(mc["ivfe"].bias) < 3 * mc["ivfe"].mc_se
        assert mc.kappa == -1.0 and mc.reps == 200

    def test_consistency_ordering(self):
        mc = acceptance_monte_carlo()
        assert abs(mc["sur"].bias) < abs((1 - mc["naive"].mean) - mc.config.sigma)

    def test_workers_do_not_change_results(self):
        cfg = DgpConfig(N=8, T=15)
        a = run_monte_carlo(cfg, reps=6, workers=1)
        b = run_monte_carlo(cfg, reps=6, workers=2)
        for m in a.methods:
            np.testing.assert_array_equal(a[m].estimates, b[m].estimates)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())

    def test_failures_counted(self):
        # without a restrictiveness column the STRI pipeline cannot run
        mc = run_monte_carlo(DgpConfig(N=8, T=15), methods=("sur", "sur_stri"), reps=4)
        assert mc["sur_stri"].n_fail == 4 and mc["sur_stri"].n_ok == 0
        assert mc["sur_stri"].failures == {"not_applicable": 4}
        assert mc["sur_stri"].failure_rate == 1.0
        assert mc["sur"].failure_rate == 0.0
        json.dumps(mc.to_dict(), allow_nan=False)

    def test_all_methods_run(self):
        mc = run_monte_carlo(DgpConfig(N=8, T=20, eta=-0.5), methods=MC_METHODS, reps=3)
        assert set(mc.methods) == set(MC_METHODS)

    def test_summary_statistics(self):
        mc = run_monte_carlo(DgpConfig(N=8, T=15), methods=("sur",), reps=10)
        s = mc["sur"]
        assert s.rmse**2 == pytest.approx(s.bias**2 + s.sd**2 * (s.n_ok - 1) / s.n_ok, rel=1e-10)
        assert 0 <= s.coverage <= 1

    def test_reps_validated(self):
        with pytest.raises(ValueError):
            run_monte_carlo(DgpConfig(), reps=0)
