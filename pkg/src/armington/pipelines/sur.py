"""Supply-at-normalization plus equilibrium-equation estimation by SUR.

At the normalization period ``theta`` import prices are set to one, so the
cross-section ``-ln Z_i,theta = tau + omega ln S_i,theta + delta`` identifies
the supply slope ``omega``. The double-demeaned equilibrium regression
``[ln S] = kappa [ln Z]`` identifies ``kappa = gamma / (1 - gamma omega)``.
Both are fit jointly and ``sigma = 1 - kappa / (1 + kappa omega)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, NotApplicableError, NumericalError, SingularRecoveryError
from ..estimators import LinearSystem, SurSystem, check_rank, delta_method_se, ols, sur_fgls
from ..panel import Panel
from ._common import absorbed_df, cell_index, demeaned, log_shares
from .report import MethodReport

__all__ = [
    "recover_sigma",
    "recover_sigma_gradient",
    "recover_eta",
    "recover_eta_gradient",
    "compute_erpt",
    "normalization_rss",
    "select_normalization_point",
    "resolve_theta",
    "naive_slope",
    "estimate_sur",
    "estimate_sur_stri",
    "CorrectionLine",
    "BENCHMARK_LINE",
    "apply_benchmark_correction",
]

SINGULAR_TOL = 1e-10
MIN_CROSS_SECTION = 3


def _denominator(kappa, omega):
    den = 1.0 + kappa * omega
    if abs(den) <= SINGULAR_TOL:
        raise SingularRecoveryError(
            f"1 + kappa*omega = {den:.3g} is numerically zero (kappa={kappa:.6g}, omega={omega:.6g})"
        )
    return den


def recover_sigma(kappa: float, omega: float) -> float:
    """Trade elasticity ``1 - kappa / (1 + kappa omega)``."""
    return 1.0 - kappa / _denominator(kappa, omega)


def recover_sigma_gradient(kappa: float, omega: float) -> np.ndarray:
    """Gradient of :func:`recover_sigma` with respect to ``(kappa, omega)``."""
    den = _denominator(kappa, omega)
    return np.array([-1.0, kappa * kappa]) / den**2


def recover_eta(mu: float, kappa: float, omega: float) -> float:
    """Restrictiveness elasticity ``mu / (1 + kappa omega)``."""
    return mu / _denominator(kappa, omega)


def recover_eta_gradient(mu, kappa, omega) -> np.ndarray:
    """Gradient of :func:`recover_eta` with respect to ``(kappa, omega, mu)``."""
    den = _denominator(kappa, omega)
    return np.array([-mu * omega / den**2, -mu * kappa / den**2, 1.0 / den])


def compute_erpt(kappa: float, omega: float, cov=None):
    """Exchange-rate pass-through ``phi = 1 + kappa omega`` and its SE.

    ``cov`` is the 2x2 covariance of ``(kappa, omega)``; without it the SE
    is nan.
    """
    phi = 1.0 + kappa * omega
    if cov is None:
        return phi, float("nan")
    g = np.array([omega, kappa])
    return phi, float(np.sqrt(max(g @ np.asarray(cov, float) @ g, 0.0)))


def _supply_rows(ln_s, ln_z, mask, j):
    rows = np.flatnonzero(mask[:, j])
    y = -ln_z[rows, j]
    X = np.column_stack([np.ones(rows.size), ln_s[rows, j]])
    return rows, y, X


def normalization_rss(panel: Panel) -> dict:
    """RSS of the supply cross-section at every period with 3+ countries."""
    ln_s, ln_z = log_shares(panel), panel.log("fx_rate")
    out = {}
    for j, t in enumerate(panel.periods):
        if panel.mask[:, j].sum() < MIN_CROSS_SECTION:
            continue
        rows, y, X = _supply_rows(ln_s, ln_z, panel.mask, j)
        try:
            out[t] = ols(LinearSystem(y, X, names=("tau", "omega"))).rss
        except NumericalError:
            continue
    return out


def select_normalization_point(panel: Panel, rel_tol: float = 1e-12) -> int:
    """Period minimising the supply cross-section RSS; ties go to the latest."""
    rss = normalization_rss(panel)
    if not rss:
        raise DimensionError(f"no period has {MIN_CROSS_SECTION}+ countries for the supply regression")
    best = min(rss.values())
    tied = [t for t, r in rss.items() if r <= best + rel_tol * max(best, np.finfo(float).tiny)]
    return max(tied)


def resolve_theta(panel: Panel, theta="min-rss"):
    """Turn a normalization policy into a period label.

    Returns ``(period, policy)`` with policy one of ``min-rss``, ``last`` or
    ``override``.
    """
    if theta is None or theta == "min-rss":
        return select_normalization_point(panel), "min-rss"
    if theta == "last":
        eligible = [t for j, t in enumerate(panel.periods) if panel.mask[:, j].sum() >= MIN_CROSS_SECTION]
        if not eligible:
            raise DimensionError(f"no period has {MIN_CROSS_SECTION}+ countries")
        return eligible[-1], "last"
    try:
        t = int(theta)
    except (TypeError, ValueError):
        raise ValueError(f"theta must be 'min-rss', 'last' or a period, got {theta!r}") from None
    panel.period_index(t)
    return t, "override"


def naive_slope(panel: Panel):
    """OLS of ``[ln S]`` on ``[ln Z]`` (the equilibrium regression alone)."""
    s = demeaned(panel, log_shares(panel), "ln_share")
    z = demeaned(panel, panel.log("fx_rate"), "ln_fx")
    return ols(LinearSystem(s.flat(), z.flat()[:, None], names=("kappa",), absorbed_df=absorbed_df(panel.mask)))


def _build_sur(panel: Panel, theta, extra_regressor=None):
    theta, policy = resolve_theta(panel, theta)
    j = panel.period_index(theta)
    mask = panel.mask
    if mask[:, j].sum() < MIN_CROSS_SECTION:
        raise DimensionError(f"period {theta} has fewer than {MIN_CROSS_SECTION} countries")
    ln_s, ln_z = log_shares(panel), panel.log("fx_rate")
    s = demeaned(panel, ln_s, "ln_share")
    z = demeaned(panel, ln_z, "ln_fx")
    cols, names = [z.flat()], ["kappa"]
    if extra_regressor is not None:
        cols.append(extra_regressor.flat())
        names.append("mu")
    XB = np.column_stack(cols)
    if extra_regressor is not None:
        check_rank(XB, names, what="equilibrium design ([ln Z], [ln R]) multicollinearity check")
    block_b = LinearSystem(s.flat(), XB, names=tuple(names), absorbed_df=absorbed_df(mask))
    rb = ols(block_b)
    scale = max(1.0, float(np.abs(s.flat()).max()))
    if abs(rb.residuals.mean()) > SINGULAR_TOL * scale:
        raise NumericalError(
            f"equilibrium residual mean {rb.residuals.mean():.3e} is not zero; demeaning drifted"
        )
    rows, y, X = _supply_rows(ln_s, ln_z, mask, j)
    block_a = LinearSystem(y, X, names=("tau", "omega"))
    link = cell_index(mask)[rows, j]
    return SurSystem(block_a, block_b, link), theta, policy


def _coef_block(res):
    b = dict(zip(res.names, res.coefficients))
    idx = {n: i for i, n in enumerate(res.names)}
    return b, idx


def estimate_sur(panel: Panel, theta="min-rss", iterate: bool = True) -> MethodReport:
    """Joint supply + equilibrium estimation and elasticity recovery.

    Parameters
    ----------
    theta : {"min-rss", "last"} or int
        Normalization period policy, or an explicit period label.
    iterate : bool
        Iterate the FGLS covariance to convergence (otherwise two-step).
    """
    system, theta, policy = _build_sur(panel, theta)
    res = sur_fgls(system, iterate=iterate)
    b, idx = _coef_block(res)
    kappa, omega = b["kappa"], b["omega"]
    ko = [idx["kappa"], idx["omega"]]
    cov_ko = res.cov[np.ix_(ko, ko)]
    sigma, sigma_se = delta_method_se(
        [kappa, omega], cov_ko,
        lambda p: recover_sigma(p[0], p[1]),
        gradient=lambda p: recover_sigma_gradient(p[0], p[1]),
    )
    phi, phi_se = compute_erpt(kappa, omega, cov_ko)
    se = res.se
    ols_b = dict(zip(res.names, res.extra["ols_coefficients"]))
    return MethodReport(
        method="sur",
        sigma=sigma,
        sigma_se=sigma_se,
        intermediates={
            "kappa": kappa, "kappa_se": se[idx["kappa"]],
            "omega": omega, "omega_se": se[idx["omega"]],
            "tau": b["tau"], "tau_se": se[idx["tau"]],
            "phi": phi, "phi_se": phi_se,
            "kappa_ols": ols_b["kappa"], "omega_ols": ols_b["omega"],
        },
        theta=theta,
        instruments=[],
        warnings=[f"theta selected by {policy}"] + list(res.warnings),
        n_obs=res.n,
    )


def estimate_sur_stri(panel: Panel, theta="min-rss", iterate: bool = True) -> MethodReport:
    """SUR with the log restrictiveness index as a second equilibrium regressor.

    Cells with missing or non-positive STRI are dropped before any
    transform; the count is reported in the warnings.
    """
    if not panel.has_stri:
        raise NotApplicableError("STRI-augmented SUR needs a stri column")
    with np.errstate(invalid="ignore"):
        ok = np.isfinite(panel.stri) & (panel.stri > 0)
    flagged = int((panel.mask & ~ok).sum())
    warnings = []
    if flagged:
        warnings.append(f"{flagged} cells with missing or zero STRI dropped")
        panel = panel.restrict(ok).prune()
    ln_r = np.log(np.where(panel.mask, panel.stri, np.nan))
    r = demeaned(panel, ln_r, "ln_stri")
    system, theta, policy = _build_sur(panel, theta, extra_regressor=r)
    res = sur_fgls(system, iterate=iterate)
    b, idx = _coef_block(res)
    kappa, omega, mu = b["kappa"], b["omega"], b["mu"]
    kom = [idx["kappa"], idx["omega"], idx["mu"]]
    cov = res.cov[np.ix_(kom, kom)]
    sigma, sigma_se = delta_method_se(
        [kappa, omega], cov[:2, :2],
        lambda p: recover_sigma(p[0], p[1]),
        gradient=lambda p: recover_sigma_gradient(p[0], p[1]),
    )
    eta, eta_se = delta_method_se(
        [kappa, omega, mu], cov,
        lambda p: recover_eta(p[2], p[0], p[1]),
        gradient=lambda p: recover_eta_gradient(p[2], p[0], p[1]),
    )
    phi, phi_se = compute_erpt(kappa, omega, cov[:2, :2])
    se = res.se
    return MethodReport(
        method="sur_stri",
        sigma=sigma,
        sigma_se=sigma_se,
        intermediates={
            "kappa": kappa, "kappa_se": se[idx["kappa"]],
            "omega": omega, "omega_se": se[idx["omega"]],
            "tau": b["tau"], "tau_se": se[idx["tau"]],
            "mu": mu, "mu_se": se[idx["mu"]],
            "eta": eta, "eta_se": eta_se,
            "phi": phi, "phi_se": phi_se,
        },
        theta=theta,
        warnings=[f"theta selected by {policy}"] + warnings + list(res.warnings),
        n_obs=res.n,
    )


@dataclass(frozen=True)
class CorrectionLine:
    """Affine map from SUR elasticities to the IV benchmark scale."""

    intercept: float = -0.879
    slope: float = 2.000
    intercept_se: float = 0.176
    slope_se: float = 0.093
    adj_r2: float = 0.987

    def se_at(self, sigma: float, sigma_se: float = 0.0) -> float:
        """SE of the corrected value, treating line coefficients as independent."""
        return float(np.sqrt(self.intercept_se**2 + (sigma * self.slope_se) ** 2 + (self.slope * sigma_se) ** 2))


BENCHMARK_LINE = CorrectionLine()


def apply_benchmark_correction(sigma_sur: float, line: CorrectionLine = BENCHMARK_LINE, sigma_se=None):
    """Map a SUR elasticity onto the benchmark scale: ``a + b * sigma``.

    Never applied by the estimators themselves; callers opt in.

    Returns
    -------
    value, se : float
        ``se`` combines the line's coefficient SEs and, if given, ``sigma_se``.
    """
    value = line.intercept + line.slope * sigma_sur
    return value, line.se_at(sigma_sur, sigma_se or 0.0)
