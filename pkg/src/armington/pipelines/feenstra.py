"""Feenstra-style moment-product estimator (FM) and its implicit instrument (IIV).

The demand and reverse equations ``s = gamma z + mu`` and ``z = rho s + nu``
with independent errors imply, after multiplying the errors,

    z^2 = alpha1 s^2 + alpha2 s z + xi,   alpha1 = -rho/gamma,
                                          alpha2 = (1 + gamma rho)/gamma.

Country time-averages of that relation are fit by WLS and ``(gamma, rho)``
are recovered as a root of ``alpha1 g^2 + alpha2 g - 1 = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..diagnostics import cragg_donald_f, davidson_mackinnon_test, sargan_test
from ..errors import ArmingtonError, ComplexRootsError, DegenerateError, DimensionError
from ..estimators import LinearSystem, delta_method_se, ols, tsls
from ..panel import Panel
from ._common import absorbed_df, demeaned_logs, log_shares
from .report import MethodReport

__all__ = [
    "FmFit",
    "fm_alphas",
    "fm_roots",
    "select_root",
    "fm_from_series",
    "estimate_fm",
    "reference_differences",
    "iiv_series",
    "construct_iiv",
    "estimate_iiv",
    "DERIVATIVES",
]

DERIVATIVES = ("lag", "lead", "diff")


def fm_alphas(gamma: float, rho: float):
    """Forward map ``(gamma, rho) -> (alpha1, alpha2)``."""
    return -rho / gamma, (1.0 + gamma * rho) / gamma


def fm_roots(alpha1: float, alpha2: float, degenerate_tol: float = 1e-10):
    """Both ``(gamma, rho)`` pairs consistent with ``(alpha1, alpha2)``.

    Returns a list of one pair in the degenerate case ``alpha1 ~ 0`` (the
    single root ``gamma = 1 / alpha2``) and two pairs otherwise. Uses the
    cancellation-free form of the quadratic formula.

    Raises
    ------
    ComplexRootsError
        If ``alpha2^2 + 4 alpha1 < 0``.
    """
    disc = alpha2 * alpha2 + 4.0 * alpha1
    if disc < 0:
        raise ComplexRootsError(
            f"complex roots: alpha2^2 + 4 alpha1 = {disc:.4g} < 0 "
            f"(alpha1={alpha1:.6g}, alpha2={alpha2:.6g})",
            alpha1,
            alpha2,
        )
    if abs(alpha1) <= degenerate_tol * max(1.0, alpha2 * alpha2):
        if alpha2 == 0:
            raise DegenerateError("alpha1 and alpha2 both vanish; gamma is not identified")
        g = 1.0 / alpha2
        return [(g, -alpha1 * g)]
    q = -0.5 * (alpha2 + np.copysign(np.sqrt(disc), alpha2))
    g1, g2 = q / alpha1, -1.0 / q
    return [(g1, -alpha1 * g1), (g2, -alpha1 * g2)]


def select_root(pairs) -> int:
    """Index of the preferred pair: the unique ``gamma < 0``, else min ``|rho|``."""
    negative = [j for j, (g, _) in enumerate(pairs) if g < 0]
    if len(negative) == 1:
        return negative[0]
    candidates = negative or list(range(len(pairs)))
    return min(candidates, key=lambda j: abs(pairs[j][1]))


def _gamma_gradient(gamma, alpha1, alpha2):
    # implicit differentiation of alpha1 g^2 + alpha2 g - 1 = 0
    d = 2.0 * alpha1 * gamma + alpha2
    return -np.array([gamma * gamma, gamma]) / d


@dataclass
class FmFit:
    gamma: float
    gamma_se: float
    rho: float
    alpha: np.ndarray
    alpha_cov: np.ndarray
    roots: list
    weights: np.ndarray
    rows: np.ndarray
    means: dict
    degenerate: bool = False
    warnings: list = field(default_factory=list)


def fm_from_series(s, z, mask, min_periods: int = 3) -> FmFit:
    """Run FM on aligned ``(N, T)`` arrays of transformed log shares and rates.

    Countries with fewer than ``min_periods`` present cells are skipped.
    """
    s = np.asarray(s, dtype=float)
    z = np.asarray(z, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    warnings = []
    Ti = mask.sum(axis=1)
    rows = np.flatnonzero(Ti >= min_periods)
    if len(rows) < Ti.size:
        warnings.append(f"{Ti.size - len(rows)} countries with fewer than {min_periods} periods skipped")
    if len(rows) < 3:
        raise DimensionError(f"FM needs at least 3 countries with {min_periods}+ periods, got {len(rows)}")
    m = mask[rows]
    S = np.where(m, s[rows], 0.0)
    Z = np.where(m, z[rows], 0.0)
    U, W1, W2 = Z * Z, S * S, S * Z
    T = Ti[rows].astype(float)
    Ubar, W1bar, W2bar = U.sum(1) / T, W1.sum(1) / T, W2.sum(1) / T
    X = np.column_stack([W1bar, W2bar])
    names = ("alpha1", "alpha2")

    first = ols(LinearSystem(Ubar, X, names=names))
    a1, a2 = first.coefficients
    xi = np.where(m, U - a1 * W1 - a2 * W2, 0.0)
    xi_mean = xi.sum(1) / T
    v = np.where(m, (xi - xi_mean[:, None]) ** 2, 0.0).sum(1) / (T - 1)
    floor = np.finfo(float).eps * max(float(v.max()), np.finfo(float).tiny)
    if np.any(v <= floor):
        warnings.append("zero within-country residual variance; weight floored")
        v = np.maximum(v, floor)
    w = T / v
    second = ols(LinearSystem(Ubar, X, weights=w, names=names))
    a1, a2 = second.coefficients

    pairs = fm_roots(a1, a2)
    degenerate = len(pairs) == 1
    if degenerate:
        warnings.append("alpha1 ~ 0: single-root limit gamma = 1/alpha2 reported")
    j = select_root(pairs)
    gamma, rho = pairs[j]

    def gamma_of(a):
        return 1.0 / a[1] if degenerate else fm_roots(a[0], a[1])[j][0]

    _, gamma_se = delta_method_se(
        second.coefficients,
        second.cov,
        gamma_of,
        gradient=lambda a: _gamma_gradient(gamma_of(a), a[0], a[1]),
    )
    return FmFit(
        gamma=float(gamma),
        gamma_se=gamma_se,
        rho=float(rho),
        alpha=second.coefficients,
        alpha_cov=second.cov,
        roots=pairs,
        weights=w,
        rows=rows,
        means={"U": Ubar, "W1": W1bar, "W2": W2bar, "T": T},
        degenerate=degenerate,
        warnings=warnings,
    )


def reference_differences(panel: Panel, reference: str | None = None):
    """Time differences of log shares and rates relative to a reference country.

    Returns ``(ds, dz, mask, reference)`` where the arrays have one column
    fewer than the panel and the reference row is excluded.
    """
    if reference is None:
        reference = panel.countries[int(np.argmax(panel.counts()))]
    ref = panel.countries.index(reference)
    ls, lz = log_shares(panel), panel.log("fx_rate")
    ds, dz = np.diff(ls, axis=1), np.diff(lz, axis=1)
    ok = panel.mask[:, 1:] & panel.mask[:, :-1]
    ok = ok & ok[ref]
    ds, dz = ds - ds[ref], dz - dz[ref]
    keep = np.array([i for i in range(panel.N) if i != ref])
    return ds[keep], dz[keep], ok[keep], reference


def estimate_fm(
    panel: Panel,
    differences: bool = False,
    reference: str | None = None,
    min_periods: int = 3,
) -> MethodReport:
    """Feenstra's method on double-demeaned data (or reference differences).

    Both root pairs are kept in ``report.roots``; ``sigma = 1 - gamma`` for
    the selected pair, with a delta-method standard error from the WLS
    covariance of ``(alpha1, alpha2)``.
    """
    if differences:
        s, z, mask, ref = reference_differences(panel, reference)
        notes = [f"reference-country differences (reference {ref})"]
    else:
        sd, zd = demeaned_logs(panel)
        s, z, mask = sd.values, zd.values, panel.mask
        notes = []
    fit = fm_from_series(s, z, mask, min_periods=min_periods)
    a_se = np.sqrt(np.diag(fit.alpha_cov))
    return MethodReport(
        method="fm",
        sigma=1.0 - fit.gamma,
        sigma_se=fit.gamma_se,
        intermediates={
            "rho": fit.rho,
            "alpha1": fit.alpha[0],
            "alpha1_se": a_se[0],
            "alpha2": fit.alpha[1],
            "alpha2_se": a_se[1],
        },
        roots=fit.roots,
        warnings=notes + fit.warnings,
        n_obs=int(mask[fit.rows].sum()),
    )


def iiv_series(s, z, mask, rho: float, derivatives=()):
    """Implicit instrument ``nu = z - rho s`` and its requested derivatives.

    Derivatives are ``lag`` (previous period), ``lead`` (next period) and
    ``diff`` (first difference). Cells whose neighbour is absent, including
    the panel edges, are nan.
    """
    if not np.isfinite(rho):
        raise ValueError("rho must be finite")
    mask = np.asarray(mask, dtype=bool)
    nu = np.where(mask, np.asarray(z, float) - rho * np.asarray(s, float), np.nan)
    out = {"nu": nu}
    prev = np.full_like(nu, np.nan)
    prev[:, 1:] = nu[:, :-1]
    nxt = np.full_like(nu, np.nan)
    nxt[:, :-1] = nu[:, 1:]
    for d in derivatives:
        if d == "lag":
            out[d] = np.where(mask, prev, np.nan)
        elif d == "lead":
            out[d] = np.where(mask, nxt, np.nan)
        elif d == "diff":
            out[d] = np.where(mask, nu - prev, np.nan)
        else:
            raise ValueError(f"unknown derivative instrument {d!r}; choose from {DERIVATIVES}")
    return out


def construct_iiv(panel: Panel, rho_hat: float, derivatives=()):
    """IIV series ``[ln Z] - rho_hat [ln S]`` on the panel mask, as a dict of arrays."""
    s, z = demeaned_logs(panel)
    return iiv_series(s.values, z.values, panel.mask, rho_hat, derivatives)


def estimate_iiv(
    panel: Panel,
    instruments="auto",
    rho_hat: float | None = None,
    alpha: float = 0.05,
    fm_report: MethodReport | None = None,
) -> MethodReport:
    """2SLS of ``[ln S]`` on ``[ln Z]`` using the FM implicit instrument.

    ``instruments`` is ``"auto"`` (start from ``nu`` and add lag, lead and
    first difference one at a time while the Sargan test passes at
    ``alpha``), ``"primary"`` (``nu`` only) or an explicit list of
    derivative names to use alongside ``nu``.
    """
    warnings = []
    if rho_hat is None:
        fm_report = fm_report or estimate_fm(panel)
        rho_hat = fm_report.get("rho")
    s, z = demeaned_logs(panel)
    mask = panel.mask
    adf = absorbed_df(mask)
    iiv = iiv_series(s.values, z.values, mask, rho_hat, DERIVATIVES)

    def fit(names):
        cols = [iiv[n] for n in names]
        rows = mask & np.logical_and.reduce([np.isfinite(c) for c in cols])
        system = LinearSystem(
            s.values[rows], z.values[rows][:, None],
            instruments=np.column_stack([c[rows] for c in cols]),
            names=("gamma",), instrument_names=tuple(names), absorbed_df=adf,
        )
        return tsls(system)

    if instruments == "primary":
        chosen = ["nu"]
    elif instruments == "auto":
        chosen = ["nu"]
        for d in DERIVATIVES:
            try:
                trial = fit(chosen + [d])
            except ArmingtonError as exc:  # a failed candidate is just skipped
                warnings.append(f"derivative instrument {d} skipped: {exc}")
                continue
            if sargan_test(trial).p_value >= alpha:
                chosen = chosen + [d]
    else:
        chosen = ["nu"] + [d for d in instruments if d != "nu"]
    result = fit(chosen)
    system = result.extra["system"]
    x = system.regressors[:, 0]
    cd = cragg_donald_f(x, system.instruments, absorbed_df=adf)
    diagnostics = [
        cd,
        sargan_test(result),
        davidson_mackinnon_test(system.response, x, system.instruments, absorbed_df=adf, alpha=alpha),
    ]
    if cd.verdict == "fail":
        warnings.append(f"weak first stage (F = {cd.statistic:.2f} <= 10)")
    gamma, gamma_se = result.coefficients[0], result.se[0]
    return MethodReport(
        method="iiv",
        sigma=1.0 - gamma,
        sigma_se=gamma_se,
        intermediates={"rho": rho_hat},
        diagnostics=diagnostics,
        instruments=chosen,
        warnings=warnings,
        n_obs=result.n,
    )

