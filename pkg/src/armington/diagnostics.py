"""Instrument diagnostics: first-stage strength, overidentification, endogeneity.

All three assume classical (homoskedastic) errors and a single endogenous
regressor, which is the setting of every IV regression in this package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .errors import DegenerateError, SingularDesignError
from .estimators import RegressionResult, check_rank

__all__ = [
    "TestResult",
    "cragg_donald_f",
    "sargan_test",
    "davidson_mackinnon_test",
    "F_CAP",
]

#: reported value when the first stage fits perfectly
F_CAP = 1e12


@dataclass(frozen=True)
class TestResult:
    """Outcome of one specification test.

    ``p_value`` is None for the Cragg-Donald display (rule of thumb only) and
    for tests that do not apply (e.g. Sargan on a just-identified system).
    """

    __test__ = False  # not a pytest class

    name: str
    statistic: float | None
    p_value: float | None
    df: tuple
    verdict: str
    applicable: bool = True
    note: str = ""

    def to_dict(self):
        return {
            "name": self.name,
            "stat": _finite_or_none(self.statistic),
            "p": _finite_or_none(self.p_value),
            "df": list(self.df),
            "verdict": self.verdict,
        }


def _finite_or_none(x):
    return float(x) if x is not None and np.isfinite(x) else None


def _residualize(A, C):
    """Residuals of the columns of ``A`` after projection on ``C``."""
    if C is None or C.shape[1] == 0:
        return A
    Q, _ = linalg.qr(C, mode="economic")
    return A - Q @ (Q.T @ A)


def _as2d(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def cragg_donald_f(endog, instruments, exog=None, absorbed_df: int = 0, threshold: float = 10.0):
    """First-stage F of the excluded instruments for one endogenous regressor.

    Included exogenous regressors ``exog`` are partialled out of both the
    endogenous variable and the instruments first. With one endogenous
    regressor the Cragg-Donald Wald F reduces to this statistic.

    Returns
    -------
    TestResult
        ``verdict`` is ``"pass"`` when F exceeds ``threshold``. A perfect
        first stage reports ``F_CAP``.
    """
    x = np.asarray(endog, dtype=float).reshape(-1)
    Z = _as2d(instruments)
    C = None if exog is None else _as2d(exog)
    n, m = Z.shape
    kc = 0 if C is None else C.shape[1]
    x_t = _residualize(x[:, None], C)[:, 0]
    Z_t = _residualize(Z, C)
    check_rank(Z_t, what="excluded instruments")
    rss_r = float(x_t @ x_t)
    if rss_r <= 1e-20 * float(x @ x):
        raise DegenerateError("endogenous regressor has no variation after partialling")
    Q, _ = linalg.qr(Z_t, mode="economic")
    fitted = Q @ (Q.T @ x_t)
    e = x_t - fitted
    rss_u = float(e @ e)
    df2 = n - m - kc - absorbed_df
    if df2 <= 0:
        raise DegenerateError(f"no residual degrees of freedom (n={n}, m={m}, controls={kc})")
    if rss_u <= 1e-13 * rss_r:
        F = F_CAP
    else:
        F = min(((rss_r - rss_u) / m) / (rss_u / df2), F_CAP)
    return TestResult(
        name="cragg_donald_f",
        statistic=float(F),
        p_value=None,
        df=(m, df2),
        verdict="pass" if F > threshold else "fail",
        note=f"rule of thumb F > {threshold:g}",
    )


def sargan_test(result: RegressionResult, instruments=None, alpha: float = 0.05) -> TestResult:
    """Sargan overidentification test ``n * R^2`` of 2SLS residuals on instruments.

    ``R^2`` is uncentered, i.e. ``e'P_W e / e'e``; include a constant among
    the instruments when the model has one.
    """
    if instruments is None:
        instruments = result.extra["system"].instruments
    W = _as2d(instruments)
    n, m = W.shape
    k = result.k
    if m <= k:
        return TestResult(
            name="sargan",
            statistic=None,
            p_value=None,
            df=(0,),
            verdict="n/a",
            applicable=False,
            note="just-identified: no overidentifying restrictions",
        )
    e = result.residuals
    Q, _ = linalg.qr(W, mode="economic")
    pe = Q.T @ e
    ee = float(e @ e)
    if ee <= 0:
        raise DegenerateError("2SLS residuals are identically zero")
    stat = n * float(pe @ pe) / ee
    df = m - k
    p = float(stats.chi2.sf(stat, df))
    return TestResult(
        name="sargan",
        statistic=float(stat),
        p_value=p,
        df=(df,),
        verdict="reject" if p < alpha else "fail to reject",
    )


def davidson_mackinnon_test(
    response,
    regressors,
    instruments,
    endogenous=(0,),
    absorbed_df: int = 0,
    alpha: float = 0.05,
) -> TestResult:
    """Davidson-MacKinnon augmented-regression test of regressor exogeneity.

    First-stage residuals of the endogenous columns (projected on
    ``instruments``) are appended to the OLS design; their joint F statistic
    is the test. When the residuals vanish (the regressors lie in the
    instrument span) the statistic is 0.
    """
    y = np.asarray(response, dtype=float).reshape(-1)
    X = _as2d(regressors)
    W = _as2d(instruments)
    endogenous = list(endogenous)
    q = len(endogenous)
    Q, _ = linalg.qr(W, mode="economic")
    Xe = X[:, endogenous]
    V = Xe - Q @ (Q.T @ Xe)
    n, k = X.shape
    df2 = n - k - q - absorbed_df
    if df2 <= 0:
        raise DegenerateError("no residual degrees of freedom for the augmented regression")
    if np.linalg.norm(V) <= 1e-12 * max(np.linalg.norm(Xe), 1.0):
        return TestResult(
            name="davidson_mackinnon",
            statistic=0.0,
            p_value=1.0,
            df=(q, df2),
            verdict="fail to reject",
            note="regressors lie in the instrument span",
        )
    aug = np.hstack([X, V])
    try:
        check_rank(aug, what="augmented design")
    except SingularDesignError as exc:
        raise DegenerateError(f"first-stage residuals collinear with design: {exc}") from None
    Qx, _ = linalg.qr(X, mode="economic")
    Qa, _ = linalg.qr(aug, mode="economic")
    e_r = y - Qx @ (Qx.T @ y)
    e_u = y - Qa @ (Qa.T @ y)
    rss_r, rss_u = float(e_r @ e_r), float(e_u @ e_u)
    if rss_u <= 0:
        raise DegenerateError("augmented regression fits perfectly")
    F = ((rss_r - rss_u) / q) / (rss_u / df2)
    F = max(F, 0.0)
    p = float(stats.f.sf(F, q, df2))
    return TestResult(
        name="davidson_mackinnon",
        statistic=float(F),
        p_value=p,
        df=(q, df2),
        verdict="reject" if p < alpha else "fail to reject",
    )
