"""Linear estimation engines: OLS/WLS, 2SLS, two-block SUR and the delta method.

All solves go through QR factorisations of the (weighted or whitened)
design; ``X'X`` is never inverted explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .errors import IdentificationError, SingularDesignError, SingularRecoveryError

__all__ = [
    "LinearSystem",
    "RegressionResult",
    "SurSystem",
    "SurResult",
    "ols",
    "tsls",
    "sur_fgls",
    "delta_method_se",
    "numerical_gradient",
    "check_rank",
]


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Response, design and optional weights/instruments for one equation.

    ``absorbed_df`` counts degrees of freedom already spent outside the
    design, e.g. ``N + T - 1`` for a double-demeaned panel regression.
    """

    response: np.ndarray
    regressors: np.ndarray
    weights: np.ndarray | None = None
    instruments: np.ndarray | None = None
    names: Sequence[str] | None = None
    instrument_names: Sequence[str] | None = None
    absorbed_df: int = 0

    def __post_init__(self):
        y = np.asarray(self.response, dtype=float).reshape(-1)
        X = np.asarray(self.regressors, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"response has {y.shape[0]} rows, regressors {X.shape[0]}")
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "regressors", X)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape != y.shape:
                raise ValueError("weights must match the response length")
            if not np.all(w > 0):
                raise ValueError("weights must be strictly positive")
            object.__setattr__(self, "weights", w)
        if self.instruments is not None:
            W = np.asarray(self.instruments, dtype=float)
            if W.ndim == 1:
                W = W[:, None]
            if W.shape[0] != y.shape[0]:
                raise ValueError("instruments must have as many rows as the response")
            object.__setattr__(self, "instruments", W)
        if self.names is None:
            object.__setattr__(self, "names", tuple(f"x{j}" for j in range(X.shape[1])))
        if self.instrument_names is None and self.instruments is not None:
            object.__setattr__(
                self,
                "instrument_names",
                tuple(f"w{j}" for j in range(self.instruments.shape[1])),
            )
        if y.shape[0] <= X.shape[1]:
            raise SingularDesignError(f"need n > k, got n={y.shape[0]}, k={X.shape[1]}")

    @property
    def n(self) -> int:
        return self.response.shape[0]

    @property
    def k(self) -> int:
        return self.regressors.shape[1]


@dataclass(eq=False)
class RegressionResult:
    coefficients: np.ndarray
    cov: np.ndarray
    residuals: np.ndarray
    rss: float
    n: int
    k: int
    m: int
    estimator: str
    names: Sequence[str] = ()
    sigma2: float = np.nan
    df_resid: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    @property
    def tvalues(self) -> np.ndarray:
        return self.coefficients / self.se

    def coef(self, name: str) -> float:
        return float(self.coefficients[list(self.names).index(name)])

    def __repr__(self):
        rows = ", ".join(
            f"{n}={b:.4g} ({s:.3g})" for n, b, s in zip(self.names, self.coefficients, self.se)
        )
        return f"<RegressionResult {self.estimator}: {rows}; n={self.n}>"


def _rank_tol(s, shape):
    return np.finfo(float).eps * max(shape) * (s[0] if s.size else 0.0)


def check_rank(X, names=None, what="design"):
    """Raise :class:`SingularDesignError` naming the first dependent column."""
    X = np.asarray(X, dtype=float)
    s = linalg.svdvals(X)
    tol = _rank_tol(s, X.shape)
    if X.shape[1] and np.sum(s > tol) == X.shape[1]:
        return
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    for j in range(X.shape[1]):
        sj = linalg.svdvals(X[:, : j + 1])
        if np.sum(sj > _rank_tol(sj, X[:, : j + 1].shape)) < j + 1:
            raise SingularDesignError(
                f"{what} is rank deficient: column {names[j]!r} is (near) collinear "
                "with the preceding columns",
                column=names[j],
            )
    raise SingularDesignError(f"{what} is rank deficient")  # pragma: no cover


def _qr_solve(X, y):
    Q, R = linalg.qr(X, mode="economic")
    beta = linalg.solve_triangular(R, Q.T @ y)
    Rinv = linalg.solve_triangular(R, np.eye(R.shape[0]))
    return beta, Rinv @ Rinv.T


def ols(system: LinearSystem, robust: bool = False) -> RegressionResult:
    """Ordinary or weighted least squares.

    With weights ``w`` the objective is ``sum w_i e_i^2``; the classical
    covariance is ``s^2 (X'WX)^{-1}`` with ``s^2 = sum w e^2 / (n - k - absorbed)``.
    ``robust=True`` switches to the HC0 sandwich.
    """
    y, X = system.response, system.regressors
    check_rank(X, system.names)
    sw = np.ones_like(y) if system.weights is None else np.sqrt(system.weights)
    Xw, yw = X * sw[:, None], y * sw
    beta, xtx_inv = _qr_solve(Xw, yw)
    resid = y - X @ beta
    rss = float(np.sum((sw * resid) ** 2))
    df = system.n - system.k - system.absorbed_df
    sigma2 = rss / df if df > 0 else np.nan
    if robust:
        meat = (Xw * (sw * resid)[:, None] ** 2).T @ Xw
        cov = xtx_inv @ meat @ xtx_inv
    else:
        cov = sigma2 * xtx_inv
    cov = 0.5 * (cov + cov.T)
    return RegressionResult(
        coefficients=beta,
        cov=cov,
        residuals=resid,
        rss=rss,
        n=system.n,
        k=system.k,
        m=0,
        estimator="ols" if system.weights is None else "wls",
        names=tuple(system.names),
        sigma2=sigma2,
        df_resid=df,
    )


def tsls(system: LinearSystem, robust: bool = False) -> RegressionResult:
    """Two-stage least squares.

    ``system.instruments`` is the full instrument matrix (exogenous regressors
    included). The coefficient is ``(Xh'X)^{-1} Xh'y`` with ``Xh`` the
    projection of X on the instrument span. The first-stage fit is kept in
    ``result.extra``.
    """
    W = system.instruments
    if W is None:
        raise IdentificationError("tsls needs instruments")
    y, X = system.response, system.regressors
    n, k, m = system.n, system.k, W.shape[1]
    if m < k:
        raise IdentificationError(f"under-identified: {m} instruments for {k} regressors")
    check_rank(W, system.instrument_names, what="instrument matrix")
    Qw, _ = linalg.qr(W, mode="economic")
    Xhat = Qw @ (Qw.T @ X)
    # a column orthogonal to the instruments projects to rounding noise,
    # which a scale-relative rank check on Xhat alone would accept
    ratio = np.linalg.norm(Xhat, axis=0) / np.maximum(np.linalg.norm(X, axis=0), np.finfo(float).tiny)
    if np.any(ratio <= 1e-10):
        j = int(np.argmin(ratio))
        raise IdentificationError(
            f"weak design: regressor {system.names[j]!r} is orthogonal to the instruments"
        )
    try:
        check_rank(Xhat, system.names, what="projected design")
    except SingularDesignError as exc:
        raise IdentificationError(f"weak design: {exc}") from None
    beta, xhx_inv = _qr_solve(Xhat, y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    df = n - k - system.absorbed_df
    sigma2 = rss / df if df > 0 else np.nan
    if robust:
        meat = (Xhat * resid[:, None] ** 2).T @ Xhat
        cov = xhx_inv @ meat @ xhx_inv
    else:
        cov = sigma2 * xhx_inv
    cov = 0.5 * (cov + cov.T)
    return RegressionResult(
        coefficients=beta,
        cov=cov,
        residuals=resid,
        rss=rss,
        n=n,
        k=k,
        m=m,
        estimator="tsls",
        names=tuple(system.names),
        sigma2=sigma2,
        df_resid=df,
        extra={
            "fitted_regressors": Xhat,
            "first_stage_residuals": X - Xhat,
            "system": system,
        },
    )


@dataclass(frozen=True, eq=False)
class SurSystem:
    """Two equations whose errors are correlated only on linked rows.

    ``link[i]`` is the row of ``block_b`` paired with row ``i`` of
    ``block_a``. All other cross-equation error covariances are zero.
    """

    block_a: LinearSystem
    block_b: LinearSystem
    link: np.ndarray

    def __post_init__(self):
        link = np.asarray(self.link, dtype=int).reshape(-1)
        if link.shape[0] != self.block_a.n:
            raise ValueError("every block-A row needs exactly one linked block-B row")
        if link.min() < 0 or link.max() >= self.block_b.n:
            raise ValueError("link indices out of range for block B")
        if len(np.unique(link)) != link.shape[0]:
            raise ValueError("link must be one-to-one")
        object.__setattr__(self, "link", link)


@dataclass(eq=False)
class SurResult(RegressionResult):
    sigma: np.ndarray = None
    ols_cov: np.ndarray = None
    slices: tuple = ()
    iterations: int = 0
    fallback: bool = False
    warnings: list = field(default_factory=list)


def _residual_cov(ea, eb, link):
    # correlation from the linked pairs, scaled by full-sample variances;
    # mixing a linked-pair covariance with an all-rows variance can
    # imply |corr| > 1 in small samples
    s_aa = ea @ ea / ea.size
    s_bb = eb @ eb / eb.size
    el = eb[link]
    denom = np.sqrt(float(ea @ ea) * float(el @ el))
    corr = float(ea @ el) / denom if denom > 0 else 0.0
    s_ab = corr * np.sqrt(s_aa * s_bb)
    return np.array([[s_aa, s_ab], [s_ab, s_bb]])


def _is_pd(S):
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return False
    return bool(S[0, 0] > 0 and S[1, 1] > 0 and np.linalg.det(S) > 1e-14 * S[0, 0] * S[1, 1])


def _gls(sur, S):
    A, B, link = sur.block_a, sur.block_b, sur.link
    ka, kb = A.k, B.k
    L = np.linalg.cholesky(S)
    l11, l21, l22 = L[0, 0], L[1, 0], L[1, 1]
    XA = np.hstack([A.regressors, np.zeros((A.n, kb))])
    XB = np.hstack([np.zeros((B.n, ka)), B.regressors])
    # unmatched B rows: scale by 1/sqrt(s_bb); matched pairs: apply L^{-1}
    yb_w = B.response / np.sqrt(S[1, 1])
    Xb_w = XB / np.sqrt(S[1, 1])
    ya_w = A.response / l11
    Xa_w = XA / l11
    yb_w[link] = (B.response[link] - l21 * ya_w) / l22
    Xb_w[link] = (XB[link] - l21 * Xa_w) / l22
    beta, cov = _qr_solve(np.vstack([Xa_w, Xb_w]), np.concatenate([ya_w, yb_w]))
    return beta, 0.5 * (cov + cov.T)


def sur_fgls(
    sur: SurSystem,
    iterate: bool = True,
    tol: float = 1e-8,
    max_iter: int = 50,
    cross_covariance: str = "estimate",
) -> SurResult:
    """Feasible GLS for a two-equation system linked on matched rows.

    Step 1 fits each block by OLS. Step 2 estimates the 2x2 error covariance
    from the residuals (cross term from the linked pairs only). Step 3 runs
    GLS on the stacked system. With ``iterate=True`` steps 2-3 repeat until
    the coefficients move by less than ``tol`` or ``max_iter`` is reached.

    If the estimated covariance is not positive definite the result falls
    back to equation-by-equation OLS and ``fallback`` is set.

    Parameters
    ----------
    cross_covariance : {"estimate", "zero"}
        ``"zero"`` forces the off-diagonal term to zero (diagonal SUR).
    """
    A, B, link = sur.block_a, sur.block_b, sur.link
    ra, rb = ols(A), ols(B)
    ka, kb = A.k, B.k
    names = tuple(A.names) + tuple(B.names)
    slices = (slice(0, ka), slice(ka, ka + kb))
    beta_ols = np.concatenate([ra.coefficients, rb.coefficients])

    def residuals(beta):
        return (
            A.response - A.regressors @ beta[slices[0]],
            B.response - B.regressors @ beta[slices[1]],
        )

    def ols_cov(S):
        _, ia = _qr_solve(A.regressors, A.response)
        _, ib = _qr_solve(B.regressors, B.response)
        return linalg.block_diag(S[0, 0] * ia, S[1, 1] * ib)

    warnings = []
    S = _residual_cov(ra.residuals, rb.residuals, link)
    if cross_covariance == "zero":
        S[0, 1] = S[1, 0] = 0.0
    elif cross_covariance != "estimate":
        raise ValueError(f"unknown cross_covariance {cross_covariance!r}")

    beta, cov, fallback, it = beta_ols, None, False, 0
    if not _is_pd(S):
        fallback = True
        warnings.append("estimated cross-equation covariance not positive definite; using OLS")
    else:
        beta, cov = _gls(sur, S)
        it = 1
        while iterate and it < max_iter:
            ea, eb = residuals(beta)
            S_new = _residual_cov(ea, eb, link)
            if cross_covariance == "zero":
                S_new[0, 1] = S_new[1, 0] = 0.0
            if not _is_pd(S_new):
                warnings.append("iterated covariance lost positive definiteness; stopped iterating")
                break
            beta_new, cov_new = _gls(sur, S_new)
            it += 1
            step = np.max(np.abs(beta_new - beta))
            beta, cov, S = beta_new, cov_new, S_new
            if step < tol:
                break
        else:
            if iterate and it >= max_iter:
                warnings.append(f"SUR iteration stopped at max_iter={max_iter}")

    if fallback:
        cov = ols_cov(S)
    ea, eb = residuals(beta)
    return SurResult(
        coefficients=beta,
        cov=cov,
        residuals=np.concatenate([ea, eb]),
        rss=float(ea @ ea + eb @ eb),
        n=A.n + B.n,
        k=ka + kb,
        m=0,
        estimator="sur",
        names=names,
        sigma2=np.nan,
        df_resid=A.n + B.n - ka - kb,
        sigma=S,
        ols_cov=ols_cov(S),
        slices=slices,
        iterations=it,
        fallback=fallback,
        warnings=warnings,
        extra={"ols_coefficients": beta_ols},
    )


def numerical_gradient(f: Callable, x, step: float = 1e-6) -> np.ndarray:
    """Central finite differences with step ``step * max(1, |x_j|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        h = step * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        g[j] = (float(f(xp)) - float(f(xm))) / (2 * h)
    return g


def delta_method_se(
    estimates,
    cov,
    transform: Callable,
    gradient: Callable | None = None,
    check: bool = False,
    rtol: float = 1e-6,
):
    """Value and delta-method standard error of ``transform(estimates)``.

    Parameters
    ----------
    estimates : array_like
        Parameter vector.
    cov : array_like
        Covariance of ``estimates``.
    transform : callable
        Scalar function of the parameter vector.
    gradient : callable, optional
        Analytic gradient. When given and ``check`` is True it is compared
        with central finite differences and must agree to ``rtol``
        (norm-wise relative). The check is off by default because finite
        differences lose accuracy near ill-conditioned points.

    Returns
    -------
    value, se : float
    """
    x = np.asarray(estimates, dtype=float).reshape(-1)
    V = np.atleast_2d(np.asarray(cov, dtype=float))
    if V.shape != (x.size, x.size):
        raise ValueError(f"cov has shape {V.shape}, expected {(x.size, x.size)}")
    with np.errstate(divide="ignore", invalid="ignore"):
        value = float(transform(x))
        g = numerical_gradient(transform, x) if gradient is None else np.asarray(gradient(x), float)
    if not np.isfinite(value) or not np.all(np.isfinite(g)):
        raise SingularRecoveryError("transform or its gradient is not finite at the estimates")
    if gradient is not None and check:
        with np.errstate(divide="ignore", invalid="ignore"):
            g_fd = numerical_gradient(transform, x)
        scale = max(np.linalg.norm(g), np.finfo(float).tiny)
        if not np.linalg.norm(g - g_fd) <= rtol * scale + 1e-9:
            raise ValueError(f"analytic gradient {g} disagrees with finite differences {g_fd}")
    var = float(g @ V @ g)
    return value, float(np.sqrt(max(var, 0.0)))
