"""End-to-end elasticity estimators built on the panel and estimator layers."""

from .feenstra import (
    DERIVATIVES,
    construct_iiv,
    estimate_fm,
    estimate_iiv,
    fm_alphas,
    fm_from_series,
    fm_roots,
    iiv_series,
    reference_differences,
    select_root,
)
from .ivfe import estimate_ivfe
from .report import METHODS, MethodReport, diagnostics_to_tsv, format_estimate, reports_to_tsv
from .sur import (
    BENCHMARK_LINE,
    CorrectionLine,
    apply_benchmark_correction,
    compute_erpt,
    estimate_sur,
    estimate_sur_stri,
    naive_slope,
    normalization_rss,
    recover_eta,
    recover_eta_gradient,
    recover_sigma,
    recover_sigma_gradient,
    resolve_theta,
    select_normalization_point,
)


def estimate(panel, method, *, theta="min-rss", sur_iterate=True, fm_differences=False,
             ivfe_instruments="auto", iiv_instruments="auto"):
    """Dispatch to one estimator by method tag."""
    if method == "ivfe":
        return estimate_ivfe(panel, instruments=ivfe_instruments)
    if method == "fm":
        return estimate_fm(panel, differences=fm_differences)
    if method == "iiv":
        fm = estimate_fm(panel, differences=fm_differences)
        return estimate_iiv(panel, instruments=iiv_instruments, fm_report=fm)
    if method == "sur":
        return estimate_sur(panel, theta=theta, iterate=sur_iterate)
    if method == "sur_stri":
        return estimate_sur_stri(panel, theta=theta, iterate=sur_iterate)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


__all__ = [
    "MethodReport", "METHODS", "estimate",
    "estimate_ivfe", "estimate_fm", "estimate_iiv", "estimate_sur", "estimate_sur_stri",
    "fm_alphas", "fm_roots", "fm_from_series", "select_root", "reference_differences",
    "iiv_series", "construct_iiv", "DERIVATIVES",
    "recover_sigma", "recover_sigma_gradient", "recover_eta", "recover_eta_gradient",
    "compute_erpt", "normalization_rss", "select_normalization_point", "resolve_theta",
    "naive_slope", "CorrectionLine", "BENCHMARK_LINE", "apply_benchmark_correction",
    "format_estimate", "reports_to_tsv", "diagnostics_to_tsv",
]
