"""Per-method estimation report and its JSON/TSV renderings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..diagnostics import TestResult

INTERMEDIATE_KEYS = ("kappa", "omega", "tau", "rho", "alpha1", "alpha2", "mu", "eta", "phi")
METHODS = ("ivfe", "fm", "iiv", "sur", "sur_stri")


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class MethodReport:
    """Estimate of the trade elasticity from one method.

    ``intermediates`` holds the method's auxiliary parameters keyed by name
    (``kappa``, ``omega`` ...) together with their standard errors under
    ``<name>_se``.
    """

    method: str
    sigma: float
    sigma_se: float | None
    intermediates: dict = field(default_factory=dict)
    theta: int | None = None
    diagnostics: list = field(default_factory=list)
    instruments: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    roots: list | None = None
    n_obs: int | None = None

    @property
    def gamma(self) -> float:
        return 1.0 - self.sigma

    def get(self, name, default=None):
        return self.intermediates.get(name, default)

    def diagnostic(self, name) -> TestResult | None:
        for d in self.diagnostics:
            if d.name == name:
                return d
        return None

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "sigma": _num(self.sigma),
            "sigma_se": _num(self.sigma_se),
            "gamma": _num(self.gamma),
            "intermediates": {k: _num(v) for k, v in self.intermediates.items()},
            "theta": self.theta,
            "diagnostics": [d.to_dict() for d in self.diagnostics],
            "instruments": list(self.instruments),
            "warnings": list(self.warnings),
        }
        if self.roots is not None:
            out["roots"] = [{"gamma": _num(g), "rho": _num(r)} for g, r in self.roots]
        if self.n_obs is not None:
            out["n_obs"] = int(self.n_obs)
        return out


def format_estimate(est, se=None, digits=3) -> str:
    """Format an estimate cell as ``est ~(se)``."""
    if est is None or not math.isfinite(est):
        return ""
    s = f"{est:.{digits}f}"
    if se is not None and math.isfinite(se):
        s += f" ~({se:.{digits}f})"
    return s


def reports_to_tsv(reports, digits=3) -> str:
    """One row per report; ``sigma_corrected`` is added when any report has it."""
    keys = INTERMEDIATE_KEYS
    if any("sigma_corrected" in r.intermediates for r in reports):
        keys = keys + ("sigma_corrected",)
    lines = ["\t".join(("method", "theta", "sigma") + keys)]
    for r in reports:
        cells = [r.method, "" if r.theta is None else str(r.theta)]
        cells.append(format_estimate(r.sigma, r.sigma_se, digits))
        for key in keys:
            cells.append(format_estimate(r.get(key), r.get(f"{key}_se"), digits))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def diagnostics_to_tsv(diagnostics, digits=3) -> str:
    """One row per test; tests that do not apply print as blank cells."""
    lines = ["\t".join(("test", "statistic", "p_value", "df", "verdict"))]
    for d in diagnostics:
        if not d.applicable:
            lines.append("\t".join((d.name, "", "", "", "")))
            continue
        df = ",".join(str(x) for x in d.df)
        lines.append("\t".join((d.name, format_estimate(d.statistic, None, digits),
                                format_estimate(d.p_value, None, digits), df, d.verdict)))
    return "\n".join(lines) + "\n"
