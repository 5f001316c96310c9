"""Command-line front end: ``estimate``, ``simulate`` and ``diagnose``.

Reports go to stdout as JSON (default) or TSV; warnings go to stderr.
Every failure is reported as a JSON object ``{"error": kind, "message": ...}``
on stdout with a distinct exit status:

    0 ok, 2 parse/usage, 3 dimension or method/data mismatch,
    4 numerical singularity, 5 estimation failure.

Options may also come from a ``key = value`` file given with ``--config``;
explicit flags take precedence. Without ``--seed`` the simulator uses
``DEFAULT_SEED``.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
from pathlib import Path

from . import pipelines
from .errors import ArmingtonError, EstimationError, NotApplicableError, ParseError
from .panel import filter_coverage, load_panel, write_panel
from .simulator import MC_METHODS, DgpConfig, generate_panel, run_monte_carlo

DEFAULT_SEED = 12345
ALL_METHODS = ("ivfe", "fm", "iiv", "sur")
METHOD_CHOICES = ("ivfe", "fm", "iiv", "sur", "sur-stri", "all")

_NUM = {"type": ["number", "null"]}

TEST_SCHEMA = {
    "type": "object",
    "required": ["name", "stat", "p", "df", "verdict"],
    "properties": {
        "name": {"type": "string"},
        "stat": _NUM,
        "p": _NUM,
        "df": {"type": "array", "items": {"type": "integer"}},
        "verdict": {"type": "string"},
    },
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["method", "sigma", "sigma_se", "intermediates", "diagnostics", "warnings"],
    "properties": {
        "method": {"enum": list(pipelines.METHODS)},
        "sigma": _NUM,
        "sigma_se": _NUM,
        "gamma": _NUM,
        "intermediates": {"type": "object", "additionalProperties": _NUM},
        "theta": {"type": ["integer", "null"]},
        "diagnostics": {"type": "array", "items": TEST_SCHEMA},
        "instruments": {"type": "array", "items": {"type": "string"}},
        "warnings": {"type": "array", "items": {"type": "string"}},
        "roots": {
            "type": "array",
            "items": {"type": "object", "properties": {"gamma": _NUM, "rho": _NUM}},
        },
        "n_obs": {"type": "integer"},
    },
}

ESTIMATE_SCHEMA = {"type": "array", "items": REPORT_SCHEMA}

DIAGNOSE_SCHEMA = {
    "type": "object",
    "required": ["context", "diagnostics"],
    "properties": {
        "context": {"enum": ["ivfe", "iiv"]},
        "sigma": _NUM,
        "sigma_se": _NUM,
        "instruments": {"type": "array", "items": {"type": "string"}},
        "diagnostics": {"type": "array", "items": TEST_SCHEMA},
        "warnings": {"type": "array", "items": {"type": "string"}},
    },
}

TRUTH_SCHEMA = {
    "type": "object",
    "required": ["config", "sigma", "gamma", "omega", "tau", "theta", "kappa", "phi"],
    "properties": {
        "sigma": {"type": "number"},
        "kappa": {"type": "number"},
        "phi": {"type": "number"},
        "theta": {"type": "integer"},
    },
}

MONTE_CARLO_SCHEMA = {
    "type": "object",
    "required": ["config", "reps", "methods", "seeds"],
    "properties": {
        "reps": {"type": "integer", "minimum": 1},
        "methods": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["method", "target", "mean", "bias", "rmse", "coverage", "n_ok", "n_fail"],
            },
        },
    },
}

ERROR_SCHEMA = {
    "type": "object",
    "required": ["error", "message"],
    "properties": {"error": {"type": "string"}, "message": {"type": "string"}},
    "additionalProperties": False,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ParseError(f"{self.prog}: {message}")


def _theta(text):
    if text in ("last", "min-rss"):
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"theta must be last, min-rss or a period label, got {text!r}")


def _methods(text):
    items = [m.strip().replace("-", "_") for m in text.split(",") if m.strip()]
    bad = [m for m in items if m not in MC_METHODS]
    if not items or bad:
        raise argparse.ArgumentTypeError(f"methods must be drawn from {', '.join(MC_METHODS)}")
    return items


def _z_scale(text):
    parts = [float(x) for x in text.split(",")]
    return parts[0] if len(parts) == 1 else tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="armington", description="Trade elasticity estimation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", type=Path, help="key = value file; flags override it")
        p.add_argument("--format", choices=("json", "tsv"), default="json")

    def data(p):
        p.add_argument("input", help="panel CSV path, or - for stdin")
        p.add_argument("--strict", action="store_true", help="reject malformed rows instead of dropping them")
        p.add_argument("--min-obs", type=int, default=0, help="drop countries with fewer observed periods")

    est = sub.add_parser("estimate", help="estimate the elasticity from a panel CSV")
    data(est)
    common(est)
    est.add_argument("--method", choices=METHOD_CHOICES, default="sur")
    est.add_argument("--theta", type=_theta, default="min-rss")
    est.add_argument("--sur-iterate", action=argparse.BooleanOptionalAction, default=True)
    est.add_argument("--fm-differences", action="store_true", help="difference against a reference country")
    est.add_argument("--apply-correction", action="store_true", help="also map SUR sigma onto the benchmark scale")

    sim = sub.add_parser("simulate", help="draw a synthetic panel, or run a Monte Carlo with --reps")
    common(sim)
    sim.add_argument("--sigma", type=float, default=3.0)
    sim.add_argument("--omega", type=float, default=0.5)
    sim.add_argument("--tau", type=float, default=0.0)
    sim.add_argument("--n", type=int, default=20)
    sim.add_argument("--t", type=int, default=60)
    sim.add_argument("--theta", type=int, default=None, help="normalization period (default: last)")
    sim.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sim.add_argument("--z-scale", type=_z_scale, default=0.05, help="scalar or comma list per country")
    sim.add_argument("--eps-scale", type=float, default=0.05)
    sim.add_argument("--delta-scale", type=float, default=0.05)
    sim.add_argument("--shock-dist", choices=("gaussian", "t"), default="gaussian")
    sim.add_argument("--t-df", type=float, default=5.0)
    sim.add_argument("--eta", type=float, default=None, help="STRI elasticity; emits a stri column")
    sim.add_argument("--missing-rate", type=float, default=0.0)
    sim.add_argument("--out", type=Path, default=None, help="CSV destination (default stdout)")
    sim.add_argument("--truth", type=Path, default=None, help="truth JSON (default <out>.truth.json)")
    sim.add_argument("--reps", type=int, default=None)
    sim.add_argument("--methods", type=_methods, default=["sur", "naive", "ivfe"])
    sim.add_argument("--workers", type=int, default=1)

    diag = sub.add_parser("diagnose", help="instrument diagnostics for the IV estimators")
    data(diag)
    common(diag)
    diag.add_argument("--context", choices=("auto", "ivfe", "iiv"), default="auto",
                      help="auto uses IVFE when quantities are present, IIV otherwise")
    return parser


_BOOLEAN = {"true": True, "yes": True, "on": True, "1": True,
            "false": False, "no": False, "off": False, "0": False}


def read_config(path: Path) -> dict:
    """Parse ``key = value`` lines; ``#`` comments and ``[section]`` headers are ignored."""
    out = {}
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc.strerror}")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ParseError(f"{path}: expected key = value", lineno)
        key, value = (x.strip() for x in line.split("=", 1))
        out[key.replace("-", "_")] = value.strip("\"'")
    return out


def _apply_config(parser, argv, args):
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    values = read_config(args.config)
    defaults = {}
    for key, value in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config", "input"):
            raise ParseError(f"unknown config key {key!r} for {args.command}")
        if isinstance(action, (argparse._StoreTrueAction, argparse.BooleanOptionalAction)):
            if value.lower() not in _BOOLEAN:
                raise ParseError(f"config key {key!r} expects a boolean, got {value!r}")
            defaults[key] = _BOOLEAN[value.lower()]
        else:
            # string defaults go through the action's type on re-parse
            defaults[key] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _emit(obj, stream):
    stream.write(json.dumps(obj, indent=2, allow_nan=False) + "\n")


def _warn(message):
    sys.stderr.write(f"warning: {message}\n")


def _load(args):
    source = sys.stdin if args.input == "-" else Path(args.input)
    if isinstance(source, Path) and not source.exists():
        raise ParseError(f"input file not found: {source}")
    panel = load_panel(source, strict=args.strict)
    if args.min_obs > 0:
        panel = filter_coverage(panel, args.min_obs)
    return panel


def _correct(report):
    value, se = pipelines.apply_benchmark_correction(report.sigma, sigma_se=report.sigma_se)
    report.intermediates["sigma_corrected"] = value
    report.intermediates["sigma_corrected_se"] = se


def cmd_estimate(args, out) -> int:
    panel = _load(args)
    methods = ALL_METHODS if args.method == "all" else (args.method.replace("-", "_"),)
    reports = []
    fm_report = None
    for method in methods:
        try:
            if method == "iiv":
                fm_report = fm_report or pipelines.estimate_fm(panel, differences=args.fm_differences)
                report = pipelines.estimate_iiv(panel, fm_report=fm_report)
            else:
                report = pipelines.estimate(
                    panel, method, theta=args.theta, sur_iterate=args.sur_iterate,
                    fm_differences=args.fm_differences,
                )
                if method == "fm":
                    fm_report = report
        except (NotApplicableError, EstimationError) as exc:
            if args.method != "all":
                raise
            _warn(f"{method} skipped: {exc}")
            continue
        if args.apply_correction and method in ("sur", "sur_stri"):
            _correct(report)
        for w in report.warnings:
            _warn(f"{method}: {w}")
        reports.append(report)
    if not reports:
        raise NotApplicableError("no requested method could be applied to this panel")
    if args.format == "tsv":
        out.write(pipelines.reports_to_tsv(reports))
    else:
        _emit([r.to_dict() for r in reports], out)
    return 0


def _dgp_config(args) -> DgpConfig:
    return DgpConfig(
        N=args.n, T=args.t, sigma=args.sigma, omega=args.omega, tau=args.tau,
        theta=args.theta, z_scale=args.z_scale, eps_scale=args.eps_scale,
        delta_scale=args.delta_scale, shock_dist=args.shock_dist, t_df=args.t_df,
        eta=args.eta, missing_rate=args.missing_rate, seed=args.seed,
    )


def cmd_simulate(args, out) -> int:
    try:
        config = _dgp_config(args)
    except ValueError as exc:
        raise ParseError(str(exc))
    if args.reps is not None:
        summary = run_monte_carlo(config, methods=args.methods, reps=args.reps, workers=args.workers)
        if args.format == "tsv":
            cols = ("method", "target", "mean", "bias", "rmse", "sd", "mc_se", "coverage", "n_ok", "n_fail")
            out.write("\t".join(cols) + "\n")
            for m in summary.methods.values():
                d = m.to_dict()
                out.write("\t".join("" if d[c] is None else str(d[c]) for c in cols) + "\n")
        else:
            _emit(summary.to_dict(), out)
        return 0

    panel, truth = generate_panel(config)
    buf = io.StringIO()
    write_panel(panel, buf)
    truth_text = json.dumps(truth.to_dict(), indent=2, allow_nan=False) + "\n"
    if args.out is None:
        out.write(buf.getvalue())
    else:
        args.out.write_text(buf.getvalue())
    truth_path = args.truth
    if truth_path is None and args.out is not None:
        truth_path = args.out.with_name(args.out.name + ".truth.json")
    if truth_path is not None:
        truth_path.write_text(truth_text)
    return 0


def cmd_diagnose(args, out) -> int:
    panel = _load(args)
    context = args.context
    if context == "auto":
        context = "ivfe" if panel.has_quantity else "iiv"
    report = pipelines.estimate_ivfe(panel) if context == "ivfe" else pipelines.estimate(panel, "iiv")
    for w in report.warnings:
        _warn(w)
    if args.format == "tsv":
        out.write(pipelines.diagnostics_to_tsv(report.diagnostics))
    else:
        _emit({
            "context": context,
            "sigma": report.to_dict()["sigma"],
            "sigma_se": report.to_dict()["sigma_se"],
            "instruments": list(report.instruments),
            "diagnostics": [d.to_dict() for d in report.diagnostics],
            "warnings": list(report.warnings),
        }, out)
    return 0


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "diagnose": cmd_diagnose}


def main(argv=None, stdout=None) -> int:
    out = sys.stdout if stdout is None else stdout
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None) is not None:
            args = _apply_config(parser, argv, args)
        return COMMANDS[args.command](args, out)
    except ArmingtonError as exc:
        payload = exc.to_dict()
        code = exc.exit_code
    except BrokenPipeError:
        # downstream closed early (e.g. piped into head)
        sys.stdout = open(os.devnull, "w")
        return 0
    except OSError as exc:
        payload = {"error": "io", "message": str(exc)}
        code = 2
    sys.stderr.write(f"error: {payload['message']}\n")
    _emit(payload, out)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
