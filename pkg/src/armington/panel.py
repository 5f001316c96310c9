"""Unbalanced country-by-period trade panels and the transforms estimators use.

A :class:`Panel` stores every variable as an ``(N, T)`` float array with
``nan`` outside the presence mask. Countries index rows, periods index
columns, and the period axis is sorted ascending.
"""

from __future__ import annotations

import csv
import io
import os
import re
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Mapping

import numpy as np

from .errors import ConflictError, ConvergenceError, DimensionError, ParseError

__all__ = [
    "PanelObservation",
    "Panel",
    "ShareSeries",
    "DemeanedSeries",
    "load_panel",
    "write_panel",
    "parse_period",
    "compute_value_shares",
    "double_demean",
    "filter_coverage",
]

CSV_COLUMNS = ("country", "period", "value", "quantity", "fx_rate", "stri")
REQUIRED_COLUMNS = ("country", "period", "value", "fx_rate")

_MONTHLY = re.compile(r"^\s*(\d{4})-(\d{1,2})\s*$")


def _frozen(a):
    if a is None:
        return None
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PanelObservation:
    country: str
    period: int
    value: float
    fx_rate: float
    quantity: float | None = None
    stri: float | None = None


@dataclass(frozen=True, eq=False)
class Panel:
    """Unbalanced two-index panel of import values and exchange rates.

    Parameters
    ----------
    countries : tuple of str
        Row labels, length ``N``.
    periods : tuple of int
        Ordinal period labels, ascending, length ``T``.
    value, fx_rate : ndarray of shape (N, T)
        Import value ``V_it`` and exchange rate ``Z_it``; ``nan`` where absent.
    quantity, stri : ndarray of shape (N, T) or None
        Optional physical quantity ``X_it`` and restrictiveness index ``R_it``.
        Individual cells may be ``nan`` even where the observation is present.
    """

    countries: tuple
    periods: tuple
    value: np.ndarray
    fx_rate: np.ndarray
    quantity: np.ndarray | None = None
    stri: np.ndarray | None = None
    mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "countries", tuple(str(c) for c in self.countries))
        object.__setattr__(self, "periods", tuple(int(t) for t in self.periods))
        shape = (len(self.countries), len(self.periods))
        for name in ("value", "fx_rate", "quantity", "stri"):
            arr = _frozen(getattr(self, name))
            if arr is not None and arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)
        if len(set(self.countries)) != len(self.countries):
            raise ConflictError("duplicate country labels")
        if list(self.periods) != sorted(set(self.periods)):
            raise DimensionError("periods must be strictly increasing")
        with np.errstate(invalid="ignore"):
            mask = (
                np.isfinite(self.value)
                & np.isfinite(self.fx_rate)
                & (self.value > 0)
                & (self.fx_rate > 0)
            )
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        if shape[0] < 2 or shape[1] < 2:
            raise DimensionError(
                f"panel needs at least 2 countries and 2 periods, got N={shape[0]}, T={shape[1]}"
            )

    @property
    def N(self) -> int:
        return len(self.countries)

    @property
    def T(self) -> int:
        return len(self.periods)

    @property
    def n_obs(self) -> int:
        return int(self.mask.sum())

    @property
    def has_quantity(self) -> bool:
        return self.quantity is not None and bool(np.isfinite(self.quantity[self.mask]).any())

    @property
    def has_stri(self) -> bool:
        return self.stri is not None and bool(np.isfinite(self.stri[self.mask]).any())

    def counts(self) -> np.ndarray:
        """Present cells per country."""
        return self.mask.sum(axis=1)

    def period_index(self, period: int) -> int:
        try:
            return self.periods.index(int(period))
        except ValueError:
            raise DimensionError(f"period {period} not in panel") from None

    def masked(self, name: str) -> np.ndarray:
        """Copy of a variable with cells outside the mask set to nan."""
        arr = getattr(self, name)
        if arr is None:
            raise DimensionError(f"panel has no {name} column")
        out = np.where(self.mask, arr, np.nan)
        return out

    def log(self, name: str) -> np.ndarray:
        arr = self.masked(name)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.log(arr)
        out[~np.isfinite(out)] = np.nan
        return out

    def observations(self) -> Iterator[PanelObservation]:
        for i, t in zip(*np.nonzero(self.mask)):
            q = None if self.quantity is None else self.quantity[i, t]
            r = None if self.stri is None else self.stri[i, t]
            yield PanelObservation(
                country=self.countries[i],
                period=self.periods[t],
                value=float(self.value[i, t]),
                fx_rate=float(self.fx_rate[i, t]),
                quantity=None if q is None or not np.isfinite(q) else float(q),
                stri=None if r is None or not np.isfinite(r) else float(r),
            )

    def select(self, rows=None, cols=None) -> "Panel":
        """Sub-panel on the given row/column index arrays."""
        rows = np.arange(self.N) if rows is None else np.asarray(rows)
        cols = np.arange(self.T) if cols is None else np.asarray(cols)
        sub = lambda a: None if a is None else a[np.ix_(rows, cols)]  # noqa: E731
        return Panel(
            countries=[self.countries[i] for i in rows],
            periods=[self.periods[t] for t in cols],
            value=sub(self.value),
            fx_rate=sub(self.fx_rate),
            quantity=sub(self.quantity),
            stri=sub(self.stri),
        )

    def restrict(self, keep: np.ndarray) -> "Panel":
        """Drop cells where ``keep`` is False (they become absent)."""
        keep = np.asarray(keep, dtype=bool) & self.mask
        return Panel(
            countries=self.countries,
            periods=self.periods,
            value=np.where(keep, self.value, np.nan),
            fx_rate=np.where(keep, self.fx_rate, np.nan),
            quantity=self.quantity,
            stri=self.stri,
        )

    def prune(self) -> "Panel":
        """Remove countries and periods with no present cells."""
        rows = np.flatnonzero(self.mask.any(axis=1))
        cols = np.flatnonzero(self.mask.any(axis=0))
        if len(rows) == self.N and len(cols) == self.T:
            return self
        if len(rows) < 2 or len(cols) < 2:
            raise DimensionError(
                f"panel needs at least 2 countries and 2 periods, got N={len(rows)}, T={len(cols)}"
            )
        return self.select(rows, cols)

    def scale_fx(self, factor: float) -> "Panel":
        return Panel(
            countries=self.countries,
            periods=self.periods,
            value=self.value,
            fx_rate=self.fx_rate * factor,
            quantity=self.quantity,
            stri=self.stri,
        )

    @classmethod
    def from_observations(cls, observations: Iterable[PanelObservation]) -> "Panel":
        obs = list(observations)
        countries = sorted({o.country for o in obs}, key=_natural_key)
        periods = sorted({int(o.period) for o in obs})
        ci = {c: i for i, c in enumerate(countries)}
        ti = {t: j for j, t in enumerate(periods)}
        shape = (len(countries), len(periods))
        value = np.full(shape, np.nan)
        fx = np.full(shape, np.nan)
        qty = np.full(shape, np.nan)
        stri = np.full(shape, np.nan)
        seen = set()
        for o in obs:
            key = (o.country, int(o.period))
            if key in seen:
                raise ConflictError(f"duplicate observation for country={key[0]!r}, period={key[1]}")
            seen.add(key)
            i, j = ci[o.country], ti[int(o.period)]
            value[i, j] = o.value
            fx[i, j] = o.fx_rate
            if o.quantity is not None:
                qty[i, j] = o.quantity
            if o.stri is not None:
                stri[i, j] = o.stri
        any_q = any(o.quantity is not None for o in obs)
        any_r = any(o.stri is not None for o in obs)
        return cls(
            countries=countries,
            periods=periods,
            value=value,
            fx_rate=fx,
            quantity=qty if any_q else None,
            stri=stri if any_r else None,
        )


def _natural_key(s):
    return [int(p) if p.isdigit() else p for p in re.split(r"(\d+)", str(s))]


@dataclass(frozen=True, eq=False)
class ShareSeries:
    values: np.ndarray
    mask: np.ndarray

    def log(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.mask, np.log(self.values), np.nan)


@dataclass(frozen=True, eq=False)
class DemeanedSeries:
    values: np.ndarray
    mask: np.ndarray
    label: str = ""
    iterations: int = 0

    def flat(self) -> np.ndarray:
        """Present cells in row-major (country, period) order."""
        return self.values[self.mask]


# --------------------------------------------------------------------------
# Ingestion
# --------------------------------------------------------------------------


def parse_period(label) -> int:
    """Map a period label to an ordinal integer.

    Integers pass through; ``YYYY-MM`` becomes ``12 * YYYY + MM - 1`` so that
    consecutive months are consecutive ordinals.
    """
    s = str(label).strip()
    try:
        return int(s)
    except ValueError:
        pass
    m = _MONTHLY.match(s)
    if m:
        year, month = int(m.group(1)), int(m.group(2))
        if 1 <= month <= 12:
            return 12 * year + month - 1
    try:
        f = float(s)
    except ValueError:
        raise ValueError(f"unrecognised period {label!r}") from None
    if f.is_integer():
        return int(f)
    raise ValueError(f"unrecognised period {label!r}")


def _number(text, name, line, optional=False):
    if text is None or str(text).strip() == "":
        if optional:
            return None
        raise ParseError(f"missing {name}", line)
    try:
        x = float(text)
    except ValueError:
        raise ParseError(f"{name}={text!r} is not a number", line) from None
    if not np.isfinite(x):
        raise ParseError(f"{name}={text!r} is not finite", line)
    return x


def load_panel(
    source,
    schema: Mapping[str, str] | None = None,
    strict: bool = False,
) -> Panel:
    """Read a panel from CSV text.

    Parameters
    ----------
    source : path or text stream
        CSV with a header row. Required columns: ``country, period, value,
        fx_rate``; optional ``quantity`` and ``stri``.
    schema : mapping, optional
        Canonical column name -> header used in the file, for files whose
        headers differ from the canonical names.
    strict : bool
        If True, a row with non-positive ``value`` or ``fx_rate`` raises
        :class:`ParseError`; otherwise such rows are dropped (absent cells).

    Returns
    -------
    Panel
    """
    if isinstance(source, (str, os.PathLike)) and not (
        isinstance(source, str) and "\n" in source
    ):
        with open(source, newline="", encoding="utf-8") as fh:
            return _read_panel(fh, schema, strict)
    if isinstance(source, str):
        source = io.StringIO(source)
    return _read_panel(source, schema, strict)


def _read_panel(stream: IO[str], schema, strict) -> Panel:
    colmap = {c: c for c in CSV_COLUMNS}
    if schema:
        colmap.update(schema)
    reader = csv.DictReader(stream)
    header = reader.fieldnames or []
    header = [h.strip() for h in header]
    reader.fieldnames = header
    missing = [c for c in REQUIRED_COLUMNS if colmap[c] not in header]
    if missing:
        raise ParseError(f"missing required column(s): {', '.join(missing)}", 1)
    has_q = colmap["quantity"] in header
    has_r = colmap["stri"] in header

    obs = []
    seen = {}
    for row in reader:
        line = reader.line_num
        if None in row:
            raise ParseError("too many fields", line)
        country = (row.get(colmap["country"]) or "").strip()
        if not country:
            raise ParseError("missing country", line)
        try:
            period = parse_period(row.get(colmap["period"]))
        except ValueError as exc:
            raise ParseError(str(exc), line) from None
        value = _number(row.get(colmap["value"]), "value", line)
        fx = _number(row.get(colmap["fx_rate"]), "fx_rate", line)
        qty = _number(row.get(colmap["quantity"]), "quantity", line, optional=True) if has_q else None
        stri = _number(row.get(colmap["stri"]), "stri", line, optional=True) if has_r else None

        key = (country, period)
        if key in seen:
            raise ConflictError(
                f"duplicate observation for country={country!r}, period={period} "
                f"(first seen on line {seen[key]})",
                line,
            )
        seen[key] = line

        if value <= 0 or fx <= 0:
            if strict:
                bad = "value" if value <= 0 else "fx_rate"
                raise ParseError(f"non-positive {bad} in strict mode", line)
            continue
        if qty is not None and qty <= 0:
            qty = None
        if stri is not None and not (0.0 <= stri <= 1.0):
            if strict:
                raise ParseError(f"stri={stri} outside [0, 1]", line)
            stri = None
        obs.append(PanelObservation(country, period, value, fx, qty, stri))

    if not obs:
        raise DimensionError("no usable observations")
    return Panel.from_observations(obs)


def write_panel(panel: Panel, stream: IO[str], float_format: str = "%.17g") -> None:
    """Write ``panel`` in the CSV schema :func:`load_panel` reads."""
    cols = ["country", "period", "value"]
    if panel.quantity is not None:
        cols.append("quantity")
    cols.append("fx_rate")
    if panel.stri is not None:
        cols.append("stri")
    stream.write(",".join(cols) + "\n")
    fmt = lambda x: "" if x is None else float_format % x  # noqa: E731
    for o in panel.observations():
        fields = [o.country, str(o.period), fmt(o.value)]
        if panel.quantity is not None:
            fields.append(fmt(o.quantity))
        fields.append(fmt(o.fx_rate))
        if panel.stri is not None:
            fields.append(fmt(o.stri))
        stream.write(",".join(fields) + "\n")


# --------------------------------------------------------------------------
# Transforms
# --------------------------------------------------------------------------


def compute_value_shares(panel: Panel) -> ShareSeries:
    """Value shares ``S_it = V_it / sum_j V_jt`` over countries present at t."""
    v = np.where(panel.mask, panel.value, 0.0)
    total = v.sum(axis=0)
    if np.any(total <= 0):
        bad = [panel.periods[t] for t in np.flatnonzero(total <= 0)]
        raise DimensionError(f"degenerate period(s) with zero total value: {bad}")
    shares = np.where(panel.mask, v / total, np.nan)
    shares.setflags(write=False)
    return ShareSeries(values=shares, mask=panel.mask)


def _masked_means(x, mask, axis):
    n = mask.sum(axis=axis)
    return np.where(mask, x, 0.0).sum(axis=axis) / n


def _two_way_effects(x, mask):
    """Fitted ``a_i + b_t`` from least squares on the present cells."""
    M = mask.astype(float)
    xm = np.where(mask, x, 0.0)
    transpose = M.shape[1] > M.shape[0]
    if transpose:
        M, xm = M.T, xm.T
    n_row, n_col = M.sum(axis=1), M.sum(axis=0)
    r, c = xm.sum(axis=1), xm.sum(axis=0)
    # eliminate row effects; the column system is singular along the
    # common-shift direction, which lstsq resolves without changing a + b
    A = np.diag(n_col) - M.T @ (M / n_row[:, None])
    b = np.linalg.lstsq(A, c - M.T @ (r / n_row), rcond=None)[0]
    a = (r - M @ b) / n_row
    fit = a[:, None] + b[None, :]
    return fit.T if transpose else fit


def double_demean(
    series,
    mask=None,
    *,
    method: str = "auto",
    tol: float = 1e-10,
    max_iter: int = 100_000,
    label: str = "",
) -> DemeanedSeries:
    """Remove country and period means (two-way fixed effects).

    Parameters
    ----------
    series : array_like of shape (N, T)
        Values; cells outside ``mask`` are ignored.
    mask : array_like of bool, optional
        Presence mask. Defaults to the finite cells of ``series``.
    method : {"auto", "closed_form", "direct", "iterative"}
        ``closed_form`` applies ``x - rowmean - colmean + grandmean`` and
        requires a balanced mask. ``iterative`` alternates row and column
        demeaning over present cells until every row and column mean is below
        ``tol`` in absolute value. ``direct`` solves the two-way effects
        exactly (eliminating the longer index, then a dense solve over the
        shorter one) and finishes with alternating sweeps to the same
        ``tol``. ``auto`` is closed form when balanced, direct otherwise.

    Notes
    -----
    The mean criterion alone does not bound the error in the values: on
    weakly connected masks alternating sweeps converge slowly and can stop
    with cells well away from the exact projection. Hence ``direct``.

    Returns
    -------
    DemeanedSeries
        Values are ``nan`` outside the mask.
    """
    x = np.asarray(series, dtype=float)
    mask = np.isfinite(x) if mask is None else np.asarray(mask, dtype=bool)
    if x.shape != mask.shape or x.ndim != 2:
        raise DimensionError(f"series shape {x.shape} does not match mask shape {mask.shape}")
    if not np.all(np.isfinite(x[mask])):
        raise DimensionError(f"{label or 'series'} has non-finite values inside the mask")
    if not mask.any(axis=1).all() or not mask.any(axis=0).all():
        raise DimensionError("every country and every period needs at least one present cell")

    balanced = bool(mask.all())
    if method == "auto":
        method = "closed_form" if balanced else "direct"
    if method == "closed_form":
        if not balanced:
            raise DimensionError("closed-form demeaning requires a balanced mask")
        out = x - x.mean(axis=1, keepdims=True) - x.mean(axis=0, keepdims=True) + x.mean()
        return DemeanedSeries(_frozen(out), mask, label, 0)
    if method == "direct":
        out = np.where(mask, x - _two_way_effects(x, mask), 0.0)
    elif method == "iterative":
        out = np.where(mask, x, 0.0)
    else:
        raise ValueError(f"unknown method {method!r}")
    n_row = mask.sum(axis=1)
    n_col = mask.sum(axis=0)
    resid = np.inf
    for it in range(1, max_iter + 1):
        out -= np.where(mask, (out.sum(axis=1) / n_row)[:, None], 0.0)
        out -= np.where(mask, (out.sum(axis=0) / n_col)[None, :], 0.0)
        # column means are zero up to rounding right after the column sweep
        resid = max(
            np.abs(out.sum(axis=1) / n_row).max(),
            np.abs(out.sum(axis=0) / n_col).max(),
        )
        if resid < tol:
            break
    else:
        raise ConvergenceError(
            f"double demeaning did not converge in {max_iter} sweeps (max residual mean {resid:.3e})"
        )
    out = np.where(mask, out, np.nan)
    return DemeanedSeries(_frozen(out), mask, label, it)


def filter_coverage(panel: Panel, min_obs: int) -> Panel:
    """Drop countries with fewer than ``min_obs`` present periods.

    Periods left without any present country are dropped as well. Shares
    must be recomputed from the returned panel.
    """
    if min_obs > panel.T:
        raise DimensionError(f"min_obs={min_obs} exceeds the number of periods T={panel.T}")
    if min_obs <= 0:
        return panel
    keep = np.flatnonzero(panel.counts() >= min_obs)
    if len(keep) < 2:
        raise DimensionError(
            f"coverage filter min_obs={min_obs} leaves {len(keep)} countries; at least 2 needed"
        )
    return panel.select(rows=keep).prune()
