from __future__ import annotations

import numpy as np

from ..panel import Panel, compute_value_shares, double_demean


def absorbed_df(mask) -> int:
    """Degrees of freedom spent on two-way effects (N + T - 1)."""
    return int(mask.any(axis=1).sum() + mask.any(axis=0).sum() - 1)


def log_shares(panel: Panel) -> np.ndarray:
    return compute_value_shares(panel).log()


def demeaned(panel: Panel, array, label, tol=1e-10):
    return double_demean(array, panel.mask, tol=tol, label=label)


def demeaned_logs(panel: Panel, tol=1e-10):
    """``([ln S], [ln Z])`` on the panel mask."""
    s = demeaned(panel, log_shares(panel), "ln_share", tol)
    z = demeaned(panel, panel.log("fx_rate"), "ln_fx", tol)
    return s, z


def cell_index(mask) -> np.ndarray:
    """Row-major position of each present cell in ``array[mask]``; -1 elsewhere."""
    idx = np.full(mask.shape, -1, dtype=int)
    idx[mask] = np.arange(int(mask.sum()))
    return idx
