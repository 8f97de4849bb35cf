"""Finite-size power-law fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScalingFit:
    sizes: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    slope: float
    slope_err: float
    intercept: float


def fit_power_law(sizes, values, errors=None) -> ScalingFit:
    """Weighted least squares of ``log value`` on ``log size``.

    Weights come from relative errors (``sigma_log = err / value``).  When any
    error is zero or missing the fit is unweighted and the slope error is the
    residual-based one.
    """
    x = np.asarray(sizes, dtype=float)
    y = np.asarray(values, dtype=float)
    err = np.zeros_like(y) if errors is None else np.asarray(errors, dtype=float)
    if len(x) < 3:
        raise ValueError(f"scaling fit needs at least 3 sizes, got {len(x)}")
    if np.any(y <= 0) or np.any(x <= 0):
        bad = y[y <= 0] if np.any(y <= 0) else x[x <= 0]
        raise ValueError(f"cannot take the log of non-positive values {bad.tolist()}")
    lx, ly = np.log(x), np.log(y)
    design = np.column_stack([lx, np.ones_like(lx)])
    weighted = np.all(np.isfinite(err)) and np.all(err > 0)
    if weighted:
        sig = err / y
        w = 1.0 / sig**2
        cov = np.linalg.inv(design.T @ (design * w[:, None]))
        coef = cov @ (design.T @ (w * ly))
    else:
        coef, *_ = np.linalg.lstsq(design, ly, rcond=None)
        resid = ly - design @ coef
        dof = len(x) - 2
        s2 = float(resid @ resid) / dof if dof > 0 else 0.0
        cov = s2 * np.linalg.inv(design.T @ design)
    return ScalingFit(x, y, err, float(coef[0]), float(np.sqrt(max(cov[0, 0], 0.0))),
                      float(coef[1]))


def fit_scaling(records, observable=None) -> ScalingFit:
    """Fit ``value ~ |V_n|^slope`` from result records of one observable.

    ``records`` are :class:`~glaslab.harness.records.ResultRecord` objects;
    ``|V_n| = n^d`` with ``d`` taken from the record parameters.
    """
    recs = [r for r in records if observable is None or r.observable == observable]
    tags = {r.observable for r in recs}
    if len(tags) > 1:
        raise ValueError(f"records mix observables {sorted(tags)}")
    recs = sorted(recs, key=lambda r: r.n)
    sizes = [r.n ** int(r.params["d"]) for r in recs]
    return fit_power_law(sizes, [r.value for r in recs], [r.stderr for r in recs])
