"""Error analysis: leave-one-disorder-out jackknife and batch means."""

from __future__ import annotations

import numpy as np


def jackknife(columns, estimator=None):
    """Jackknife mean and standard error over the first axis.

    ``columns`` has one row per disorder realization.  ``estimator`` maps the
    column means (a 1-d array, or a scalar for 1-d input) to the estimate;
    by default the plain mean of a single column.

    Returns ``(estimate, stderr)`` where the estimate is ``estimator`` applied
    to the full-sample means.
    """
    data = np.asarray(columns, dtype=float)
    squeeze = data.ndim == 1
    if squeeze:
        data = data[:, None]
    n = data.shape[0]
    if estimator is None:
        def estimator(m):
            return m[0] if not squeeze else m
    full_means = data.mean(axis=0)
    full = estimator(full_means[0] if squeeze else full_means)
    if n < 2:
        return float(full), float("nan")
    loo = (data.sum(axis=0)[None, :] - data) / (n - 1)
    thetas = np.array([estimator(row[0] if squeeze else row) for row in loo], dtype=float)
    se = np.sqrt((n - 1) / n * np.sum((thetas - thetas.mean()) ** 2))
    return float(full), float(se)


def jackknife_rows(rows, estimator):
    """Jackknife for estimators that need the individual rows, not just means.

    ``estimator`` receives a ``(k, ...)`` array of rows and returns a float.
    """
    data = np.asarray(rows, dtype=float)
    n = data.shape[0]
    full = float(estimator(data))
    if n < 2:
        return full, float("nan")
    mask = np.ones(n, dtype=bool)
    thetas = np.empty(n)
    for i in range(n):
        mask[i] = False
        thetas[i] = estimator(data[mask])
        mask[i] = True
    se = np.sqrt((n - 1) / n * np.sum((thetas - thetas.mean()) ** 2))
    return full, float(se)


def batch_means(series, n_batches=20):
    """Mean and batch-means standard error of a correlated time series.

    A 2-d input is treated as independent chains (rows); batches are formed
    per chain and pooled.
    """
    x = np.atleast_2d(np.asarray(series, dtype=float))
    n_chains, length = x.shape
    per = max(1, n_batches // n_chains) if n_chains < n_batches else 1
    size = length // per
    if size < 1:
        raise ValueError("series too short for batch means")
    means = x[:, : per * size].reshape(n_chains, per, size).mean(axis=2).ravel()
    k = len(means)
    if k < 2:
        return float(x.mean()), float("nan")
    return float(x[:, : per * size].mean()), float(means.std(ddof=1) / np.sqrt(k))
