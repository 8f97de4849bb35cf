"""Estimators for overlaps, the random-field energy, free energies and the
replica identities, with jackknife errors over disorder realizations.

Most estimators accept an *ensemble*: a list with one entry per disorder
realization, either a :class:`ThermalSummary` (Monte Carlo) or an
:class:`~glaslab.exact.ExactSolution` (quadrature).  Inner (thermal)
averages are taken per realization, then averaged over the ensemble.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .exact import ExactSolution, single_site_log_z
from .fspec import FSpecError, parse_fspec
from .sampler import run_chain
from .stats import batch_means, jackknife, jackknife_rows

logger = logging.getLogger(__name__)

MIN_DISORDERS = 8
INNER_KEYS = ("r11", "r11_sq", "r12", "r12_sq", "delta", "delta_sq")


def overlap(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("configurations live on different lattices")
    return float(np.dot(a, b) / a.size)


def delta_n(config, g) -> float:
    """Site average of ``g_x * phi_x``: the random-field part of the energy per site."""
    config = np.asarray(config, dtype=float)
    g = np.asarray(g, dtype=float)
    if config.shape != g.shape:
        raise ValueError("configuration and field have different lengths")
    return float(np.dot(g, config) / config.size)


@dataclass
class EnsembleStats:
    tag: str
    value: float
    stderr: float
    size: int
    per_disorder: np.ndarray = field(default=None, repr=False)
    params: dict = field(default_factory=dict)


@dataclass
class ThermalSummary:
    """Per-snapshot overlaps and fields plus time-averaged site tensors for one disorder."""

    g: np.ndarray
    overlaps: np.ndarray  # (S, m, m)
    deltas: np.ndarray  # (S, m)
    bonds: np.ndarray  # (S, m)
    site_moments: np.ndarray  # (N, K + 1)
    one_point: np.ndarray  # (N,)
    two_point: np.ndarray  # (N, N)

    @property
    def n_replicas(self) -> int:
        return self.overlaps.shape[1]

    @classmethod
    def from_snapshots(cls, snapshots, g, lattice, max_degree=8):
        snaps = np.ascontiguousarray(snapshots, dtype=float)
        m, n_snap, n_sites = snaps.shape
        flat = snaps.reshape(m * n_snap, n_sites)
        e = lattice.edges
        if len(e):
            bonds = np.einsum("ats,ats->at", snaps[:, :, e[:, 0]], snaps[:, :, e[:, 1]]).T
        else:
            bonds = np.zeros((n_snap, m))
        return cls(
            g=np.asarray(g, dtype=float).copy(),
            overlaps=_kernels.snapshot_overlaps(snaps),
            deltas=(snaps @ np.asarray(g, dtype=float)).T / n_sites,
            bonds=np.ascontiguousarray(bonds),
            site_moments=np.stack([np.mean(flat**k, axis=0) for k in range(max_degree + 1)],
                                  axis=1),
            one_point=flat.mean(axis=0),
            two_point=flat.T @ flat / flat.shape[0],
        )

    def to_arrays(self) -> dict:
        return {k: getattr(self, k) for k in
                ("g", "overlaps", "deltas", "bonds", "site_moments", "one_point", "two_point")}

    @classmethod
    def from_arrays(cls, arrays) -> "ThermalSummary":
        return cls(**{k: np.asarray(arrays[k]) for k in
                      ("g", "overlaps", "deltas", "bonds", "site_moments", "one_point",
                       "two_point")})


def _check_ensemble(ensemble, min_disorders=MIN_DISORDERS):
    if len(ensemble) < min_disorders:
        raise ValueError(
            f"{len(ensemble)} disorder realizations; at least {min_disorders} needed for error bars"
        )


def _pairs(m):
    return list(itertools.combinations(range(m), 2))


def _inner_means(item, symmetrize=True) -> dict:
    """Thermal means used by the overlap and field estimators, for one disorder.

    A dict already holding these keys (e.g. restored from a checkpoint) is
    passed through.
    """
    if isinstance(item, dict):
        return {k: float(item[k]) for k in INNER_KEYS}
    if isinstance(item, ExactSolution):
        corr = item.correlations()
        one = np.real(corr.one_point)
        two = np.real(corr.two_point)
        n_sites = item.n_sites
        g = np.asarray(item.disorder.g, dtype=float)
        sq = np.real(item.replica_monomial([(1, 1), (1, 1)]))
        return {
            "r11": float(np.trace(two) / n_sites),
            "r11_sq": float(sq),
            "r12": float(np.dot(one, one) / n_sites),
            "r12_sq": float(np.sum(two * two) / n_sites**2),
            "delta": float(np.dot(g, one) / n_sites),
            "delta_sq": float(g @ two @ g / n_sites**2),
        }
    q = item.overlaps
    m = item.n_replicas
    if m < 2:
        raise ValueError("overlap estimators need at least two replicas per disorder")
    pairs = _pairs(m) if symmetrize else [(0, 1)]
    reps = range(m) if symmetrize else [0]
    r12 = np.mean([q[:, a, b] for a, b in pairs], axis=0)
    r12_sq = np.mean([q[:, a, b] ** 2 for a, b in pairs], axis=0)
    r11 = np.mean([q[:, a, a] for a in reps], axis=0)
    r11_sq = np.mean([q[:, a, a] ** 2 for a in reps], axis=0)
    delta = np.mean([item.deltas[:, a] for a in reps], axis=0)
    delta_sq = np.mean([item.deltas[:, a] ** 2 for a in reps], axis=0)
    return {
        "r11": float(r11.mean()),
        "r11_sq": float(r11_sq.mean()),
        "r12": float(r12.mean()),
        "r12_sq": float(r12_sq.mean()),
        "delta": float(delta.mean()),
        "delta_sq": float(delta_sq.mean()),
    }


def inner_means_table(ensemble, symmetrize=True) -> dict:
    rows = [_inner_means(item, symmetrize) for item in ensemble]
    return {k: np.array([r[k] for r in rows]) for k in rows[0]}


def overlap_variance(ensemble, min_disorders=MIN_DISORDERS, symmetrize=True) -> EnsembleStats:
    """``E<(R12 - E<R12>)^2> = E<R12^2> - (E<R12>)^2`` with a jackknife error."""
    _check_ensemble(ensemble, min_disorders)
    t = inner_means_table(ensemble, symmetrize)
    cols = np.column_stack([t["r12_sq"], t["r12"]])
    value, se = jackknife(cols, lambda mu: mu[0] - mu[1] ** 2)
    return EnsembleStats("overlap_variance", value, se, len(ensemble),
                         per_disorder=t["r12_sq"] - t["r12"] ** 2)


def self_averaging_gaps(ensemble, min_disorders=MIN_DISORDERS, symmetrize=True) -> dict:
    """Thermal and disorder fluctuation terms of the overlap, the field energy and ``R11``.

    The overlap variance splits as ``E(<R^2> - <R>^2) + Var_disorder(<R>)``
    (population variance over the ensemble); ``closure`` is the absolute
    mismatch between that sum and the direct estimator.
    """
    _check_ensemble(ensemble, min_disorders)
    t = inner_means_table(ensemble, symmetrize)
    n = len(ensemble)
    out = {}

    thermal_r = t["r12_sq"] - t["r12"] ** 2
    v, se = jackknife(thermal_r)
    out["overlap_thermal"] = EnsembleStats("overlap_thermal", v, se, n, thermal_r)

    cols = np.column_stack([t["r12"] ** 2, t["r12"]])
    v, se = jackknife(cols, lambda mu: mu[0] - mu[1] ** 2)
    out["overlap_disorder"] = EnsembleStats("overlap_disorder", v, se, n, t["r12"])

    thermal_d = t["delta_sq"] - t["delta"] ** 2
    v, se = jackknife(thermal_d)
    out["delta_thermal"] = EnsembleStats("delta_thermal", v, se, n, thermal_d)

    def mean_abs_dev(rows):
        return float(np.mean(np.abs(rows - rows.mean())))

    v, se = jackknife_rows(t["delta"], mean_abs_dev)
    out["delta_disorder_abs"] = EnsembleStats("delta_disorder_abs", v, se, n, t["delta"])
    v, se = jackknife_rows(t["r11"], mean_abs_dev)
    out["r11_disorder_abs"] = EnsembleStats("r11_disorder_abs", v, se, n, t["r11"])

    direct = float(t["r12_sq"].mean() - t["r12"].mean() ** 2)
    split = float(thermal_r.mean() + (np.mean(t["r12"] ** 2) - t["r12"].mean() ** 2))
    out["closure"] = abs(direct - split)
    out["direct"] = direct
    return out


def _gg_terms_samples(item: "ThermalSummary", f, m, symmetrize):
    """Per-disorder thermal means (f R_{1,m+1}, f, R12, sum_s f R_{1,s})."""
    q = item.overlaps
    avail = item.n_replicas
    if avail < m + 1:
        raise ValueError(f"GG residual with m={m} needs {m + 1} replicas, have {avail}")
    if symmetrize:
        perms = list(itertools.permutations(range(avail), m + 1))
    else:
        perms = [tuple(range(m + 1))]
    acc = np.zeros(4)
    for perm in perms:
        idx = np.array(perm)
        qp = q[:, idx][:, :, idx]
        fv = f.evaluate(qp[:, :m, :m])
        acc += [
            np.mean(fv * qp[:, 0, m]),
            np.mean(fv),
            np.mean(qp[:, 0, 1]),
            sum(np.mean(fv * qp[:, 0, s]) for s in range(1, m)),
        ]
    return acc / len(perms)


def _gg_terms_exact(sol: ExactSolution, f, m):
    from .exact import replica_observable_exact

    def ev(text):
        return float(np.real(replica_observable_exact(None, None, None, None, text,
                                                      solution=sol).value))

    ftxt = f"({f.text})"
    return np.array([
        ev(f"{ftxt}*R_1_{m + 1}"),
        ev(ftxt),
        ev("R12"),
        sum(ev(f"{ftxt}*R_1_{s}") for s in range(2, m + 1)),
    ])


@dataclass
class GGResidual:
    m: int
    f_spec: str
    value: float
    stderr: float
    size: int


def gg_residual(ensemble, f_spec, m=2, min_disorders=MIN_DISORDERS,
                symmetrize=False) -> GGResidual:
    """``E<f R_{1,m+1}> - E<f> E<R12> / m - sum_{s=2..m} E<f R_{1,s}> / m``.

    ``f_spec`` may only involve replicas ``1..m``.  With ``symmetrize`` the
    per-disorder means are averaged over all assignments of the available
    replica chains to the labels ``1..m+1``.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    f = parse_fspec(f_spec)
    if f.replicas and max(f.replicas) > m:
        raise FSpecError(f"f_spec {f.text!r} references replicas beyond {m}")
    _check_ensemble(ensemble, min_disorders)
    rows = []
    for item in ensemble:
        if isinstance(item, ExactSolution):
            rows.append(_gg_terms_exact(item, f, m))
        else:
            rows.append(_gg_terms_samples(item, f, m, symmetrize))
    rows = np.array(rows)
    value, se = jackknife(rows, lambda mu: mu[0] - mu[1] * mu[2] / m - mu[3] / m)
    return GGResidual(m, f.text, value, se, len(ensemble))


def ibp_check(ensemble, h, min_disorders=MIN_DISORDERS, symmetrize=True) -> EnsembleStats:
    """``E<Delta_n> - h E<R11 - R12>``; zero for every volume by Gaussian integration by parts."""
    _check_ensemble(ensemble, min_disorders)
    t = inner_means_table(ensemble, symmetrize)
    cols = t["delta"] - h * (t["r11"] - t["r12"])
    value, se = jackknife(cols)
    return EnsembleStats("ibp_residual", value, se, len(ensemble), per_disorder=cols)


@dataclass
class FreeEnergyEstimate:
    psi: np.ndarray
    psi_err: np.ndarray
    p_n: float
    p_err: float
    variance: float
    variance_err: float
    method: str
    grid: np.ndarray = None


def free_energy_at_zero_coupling(lattice, disorder, params) -> float:
    """``psi_n`` at ``beta = 0``: a product of single-site integrals with field ``h g_x``."""
    g = np.asarray(disorder.g, dtype=float)
    return float(np.mean([single_site_log_z(params.u, params.r, params.h * gx) for gx in g]))


class CoarseGridWarning(UserWarning):
    pass


def _trapezoid_weights(grid):
    w = np.zeros(len(grid))
    dx = np.diff(grid)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def trapezoid_discrepancy(grid, means) -> float:
    """Richardson estimate of the trapezoid error, from the grid and every other point.

    Needs an odd number of at least five points; returns 0 otherwise.
    """
    grid = np.asarray(grid, dtype=float)
    means = np.asarray(means, dtype=float)
    if len(grid) < 5 or len(grid) % 2 == 0:
        return 0.0
    fine = float(np.dot(_trapezoid_weights(grid), means))
    coarse = float(np.dot(_trapezoid_weights(grid[::2]), means[::2]))
    return abs(fine - coarse) / 3


def thermo_integrate(lattice, disorder, params, beta_grid, m=2, burn_in=500, samples=2000,
                     thinning=1, rng=None, realization_index=0):
    """``psi_n(beta)`` for one disorder by trapezoid integration of ``<sum_<xy> phi_x phi_y>``.

    Returns ``(psi, stderr, integrand means, integrand errors)``.
    """
    grid = np.asarray(beta_grid, dtype=float)
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("beta grid must start at 0 and increase")
    psi0 = free_energy_at_zero_coupling(lattice, disorder, params)
    if len(grid) == 1:
        return psi0, 0.0, np.zeros(1), np.zeros(1)
    means = np.empty(len(grid))
    errs = np.empty(len(grid))
    for i, b in enumerate(grid):
        res = run_chain(lattice, disorder, params.replace(beta=b), m=m, burn_in=burn_in,
                        samples=samples, thinning=thinning, rng=rng,
                        realization_index=realization_index, replica_ids=range(i * m, i * m + m))
        e = lattice.edges
        bonds = np.einsum("ats,ats->at", res.snapshots[:, :, e[:, 0]], res.snapshots[:, :, e[:, 1]])
        means[i], errs[i] = batch_means(bonds)
    w = _trapezoid_weights(grid)
    integral = float(np.dot(w, means))
    err = float(np.sqrt(np.sum((w * errs) ** 2)))
    disc = trapezoid_discrepancy(grid, means)
    if disc > 5 * max(err, 1e-300):
        warnings.warn(f"beta grid too coarse: discretization {disc:.3g} vs stat error {err:.3g}",
                      CoarseGridWarning, stacklevel=2)
    n_sites = lattice.site_count
    return psi0 + integral / n_sites, err / n_sites, means, errs


def free_energy_thermo(lattice, disorders, params, beta_grid, **chain_kw) -> FreeEnergyEstimate:
    """Thermodynamic-integration free energy for each disorder, with ensemble statistics."""
    if not isinstance(disorders, (list, tuple)):
        disorders = [disorders]
    psis, errs = [], []
    for d in disorders:
        kw = dict(chain_kw)
        kw.setdefault("realization_index", max(d.realization_index, 0))
        psi, err, _, _ = thermo_integrate(lattice, d, params, beta_grid, **kw)
        psis.append(psi)
        errs.append(err)
    return free_energy_summary(psis, errs, "thermo-integration", beta_grid)


def free_energy_summary(psis, errs=None, method="exact", grid=None) -> FreeEnergyEstimate:
    psis = np.asarray(psis, dtype=float)
    errs = np.zeros_like(psis) if errs is None else np.asarray(errs, dtype=float)
    p, p_err = jackknife(psis)
    if len(psis) > 1:
        cols = np.column_stack([psis**2, psis])
        n = len(psis)
        var, var_err = jackknife(cols, lambda mu: (mu[0] - mu[1] ** 2) * n / (n - 1))
    else:
        var, var_err = 0.0, float("nan")
    return FreeEnergyEstimate(psis, errs, p, p_err, var, var_err, method,
                              None if grid is None else np.asarray(grid))


def convexity_check(h_values, psi, psi_err=None):
    """Second differences ``p(h-e) - 2 p(h) + p(h+e)`` at interior points of a uniform grid.

    ``psi`` is either a 1-d array of ``p_n`` values (with ``psi_err``) or a
    ``(disorders, grid)`` matrix, in which case errors come from a jackknife
    over disorders that keeps the correlation between grid points.

    Returns ``(worst, worst_err, diffs, errs)``.
    """
    h_values = np.asarray(h_values, dtype=float)
    if len(h_values) < 3:
        raise ValueError("need at least three grid points")
    steps = np.diff(h_values)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise ValueError("convexity check needs a uniform grid")
    psi = np.asarray(psi, dtype=float)
    k = len(h_values) - 2
    if psi.ndim == 2:
        diffs, errs = np.empty(k), np.empty(k)
        for i in range(k):
            col = psi[:, i] - 2 * psi[:, i + 1] + psi[:, i + 2]
            diffs[i], errs[i] = jackknife(col)
            if len(col) < 2:
                errs[i] = 0.0
    else:
        err = np.zeros_like(psi) if psi_err is None else np.asarray(psi_err, dtype=float)
        diffs = psi[:-2] - 2 * psi[1:-1] + psi[2:]
        errs = np.sqrt(err[:-2] ** 2 + 4 * err[1:-1] ** 2 + err[2:] ** 2)
    i = int(np.argmin(diffs))
    return float(diffs[i]), float(errs[i]), diffs, errs


def _correlation_pair(item):
    if isinstance(item, ExactSolution):
        c = item.correlations()
        return np.real(c.one_point), np.real(c.two_point)
    return item.one_point, item.two_point


def truncated_correlation_sum(ensemble):
    """``sum_{x,y} (E<phi_x; phi_y>)^2`` and that sum divided by the site count."""
    trunc = None
    for item in ensemble:
        one, two = _correlation_pair(item)
        t = two - np.outer(one, one)
        trunc = t if trunc is None else trunc + t
    trunc = trunc / len(ensemble)
    total = float(np.sum(trunc**2))
    return total, total / trunc.shape[0]


@dataclass
class MomentBoundEstimate:
    k: int
    value: float
    stderr: float
    site: int


def moment_bounds(ensemble, ks=(2, 4, 8)) -> dict:
    """Largest site moment ``max_x E<phi_x^k>`` for each even ``k``."""
    per = []
    for item in ensemble:
        if isinstance(item, ExactSolution):
            per.append(np.real(item.correlations().site_moments))
        else:
            per.append(item.site_moments)
    per = np.array(per)  # (R, N, K+1)
    out = {}
    for k in ks:
        if k >= per.shape[2]:
            raise ValueError(f"moment k={k} beyond stored degree {per.shape[2] - 1}")
        cols = per[:, :, k]
        value, se = jackknife(cols, lambda mu: float(np.max(mu)))
        out[k] = MomentBoundEstimate(k, value, se, int(np.argmax(cols.mean(axis=0))))
    return out
