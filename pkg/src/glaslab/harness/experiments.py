"""Experiment orchestration: per-realization work units, checkpoints, records."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from pathlib import Path

import numpy as np

from .. import observables as obs
from ..disorder import RNGSpec, sample_disorder
from ..exact import DEFAULT_NODE_BUDGET, free_energy_exact, solve_exact
from ..lattice import EXACT_SITE_CAP, NO_PERTURBATION, ModelParams, build_lattice
from ..sampler import run_chain
from ..stats import batch_means, jackknife
from .config import ConfigError, ExperimentConfig
from .records import ResultRecord, alpha_text, atomic_write, check_unique
from .scaling import fit_power_law

logger = logging.getLogger(__name__)

#: Refuse runs whose in-flight snapshot buffers would exceed this many bytes.
MEMORY_CAP_BYTES = 2 * 1024**3

SAMPLING_KINDS = ("simulate", "variance-scan", "gg-scan")

#: Batches for the audit's batch-means errors; many batches keep the z tails Gaussian.
AUDIT_BATCHES = 100


class ResourceError(RuntimeError):
    pass


class Interrupted(RuntimeError):
    """Raised by the ``stop_after`` test hook once that many units are checkpointed."""


def unit_index(n: int, i: int) -> int:
    """Realization index of disorder ``i`` at side length ``n``; sizes never share streams."""
    return n * 2**32 + i


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.identity(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _uses_exact(cfg: ExperimentConfig, n_sites: int) -> bool:
    if cfg.kind in ("exact-audit", "perturbation-audit"):
        return True
    if cfg.kind == "ibp":
        return cfg.ibp_inner == "exact" or (cfg.ibp_inner == "auto" and n_sites <= EXACT_SITE_CAP)
    if cfg.kind == "free-energy":
        return n_sites <= cfg.exact_sites
    return False


def preflight(cfg: ExperimentConfig, workers: int):
    """Refuse configurations that cannot run, before any work starts."""
    pert = cfg.perturbation()
    for n in cfg.n_list:
        if cfg.dim * math.log2(max(n, 1)) >= 62:
            raise ConfigError("lattice.n_list", f"n={n} overflows site indexing in d={cfg.dim}")
        n_sites = n**cfg.dim
        exact = _uses_exact(cfg, n_sites)
        if exact and n_sites > EXACT_SITE_CAP and (cfg.kind != "ibp" or pert.mode == "imaginary_exact"):
            raise ResourceError(f"exact oracle capped at {EXACT_SITE_CAP} sites, n={n} gives {n_sites}")
        if exact and cfg.kind == "ibp":
            # tensor grid with at least 16 nodes per axis
            if 16.0**n_sites > DEFAULT_NODE_BUDGET:
                raise ResourceError(f"exact inner expectations at {n_sites} sites exceed the node budget")
        if not exact or cfg.kind == "exact-audit":
            if pert.mode == "imaginary_exact" and cfg.kind != "perturbation-audit":
                raise ConfigError("perturbation.mode",
                                  "imaginary_exact has no sampling measure; use the exact kinds")
            per_unit = 8 * cfg.replicas * cfg.samples * n_sites + 8 * n_sites**2
            if cfg.kind == "free-energy":
                per_unit = 8 * cfg.replicas * cfg.samples * n_sites
            if per_unit * workers > MEMORY_CAP_BYTES:
                raise ResourceError(
                    f"n={n}: {workers} workers x {per_unit / 2**20:.0f} MiB snapshot buffers exceed "
                    f"the {MEMORY_CAP_BYTES / 2**30:.0f} GiB cap")
        if pert.mode != "off":
            for p in pert.support():
                if n_sites**p > 1e7:
                    raise ResourceError(f"xi tensor of order {p} at {n_sites} sites is too large")
    if cfg.kind in SAMPLING_KINDS or (cfg.kind == "ibp" and cfg.ibp_inner == "mcmc"):
        if cfg.disorders < obs.MIN_DISORDERS:
            raise ConfigError("ensemble.disorders",
                              f"ensemble estimators need at least {obs.MIN_DISORDERS} disorders")
        if cfg.replicas < 2:
            raise ConfigError("mc.replicas", "overlaps need at least two replicas")
    if cfg.kind == "exact-audit" and cfg.replicas < 2:
        raise ConfigError("mc.replicas", "the audit needs two replicas for R12")
    if cfg.kind == "perturbation-audit" and not pert.active:
        raise ConfigError("perturbation.alpha", "perturbation-audit needs a nonzero alpha")
    if cfg.kind == "perturbation-audit" and pert.mode == "off":
        raise ConfigError("perturbation.mode", "perturbation-audit needs a perturbation mode")


#: Relative shift of the re-test point used when an audit point shows an excursion.
AUDIT_SHIFT = 0.0137


def audit_point(cfg: ExperimentConfig, k: int) -> tuple:
    """Point ``k`` of the audit; ``k >= len(points)`` gives the shifted re-test twin."""
    n_points = len(cfg.audit_points)
    beta, h, u, r = (float(v) for v in cfg.audit_points[k % n_points])
    if k < n_points:
        return beta, h, u, r
    f = 1.0 + AUDIT_SHIFT
    return beta * f, h * f, u * f, r + AUDIT_SHIFT


def work_units(cfg: ExperimentConfig) -> list:
    if cfg.kind == "exact-audit":
        return [(n, k) for n in cfg.n_list for k in range(2 * len(cfg.audit_points))]
    return [(n, i) for n in cfg.n_list for i in range(cfg.disorders)]


# --- unit computations ------------------------------------------------------------------


def _chain_kw(cfg: ExperimentConfig) -> dict:
    return dict(burn_in=cfg.burn_in, samples=cfg.samples, thinning=cfg.thinning,
                initial_width=cfg.initial_width, epoch_length=cfg.epoch_length)


def _sampling_unit(cfg, lat, dis, params, pert, idx, rng):
    res = run_chain(lat, dis, params, pert, m=cfg.replicas, rng=rng, realization_index=idx,
                    **_chain_kw(cfg))
    arrays = obs.ThermalSummary.from_snapshots(res.snapshots, dis.g, lat).to_arrays()
    arrays["acceptance"] = np.array(np.nanmean(res.post_burn_in_acceptance()))
    return arrays


def audit_names(n_sites: int) -> list:
    names = [f"one_point[{x}]" for x in range(n_sites)]
    names += [f"two_point[{x},{y}]" for x in range(n_sites) for y in range(x, n_sites)]
    return names + ["R11", "R12"]


def _audit_unit(cfg, lat, params, pert, rng, n, k):
    idx = unit_index(n, 0)
    dis = sample_disorder(lat, pert, rng, idx)
    sol = solve_exact(lat, dis, params, pert)
    corr = sol.correlations()
    one = np.real(corr.one_point)
    two = np.real(corr.two_point)
    n_sites = lat.site_count
    m = cfg.replicas
    res = run_chain(lat, dis, params, pert, m=m, rng=rng, realization_index=idx,
                    replica_ids=range(k * m, k * m + m), **_chain_kw(cfg))
    snaps = res.snapshots  # (m, S, N)
    mc, se, ex = [], [], []
    for x in range(n_sites):
        v, e = batch_means(snaps[:, :, x], AUDIT_BATCHES)
        mc.append(v), se.append(e), ex.append(one[x])
    for x in range(n_sites):
        for y in range(x, n_sites):
            v, e = batch_means(snaps[:, :, x] * snaps[:, :, y], AUDIT_BATCHES)
            mc.append(v), se.append(e), ex.append(two[x, y])
    v, e = batch_means(np.mean(snaps**2, axis=2), AUDIT_BATCHES)
    mc.append(v), se.append(e), ex.append(np.trace(two) / n_sites)
    # disjoint replica pairs keep the pooled batches independent
    pairs = np.array([np.mean(snaps[a] * snaps[a + 1], axis=1) for a in range(0, m - 1, 2)])
    v, e = batch_means(pairs, AUDIT_BATCHES)
    mc.append(v), se.append(e), ex.append(np.dot(one, one) / n_sites)
    return {"mcmc": np.array(mc), "stderr": np.array(se), "exact": np.array(ex),
            "exact_err": np.array(sol.error_scale), "cutoff": np.array(sol.grid.cutoff),
            "nodes": np.array(sol.grid.size)}


def compute_unit(cfg: ExperimentConfig, unit) -> dict:
    """Arrays for one work unit; pure in ``(cfg, unit)``."""
    n, i = unit
    lat = build_lattice(cfg.dim, n)
    rng = RNGSpec(cfg.seed)
    params = cfg.model_params()
    pert = cfg.perturbation()
    kind = cfg.kind
    if kind == "exact-audit":
        return _audit_unit(cfg, lat, ModelParams(*audit_point(cfg, i)), pert, rng, n, i)
    idx = unit_index(n, i)
    dis = sample_disorder(lat, pert, rng, idx)
    if kind in SAMPLING_KINDS:
        return _sampling_unit(cfg, lat, dis, params, pert, idx, rng)
    if kind == "ibp":
        if _uses_exact(cfg, lat.site_count):
            inner = obs._inner_means(solve_exact(lat, dis, params, pert))
        else:
            arrays = _sampling_unit(cfg, lat, dis, params, pert, idx, rng)
            inner = obs._inner_means(obs.ThermalSummary.from_arrays(arrays))
        return {k: np.array(v) for k, v in inner.items()}
    if kind == "free-energy":
        if _uses_exact(cfg, lat.site_count):
            psi = free_energy_exact(lat, dis, params, pert)[0]
            psi_h = [free_energy_exact(lat, dis, params.replace(h=hv), pert)[0]
                     for hv in cfg.h_grid]
            return {"psi": np.array(psi), "psi_err": np.array(0.0), "psi_h": np.array(psi_h),
                    "coarse": np.array(0)}
        grid = np.linspace(0.0, cfg.beta, cfg.beta_points)
        psi, err, means, _ = obs.thermo_integrate(
            lat, dis, params, grid, m=cfg.replicas, burn_in=cfg.burn_in, samples=cfg.samples,
            thinning=cfg.thinning, rng=rng, realization_index=idx)
        coarse = obs.trapezoid_discrepancy(grid, means) / lat.site_count > 5 * max(err, 1e-300)
        return {"psi": np.array(psi), "psi_err": np.array(err), "psi_h": np.zeros(0),
                "coarse": np.array(int(coarse))}
    if kind == "perturbation-audit":
        psi0 = free_energy_exact(lat, dis, params, NO_PERTURBATION)[0]
        re, im = [], []
        for c in cfg.c_list:
            a, b = free_energy_exact(lat, dis, params, pert.with_c(c, lat.site_count))
            re.append(a)
            im.append(b)
        return {"psi0": np.array(psi0), "psi_re": np.array(re), "psi_im": np.array(im)}
    raise ConfigError("experiment.kind", f"unknown kind {kind!r}")


# --- checkpoints ------------------------------------------------------------------------


def checkpoint_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out) / "checkpoints" / config_hash(cfg)


def _unit_path(cfg, unit) -> Path:
    return checkpoint_dir(cfg) / f"n{unit[0]}-u{unit[1]}.npz"


def _save_unit(path, arrays):
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write(path, buf.getvalue(), mode="wb")


def _load_unit(path) -> dict | None:
    try:
        with np.load(path) as data:
            return {k: data[k].copy() for k in data.files}
    except (OSError, ValueError) as exc:
        logger.warning("ignoring unreadable checkpoint %s: %s", path, exc)
        return None


# --- orchestration ----------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, checkpoint: bool = True, stop_after: int | None = None,
                   write: bool = True) -> list:
    """Run every work unit of ``cfg`` and reduce them to result records.

    Units are computed on ``cfg.resolved_workers()`` threads; the calling
    thread is the single writer of checkpoints.  Results are merged in unit
    order, so records do not depend on the worker count.  With
    ``stop_after`` the run raises :class:`Interrupted` after that many units
    have been checkpointed (used to test resumption).
    """
    workers = cfg.resolved_workers()
    preflight(cfg, workers)
    units = work_units(cfg)
    results = {}
    if checkpoint:
        for u in units:
            p = _unit_path(cfg, u)
            if p.exists():
                got = _load_unit(p)
                if got is not None:
                    results[u] = got
    pending = [u for u in units if u not in results]
    logger.info("%s: %d units (%d from checkpoints), %d workers", cfg.kind, len(units),
                len(results), workers)
    done = 0
    if pending:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {}
            queue = iter(pending)
            for u in queue:
                futures[pool.submit(compute_unit, cfg, u)] = u
                if len(futures) >= 2 * workers:
                    break
            while futures:
                finished, _ = wait(futures, return_when=FIRST_COMPLETED)
                for fut in sorted(finished, key=lambda f: units.index(futures[f])):
                    u = futures.pop(fut)
                    results[u] = fut.result()
                    if checkpoint:
                        _save_unit(_unit_path(cfg, u), results[u])
                    done += 1
                    if stop_after is not None and done >= stop_after:
                        for f in futures:
                            f.cancel()
                        raise Interrupted(f"stopped after {done} units")
                    nxt = next(queue, None)
                    if nxt is not None:
                        futures[pool.submit(compute_unit, cfg, nxt)] = nxt
    records = reduce_records(cfg, [(u, results[u]) for u in units])
    check_unique(records)
    if write:
        from .records import records_to_csv, records_to_json

        out = Path(cfg.out)
        atomic_write(out / "records.json", records_to_json(records))
        atomic_write(out / "records.csv", records_to_csv(records))
    return records


# --- reduction --------------------------------------------------------------------------


def record_params(cfg: ExperimentConfig, point=None) -> dict:
    beta, h, u, r = point if point is not None else (cfg.beta, cfg.h, cfg.u, cfg.r)
    return {"d": cfg.dim, "beta": float(beta), "h": float(h), "u": float(u), "r": float(r),
            "alpha": alpha_text(dict(cfg.alpha)), "p_max": cfg.p_max,
            "cn_exponent": cfg.cn_exponent, "cn_prefactor": cfg.cn_prefactor,
            "xi_law": cfg.xi_law, "pert_mode": cfg.pert_mode}


class _Emitter:
    def __init__(self, cfg):
        self.cfg = cfg
        self.records = []

    def __call__(self, n, observable, value, stderr, size, point=None):
        self.records.append(ResultRecord(
            kind=self.cfg.kind, params=record_params(self.cfg, point), n=int(n),
            observable=observable, value=float(value), stderr=float(stderr),
            ensemble_size=int(size), seed=self.cfg.seed))


def _by_size(cfg, unit_results):
    out = {n: [] for n in cfg.n_list}
    for (n, _), arrays in unit_results:
        out[n].append(arrays)
    return out


def _fit_record(emit, cfg, observable):
    rows = [r for r in emit.records if r.observable == observable and r.n > 0]
    if len(rows) < 3:
        return
    try:
        fit = fit_power_law([r.n**cfg.dim for r in rows], [r.value for r in rows],
                            [r.stderr for r in rows])
    except ValueError as exc:
        logger.warning("no scaling fit for %s: %s", observable, exc)
        return
    emit(0, f"{observable}.slope", fit.slope, fit.slope_err, rows[0].ensemble_size)


def _sampling_records(cfg, emit, n, arrays_list):
    ens = [obs.ThermalSummary.from_arrays(a) for a in arrays_list]
    size = len(ens)
    t = obs.inner_means_table(ens)
    ov = obs.overlap_variance(ens)
    emit(n, "overlap_variance", ov.value, ov.stderr, size)
    for key, tag in (("r12", "E_R12"), ("r11", "E_R11"), ("delta", "E_delta")):
        v, e = jackknife(t[key])
        emit(n, tag, v, e, size)
    acc = np.array([float(a["acceptance"]) for a in arrays_list])
    emit(n, "acceptance", acc.mean(), acc.std(ddof=1) / np.sqrt(size), size)
    if cfg.kind in ("variance-scan", "simulate"):
        mb = obs.moment_bounds(ens, ks=(2, 4, 8))
        for k, est in mb.items():
            emit(n, f"moment_C{k}", est.value, est.stderr, size)
    if cfg.kind == "variance-scan":
        gaps = obs.self_averaging_gaps(ens)
        for tag in ("overlap_thermal", "overlap_disorder", "delta_thermal",
                    "delta_disorder_abs", "r11_disorder_abs"):
            emit(n, tag, gaps[tag].value, gaps[tag].stderr, size)
        emit(n, "decomposition_closure", gaps["closure"], 0.0, size)
        ib = obs.ibp_check(ens, cfg.h)
        emit(n, "ibp_residual", ib.value, ib.stderr, size)
        total, ratio = obs.truncated_correlation_sum(ens)
        emit(n, "truncated_corr_sum", total, float("nan"), size)
        emit(n, "truncated_corr_ratio", ratio, float("nan"), size)
    if cfg.kind in ("variance-scan", "gg-scan") and cfg.replicas >= cfg.gg_m + 1:
        for f in cfg.gg_f_specs:
            lit = obs.gg_residual(ens, f, cfg.gg_m, symmetrize=False)
            sym = obs.gg_residual(ens, f, cfg.gg_m, symmetrize=True)
            emit(n, f"gg_residual[{f}]", lit.value, lit.stderr, size)
            emit(n, f"gg_residual_sym[{f}]", sym.value, sym.stderr, size)


def _audit_records(cfg, emit, unit_results):
    """Comparison records plus the verdict.

    A generic point whose comparisons include a >3 sigma excursion is
    re-tested at its shifted twin when the primary points fail the rule.
    """
    n_points = len(cfg.audit_points)
    z_by_point = {}
    for (n, k), a in unit_results:
        point = audit_point(cfg, k)
        names = audit_names(n**cfg.dim)
        err_q = float(a["exact_err"])
        for j, name in enumerate(names):
            mc, se, ex = float(a["mcmc"][j]), float(a["stderr"][j]), float(a["exact"][j])
            z = (mc - ex) / se if se > 0 else (0.0 if mc == ex else math.inf)
            z_by_point.setdefault(k, []).append(z)
            emit(n, f"{name}.mcmc", mc, se, 1, point)
            emit(n, f"{name}.exact", ex, err_q, 1, point)
            emit(n, f"{name}.z", z, 0.0, 1, point)

    def verdict(zs):
        zs = np.abs(np.array(zs))
        return zs, int(np.sum(zs > 3)), int(np.sum(zs > 4))

    chosen = list(range(n_points))
    zs, n3, n4 = verdict([z for k in chosen for z in z_by_point[k]])
    retested = 0
    if not (n4 == 0 and n3 <= len(zs) // 50):
        for k in range(n_points):
            if np.any(np.abs(z_by_point[k]) > 3):
                chosen[k] = k + n_points
                retested += 1
        zs, n3, n4 = verdict([z for k in chosen for z in z_by_point[k]])
    total = len(zs)
    passed = n4 == 0 and n3 <= total // 50
    emit(0, "audit.comparisons", total, 0.0, 1)
    emit(0, "audit.excursions_3sigma", n3, 0.0, 1)
    emit(0, "audit.excursions_4sigma", n4, 0.0, 1)
    emit(0, "audit.max_abs_z", zs.max() if total else 0.0, 0.0, 1)
    emit(0, "audit.retested_points", retested, 0.0, 1)
    emit(0, "audit.passed", float(passed), 0.0, 1)


def audit_passed(records) -> bool:
    for r in records:
        if r.observable == "audit.passed":
            return r.value == 1.0
    raise ValueError("no audit verdict among the records")


def reduce_records(cfg: ExperimentConfig, unit_results) -> list:
    """Turn ordered ``(unit, arrays)`` pairs into result records."""
    emit = _Emitter(cfg)
    kind = cfg.kind
    if kind == "exact-audit":
        _audit_records(cfg, emit, unit_results)
        return emit.records
    groups = _by_size(cfg, unit_results)
    for n, items in groups.items():
        size = len(items)
        n_sites = n**cfg.dim
        if kind in SAMPLING_KINDS:
            _sampling_records(cfg, emit, n, items)
        elif kind == "ibp":
            rows = {k: np.array([float(a[k]) for a in items]) for k in obs.INNER_KEYS}
            v, e = jackknife(rows["delta"] - cfg.h * (rows["r11"] - rows["r12"]))
            emit(n, "ibp_residual", v, e, size)
            v, e = jackknife(rows["delta"])
            emit(n, "E_delta", v, e, size)
            v, e = jackknife(cfg.h * (rows["r11"] - rows["r12"]))
            emit(n, "h_E_R11_minus_R12", v, e, size)
        elif kind == "free-energy":
            psis = np.array([float(a["psi"]) for a in items])
            summary = obs.free_energy_summary(psis, [float(a["psi_err"]) for a in items])
            emit(n, "p_n", summary.p_n, summary.p_err, size)
            emit(n, "psi_variance", summary.variance, summary.variance_err, size)
            emit(n, "psi_variance_volume", summary.variance * n_sites,
                 summary.variance_err * n_sites, size)
            if not _uses_exact(cfg, n_sites):
                emit(n, "coarse_grid_warnings", sum(int(a["coarse"]) for a in items), 0.0, size)
            elif len(cfg.h_grid) >= 1:
                mat = np.array([a["psi_h"] for a in items])
                for j, hv in enumerate(cfg.h_grid):
                    v, e = jackknife(mat[:, j])
                    emit(n, f"p_n[h={hv!r}]", v, e, size)
                if len(cfg.h_grid) >= 3:
                    worst, err, diffs, errs = obs.convexity_check(cfg.h_grid, mat)
                    for hv, dv, de in zip(cfg.h_grid[1:-1], diffs, errs):
                        emit(n, f"second_diff[h={hv!r}]", float(dv), float(de), size)
                    emit(n, "convexity_min_second_diff", worst, err, size)
        elif kind == "perturbation-audit":
            psi0 = np.array([float(a["psi0"]) for a in items])
            re = np.array([a["psi_re"] for a in items])
            im = np.array([a["psi_im"] for a in items])
            gaps, errs = [], []
            for j, c in enumerate(cfg.c_list):
                v, e = jackknife(re[:, j] - psi0)
                gaps.append(abs(v))
                errs.append(e)
                emit(n, f"psi_gap[c={c!r}]", abs(v), e, size)
                v, e = jackknife(im[:, j])
                emit(n, f"psi_im[c={c!r}]", v, e, size)
            if len(cfg.c_list) >= 3:
                try:
                    fit = fit_power_law(cfg.c_list, gaps, errs)
                    emit(n, "psi_gap.c_slope", fit.slope, fit.slope_err, size)
                except ValueError as exc:
                    logger.warning("no c-slope at n=%d: %s", n, exc)
    if kind == "variance-scan":
        _fit_record(emit, cfg, "overlap_variance")
    if kind == "free-energy":
        _fit_record(emit, cfg, "psi_variance")
    return emit.records
