"""Figures for the report path (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# observables drawn on log-log axes; anything else found here gets linear axes
LOGLOG = {"overlap_variance", "overlap_thermal", "overlap_disorder", "delta_thermal",
          "psi_variance", "truncated_corr_sum"}
FIGURE_OBSERVABLES = LOGLOG | {"psi_variance_volume", "ibp_residual", "moment_C4",
                               "truncated_corr_ratio", "p_n", "E_R12"}


def _wanted(obs: str) -> bool:
    return obs in FIGURE_OBSERVABLES or obs.startswith("gg_residual")


def render_figures(records, series, fig_dir) -> list:
    """One PNG per selected observable series, plus per-kind summary figures."""
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for (kind, obs, base), pts in series.items():
        if not _wanted(obs):
            continue
        x, y, e = (np.array(c, dtype=float) for c in zip(*pts))
        fig, ax = plt.subplots(figsize=(4.5, 3.4))
        ax.errorbar(x, y, yerr=e, marker="o", capsize=3, lw=1)
        if obs in LOGLOG and np.all(y > 0):
            ax.set_xscale("log")
            ax.set_yscale("log")
        else:
            ax.set_xscale("log")
            ax.axhline(0.0, color="0.6", lw=0.8)
        ax.set_xlabel("|V_n|")
        ax.set_ylabel(obs)
        ax.set_title(kind, fontsize=9)
        fig.tight_layout()
        path = fig_dir / f"{base}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)

    z = [r for r in records if r.kind == "exact-audit" and r.observable.endswith(".z")]
    if z:
        vals = np.array([r.value for r in z])
        fig, ax = plt.subplots(figsize=(5, 3.4))
        ax.plot(np.arange(len(vals)), vals, ".", ms=4)
        for lvl in (-3, 3):
            ax.axhline(lvl, color="C3", lw=0.8, ls="--")
        ax.set_xlabel("comparison")
        ax.set_ylabel("(mcmc - exact) / stderr")
        ax.set_title("exact-audit", fontsize=9)
        fig.tight_layout()
        path = fig_dir / "exact-audit__zscores.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)

    gaps = [r for r in records if r.kind == "perturbation-audit" and r.observable.startswith("psi_gap[")]
    if gaps:
        fig, ax = plt.subplots(figsize=(4.5, 3.4))
        for n in sorted({r.n for r in gaps}):
            rs = sorted((r for r in gaps if r.n == n), key=lambda r: _c_of(r.observable))
            c = np.array([_c_of(r.observable) for r in rs])
            y = np.array([r.value for r in rs])
            ax.errorbar(c, y, yerr=[r.stderr for r in rs], marker="o", capsize=3, lw=1,
                        label=f"n={n}")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("c_n")
        ax.set_ylabel("|p_alpha - p_0|")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = fig_dir / "perturbation-audit__psi_gap.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)
    return paths


def _c_of(tag: str) -> float:
    return float(tag.split("c=")[1].rstrip("]"))
