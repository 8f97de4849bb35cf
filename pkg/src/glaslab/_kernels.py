"""Compiled single-site Metropolis kernels (mode ``off``)."""

import math

import numba as nb
import numpy as np


@nb.njit(cache=True, nogil=True)
def metropolis_sweeps(phi, g, nbr_ptr, nbr_idx, beta, h, u, r, widths,
                      normals, uniforms, accepted, snaps, record_every, phase):
    """Run ``len(normals)`` sequential sweeps in place.

    Returns ``(sum of accepted energy changes, sum of |accepted moves|)``.
    When ``record_every > 0`` the configuration is copied into ``snaps`` each
    time the running sweep count ``phase + t + 1`` hits a multiple of
    ``record_every``.
    """
    n_sweeps, n_sites = normals.shape
    d_energy = 0.0
    moved = 0.0
    k = 0
    for t in range(n_sweeps):
        for s in range(n_sites):
            old = phi[s]
            new = old + widths[s] * normals[t, s]
            b = h * g[s]
            for j in range(nbr_ptr[s], nbr_ptr[s + 1]):
                b += beta * phi[nbr_idx[j]]
            o2 = old * old
            n2 = new * new
            de = u * (n2 * n2 - o2 * o2) - r * (n2 - o2) - b * (new - old)
            if de <= 0.0 or uniforms[t, s] < math.exp(-de):
                phi[s] = new
                d_energy += de
                moved += abs(new - old)
                accepted[s] += 1
        if record_every > 0 and (phase + t + 1) % record_every == 0:
            snaps[k, :] = phi
            k += 1
    return d_energy, moved


@nb.njit(cache=True, nogil=True)
def snapshot_overlaps(snaps):
    """``Q[t, a, b] = mean_x snaps[a, t, x] * snaps[b, t, x]`` for snaps (m, S, N)."""
    m, n_snap, n_sites = snaps.shape
    out = np.zeros((n_snap, m, m))
    for t in range(n_snap):
        for a in range(m):
            for b in range(a, m):
                acc = 0.0
                for x in range(n_sites):
                    acc += snaps[a, t, x] * snaps[b, t, x]
                acc /= n_sites
                out[t, a, b] = acc
                out[t, b, a] = acc
    return out
