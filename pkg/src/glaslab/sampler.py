"""Adaptive single-site Metropolis sampling over continuous spins.

Each replica owns two random streams derived from ``(seed, realization,
replica_id)``: one for Gaussian proposals and one for acceptance uniforms.
Keeping them separate makes the trajectory independent of how sweeps are
batched, so a chain run in one block, sweep by sweep, or inside a tempering
ladder consumes identical random numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .disorder import RNGSpec
from .lattice import (
    LatticeSpec,
    ModelParams,
    NO_PERTURBATION,
    PerturbationSpec,
    bond_sum,
    energy_delta,
    full_hamiltonian,
)

ACCEPT_BAND = (0.35, 0.55)
_BLOCK = 512


@dataclass(frozen=True)
class ProposalSchedule:
    widths: np.ndarray
    band: tuple = ACCEPT_BAND
    epoch_length: int = 50
    frozen: bool = False

    @classmethod
    def uniform(cls, n_sites, width=1.0, **kw):
        return cls(np.full(n_sites, float(width)), **kw)

    def freeze(self) -> "ProposalSchedule":
        return replace(self, frozen=True)


@dataclass
class SweepStats:
    acceptance: float
    mean_abs_move: float
    energy: float
    site_acceptance: np.ndarray = field(default=None, repr=False)
    frozen_epoch: bool = False


@dataclass
class ReplicaState:
    config: np.ndarray
    replica_id: int
    proposal_stream: np.random.Generator = field(repr=False)
    accept_stream: np.random.Generator = field(repr=False)
    sweep_counter: int = 0
    energy: float = float("nan")

    @classmethod
    def create(cls, n_sites, rng: RNGSpec, realization_index, replica_id, init_scale=0.5):
        init = rng.stream(realization_index, "chain-init", replica_id)
        return cls(
            config=init_scale * init.standard_normal(n_sites),
            replica_id=replica_id,
            proposal_stream=rng.stream(realization_index, "chain-proposal", replica_id),
            accept_stream=rng.stream(realization_index, "chain-accept", replica_id),
        )


def adapt_proposals(schedule: ProposalSchedule, acceptance) -> ProposalSchedule:
    """Scale widths by 1.1 above the band, 0.9 below it; per site if given an array."""
    if schedule.frozen:
        raise ValueError("schedule is frozen; widths no longer adapt")
    lo, hi = schedule.band
    acc = np.broadcast_to(np.asarray(acceptance, dtype=float), schedule.widths.shape)
    factor = np.where(acc > hi, 1.1, np.where(acc < lo, 0.9, 1.0))
    return replace(schedule, widths=schedule.widths * factor)


def _sweeps(state: ReplicaState, disorder, params, pert, lattice, schedule, n_sweeps,
            snaps=None, record_every=0, phase=0):
    """Advance ``n_sweeps`` with fixed widths; returns per-site accept counts and |move| sum."""
    n_sites = lattice.site_count
    normals = state.proposal_stream.standard_normal((n_sweeps, n_sites))
    uniforms = state.accept_stream.random((n_sweeps, n_sites))
    accepted = np.zeros(n_sites, dtype=np.int64)
    if snaps is None:
        snaps = np.zeros((0, n_sites))
    if not pert.active:
        d_energy, moved = _kernels.metropolis_sweeps(
            state.config, np.asarray(disorder.g, dtype=float), lattice.nbr_ptr, lattice.nbr_idx,
            params.beta, params.h, params.u, params.r, schedule.widths,
            normals, uniforms, accepted, snaps, record_every, phase,
        )
    else:
        d_energy, moved = _python_sweeps(state.config, disorder, params, pert, lattice,
                                         schedule.widths, normals, uniforms, accepted,
                                         snaps, record_every, phase)
    state.energy += d_energy
    state.sweep_counter += n_sweeps
    return accepted, moved


def _python_sweeps(phi, disorder, params, pert, lattice, widths, normals, uniforms, accepted,
                   snaps, record_every, phase):
    d_energy = 0.0
    moved = 0.0
    k = 0
    for t in range(normals.shape[0]):
        for s in range(lattice.site_count):
            new = phi[s] + widths[s] * normals[t, s]
            de = energy_delta(phi, disorder, params, pert, s, new, lattice)
            if de <= 0.0 or uniforms[t, s] < np.exp(-de):
                moved += abs(new - phi[s])
                phi[s] = new
                d_energy += de
                accepted[s] += 1
        if record_every > 0 and (phase + t + 1) % record_every == 0:
            snaps[k] = phi
            k += 1
    return d_energy, moved


def metropolis_sweep(state: ReplicaState, disorder, params: ModelParams,
                     pert: PerturbationSpec, schedule: ProposalSchedule,
                     lattice: LatticeSpec) -> SweepStats:
    """One sequential pass over all sites."""
    if pert.mode == "imaginary_exact":
        raise ValueError("the imaginary perturbation has no sampling measure")
    if not np.isfinite(state.energy):
        state.energy = float(full_hamiltonian(state.config, disorder, params, pert, lattice))
    accepted, moved = _sweeps(state, disorder, params, pert, lattice, schedule, 1)
    n_acc = int(accepted.sum())
    return SweepStats(
        acceptance=n_acc / lattice.site_count,
        mean_abs_move=moved / lattice.site_count,
        energy=state.energy,
        site_acceptance=accepted.astype(float),
    )


class _Chain:
    """One replica plus its proposal schedule and burn-in bookkeeping."""

    def __init__(self, lattice, disorder, params, pert, rng, realization_index, replica_id,
                 burn_in, initial_width=1.0, epoch_length=50):
        self.lattice, self.disorder, self.params, self.pert = lattice, disorder, params, pert
        self.state = ReplicaState.create(lattice.site_count, rng, realization_index, replica_id)
        self.state.energy = float(full_hamiltonian(self.state.config, disorder, params, pert,
                                                   lattice))
        self.schedule = ProposalSchedule.uniform(lattice.site_count, initial_width,
                                                 epoch_length=epoch_length)
        self.burn_in = burn_in
        self.history: list[SweepStats] = []
        self._epoch_acc = np.zeros(lattice.site_count)
        self._epoch_moved = 0.0
        self._epoch_sweeps = 0
        if burn_in == 0:
            self.schedule = self.schedule.freeze()

    def _close_epoch(self):
        n = max(self._epoch_sweeps, 1)
        site_acc = self._epoch_acc / n
        self.history.append(SweepStats(
            acceptance=float(site_acc.mean()),
            mean_abs_move=self._epoch_moved / (n * self.lattice.site_count),
            energy=self.state.energy,
            site_acceptance=site_acc,
            frozen_epoch=self.schedule.frozen,
        ))
        if not self.schedule.frozen:
            self.schedule = adapt_proposals(self.schedule, site_acc)
        self._epoch_acc[:] = 0.0
        self._epoch_moved = 0.0
        self._epoch_sweeps = 0

    def advance(self, n_sweeps, snaps=None, record_every=0):
        """Run ``n_sweeps``; burn-in adaptation and the freeze happen at fixed sweep counts.

        With ``record_every`` set, the configuration is stored into ``snaps``
        after every ``record_every``-th sweep of this call.
        """
        done = 0
        k = 0
        epoch = self.schedule.epoch_length
        while done < n_sweeps:
            step = min(n_sweeps - done, epoch - self._epoch_sweeps, _BLOCK)
            if not self.schedule.frozen:
                step = min(step, self.burn_in - self.state.sweep_counter)
            sub = None
            n_rec = 0
            if record_every:
                n_rec = (done % record_every + step) // record_every
                sub = snaps[k:k + n_rec]
            acc, moved = _sweeps(self.state, self.disorder, self.params, self.pert,
                                 self.lattice, self.schedule, step, sub, record_every,
                                 done % record_every if record_every else 0)
            k += n_rec
            self._epoch_acc += acc
            self._epoch_moved += moved
            self._epoch_sweeps += step
            done += step
            if self._epoch_sweeps == epoch:
                self._close_epoch()
            if not self.schedule.frozen and self.state.sweep_counter >= self.burn_in:
                if self._epoch_sweeps:
                    self._close_epoch()
                self.schedule = self.schedule.freeze()
        return k


@dataclass
class ChainResult:
    """Snapshots ``(m, samples, site_count)`` and diagnostics of ``m`` replica chains."""

    snapshots: np.ndarray
    schedules: list
    stats: list
    energies: np.ndarray

    def post_burn_in_acceptance(self) -> np.ndarray:
        """Per-replica, per-site acceptance averaged over frozen epochs."""
        rows = []
        for hist, sched in zip(self.stats, self.schedules):
            frozen = [s.site_acceptance for s in hist if s.frozen_epoch]
            rows.append(np.mean(frozen, axis=0) if frozen else np.full_like(sched.widths, np.nan))
        return np.array(rows)


def _run_single(lattice, disorder, params, pert, rng, realization_index, replica_id,
                burn_in, samples, thinning, initial_width, epoch_length):
    chain = _Chain(lattice, disorder, params, pert, rng, realization_index, replica_id,
                   burn_in, initial_width, epoch_length)
    chain.advance(burn_in)
    snaps = np.zeros((samples, lattice.site_count))
    chain.advance(samples * thinning, snaps, thinning)
    return snaps, chain


def run_chain(lattice: LatticeSpec, disorder, params: ModelParams,
              pert: PerturbationSpec = NO_PERTURBATION, m: int = 2, burn_in: int = 1000,
              samples: int = 1000, thinning: int = 1, rng: RNGSpec | None = None,
              realization_index: int = 0, replica_ids=None, initial_width: float = 1.0,
              epoch_length: int = 50) -> ChainResult:
    """``m`` independent chains over one disorder; snapshots every ``thinning`` sweeps."""
    if m < 1:
        raise ValueError("need at least one replica")
    if pert.mode == "imaginary_exact":
        raise ValueError("the imaginary perturbation has no sampling measure")
    rng = rng or RNGSpec(0)
    ids = list(range(m)) if replica_ids is None else list(replica_ids)
    if len(ids) != m:
        raise ValueError("replica_ids must have length m")
    out = np.zeros((m, samples, lattice.site_count))
    schedules, stats, energies = [], [], []
    for a, rid in enumerate(ids):
        snaps, chain = _run_single(lattice, disorder, params, pert, rng, realization_index, rid,
                                   burn_in, samples, thinning, initial_width, epoch_length)
        out[a] = snaps
        schedules.append(chain.schedule)
        stats.append(chain.history)
        energies.append(chain.state.energy)
    return ChainResult(out, schedules, stats, np.array(energies))


@dataclass
class TemperingResult:
    betas: np.ndarray
    snapshots: np.ndarray  # (K, samples, site_count), indexed by temperature slot
    swap_acceptance: np.ndarray  # per adjacent pair


def swap_probability(beta_i, beta_j, energy_i, energy_j) -> float:
    """Exchange acceptance with ``energy`` the bond energy ``-sum_<xy> phi_x phi_y``."""
    return float(min(1.0, np.exp((beta_i - beta_j) * (energy_i - energy_j))))


def tempering_ladder(lattice: LatticeSpec, disorder, params: ModelParams, betas,
                     pert: PerturbationSpec = NO_PERTURBATION, burn_in: int = 1000,
                     samples: int = 1000, thinning: int = 1, rng: RNGSpec | None = None,
                     realization_index: int = 0, replica_offset: int = 0, swaps: bool = True,
                     initial_width: float = 1.0, epoch_length: int = 50) -> TemperingResult:
    """Replica exchange over a ladder of inverse temperatures.

    Slot ``k`` runs the chain ``run_chain`` would run at ``betas[k]`` with
    replica id ``replica_offset + k``; neighbouring slots try to swap
    configurations after every sweep (even pairs, then odd pairs).
    """
    betas = np.asarray(betas, dtype=float)
    if len(betas) < 2 or np.any(np.diff(betas) < 0):
        raise ValueError("need a non-decreasing ladder of at least two inverse temperatures")
    rng = rng or RNGSpec(0)
    chains = [
        _Chain(lattice, disorder, params.replace(beta=b), pert, rng, realization_index,
               replica_offset + k, burn_in, initial_width, epoch_length)
        for k, b in enumerate(betas)
    ]
    swap_stream = rng.stream(realization_index, "tempering-swap", replica_offset)
    n_pairs = len(betas) - 1
    tried = np.zeros(n_pairs)
    taken = np.zeros(n_pairs)
    snaps = np.zeros((len(betas), samples, lattice.site_count))
    total = burn_in + samples * thinning

    for t in range(total):
        for ch in chains:
            ch.advance(1)
        if swaps:
            start = t % 2
            for i in range(start, n_pairs, 2):
                a, b = chains[i], chains[i + 1]
                ea, eb = -bond_sum(a.state.config, lattice), -bond_sum(b.state.config, lattice)
                tried[i] += 1
                if swap_stream.random() < swap_probability(betas[i], betas[i + 1], ea, eb):
                    taken[i] += 1
                    a.state.config, b.state.config = b.state.config, a.state.config
                    for ch in (a, b):
                        ch.state.energy = float(full_hamiltonian(
                            ch.state.config, disorder, ch.params, pert, lattice))
        if t >= burn_in and (t - burn_in + 1) % thinning == 0:
            j = (t - burn_in + 1) // thinning - 1
            for k, ch in enumerate(chains):
                snaps[k, j] = ch.state.config
    with np.errstate(invalid="ignore"):
        rate = np.where(tried > 0, taken / np.maximum(tried, 1), np.nan)
    return TemperingResult(betas, snaps, rate)
