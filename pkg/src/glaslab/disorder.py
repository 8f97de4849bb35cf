"""Quenched disorder: the Gaussian random field ``g`` and p-spin couplings ``xi``.

Every random stream is derived from ``(master_seed, realization_index,
purpose tag, replica id)`` through :class:`numpy.random.SeedSequence` feeding a
counter-based Philox generator, so a realization never depends on how work is
split across workers.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import LatticeSpec, PerturbationSpec, XI_LAWS

DUMP_VERSION = 1
DEFAULT_XI_ENTRY_CAP = 10**7
_SQRT3 = np.sqrt(3.0)


def _tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


@dataclass(frozen=True)
class RNGSpec:
    master_seed: int

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")

    def seed_sequence(self, realization_index: int, purpose: str, replica_id: int = 0):
        seed = int(self.master_seed)
        key = [seed & 0xFFFFFFFF, seed >> 32, int(realization_index), _tag_id(purpose),
               int(replica_id)]
        return np.random.SeedSequence(key)

    def stream(self, realization_index: int, purpose: str, replica_id: int = 0):
        ss = self.seed_sequence(realization_index, purpose, replica_id)
        return np.random.Generator(np.random.Philox(ss))


def xi_law_draw(law: str, stream: np.random.Generator, size=None):
    """Zero-mean, unit-variance draws from one of the supported coupling laws."""
    if law == "gaussian":
        return stream.standard_normal(size)
    if law == "rademacher":
        return 2.0 * stream.integers(0, 2, size=size) - 1.0
    if law == "uniform":
        return stream.uniform(-_SQRT3, _SQRT3, size=size)
    raise ValueError(f"unknown xi law {law!r}; expected one of {XI_LAWS}")


@dataclass(frozen=True)
class DisorderRealization:
    g: np.ndarray
    xi: dict = field(default_factory=dict)
    realization_index: int = 0
    master_seed: int = 0
    xi_law: str = "gaussian"
    lattice_dims: tuple = ()

    @classmethod
    def fixed(cls, g, xi=None) -> "DisorderRealization":
        """A hand-specified realization (tests and audits)."""
        g = np.asarray(g, dtype=float)
        xi = {int(p): np.asarray(t, dtype=float) for p, t in (xi or {}).items()}
        return cls(g=g, xi=xi, realization_index=-1, master_seed=0)

    def dump(self, path) -> None:
        header = {
            "version": DUMP_VERSION,
            "master_seed": int(self.master_seed),
            "realization_index": int(self.realization_index),
            "xi_law": self.xi_law,
            "lattice_dims": list(self.lattice_dims),
            "xi_orders": sorted(self.xi),
        }
        arrays = {f"xi_{p}": t for p, t in self.xi.items()}
        with open(path, "wb") as fh:
            np.savez(fh, header=np.frombuffer(json.dumps(header).encode(), np.uint8),
                     g=self.g, **arrays)

    @classmethod
    def load(cls, path) -> "DisorderRealization":
        with np.load(Path(path)) as data:
            header = json.loads(bytes(data["header"]).decode())
            if header.get("version") != DUMP_VERSION:
                raise ValueError(f"unsupported disorder dump version {header.get('version')}")
            xi = {p: data[f"xi_{p}"].copy() for p in header["xi_orders"]}
            g = data["g"].copy()
        return cls(g=g, xi=xi, realization_index=header["realization_index"],
                   master_seed=header["master_seed"], xi_law=header["xi_law"],
                   lattice_dims=tuple(header["lattice_dims"]))


def sample_disorder(lattice: LatticeSpec, pert: PerturbationSpec, rng: RNGSpec,
                    realization_index: int, xi_entry_cap: int = DEFAULT_XI_ENTRY_CAP):
    if realization_index < 0:
        raise ValueError("realization_index must be non-negative")
    n_sites = lattice.site_count
    g = rng.stream(realization_index, "field-g").standard_normal(n_sites)
    xi = {}
    if pert.mode != "off":
        for p in pert.support():
            if n_sites**p > xi_entry_cap:
                raise MemoryError(
                    f"xi tensor for p={p} needs {n_sites}^{p} entries (cap {xi_entry_cap})"
                )
            stream = rng.stream(realization_index, f"couplings-xi-{p}")
            xi[p] = xi_law_draw(pert.xi_law, stream, (n_sites,) * p)
    return DisorderRealization(g=g, xi=xi, realization_index=realization_index,
                               master_seed=rng.master_seed, xi_law=pert.xi_law,
                               lattice_dims=(lattice.d, lattice.n))
