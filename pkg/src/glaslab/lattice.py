"""Lattice geometry and Hamiltonian terms of the random field mixed-spin
Ginzburg-Landau model.

Spin configurations are plain ``float64`` arrays of length ``site_count``.
Sites of ``[1, n]^d`` are enumerated lexicographically with the first
coordinate varying slowest.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

#: Largest lattice the complex-weight oracle accepts.
EXACT_SITE_CAP = 4

PERT_MODES = ("off", "imaginary_exact", "real_sampled")
XI_LAWS = ("gaussian", "rademacher", "uniform")


@dataclass(frozen=True)
class LatticeSpec:
    """Hypercubic box ``Z^d ∩ [1, n]^d`` with open boundaries."""

    d: int
    n: int
    site_count: int
    edges: np.ndarray = field(repr=False, compare=False)
    # CSR neighbour table, used by the sweep kernels
    nbr_ptr: np.ndarray = field(repr=False, compare=False)
    nbr_idx: np.ndarray = field(repr=False, compare=False)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def coords(self) -> np.ndarray:
        """Integer coordinates (1-based) of every site, shape (site_count, d)."""
        grids = np.indices((self.n,) * self.d).reshape(self.d, -1).T
        return grids + 1

    def degree(self) -> np.ndarray:
        return np.diff(self.nbr_ptr)


def build_lattice(d: int, n: int) -> LatticeSpec:
    """Build ``V_n`` and its nearest-neighbour edge list.

    Edges are stored once per unordered pair as ``(i, j)`` with ``i < j``,
    sorted lexicographically.
    """
    if d < 1 or n < 1:
        raise ValueError(f"lattice needs d >= 1 and n >= 1, got d={d}, n={n}")
    if d * math.log2(n) >= 62:
        raise ValueError(f"n^d = {n}^{d} overflows 64-bit site indexing")
    site_count = n**d
    index = np.arange(site_count, dtype=np.int64).reshape((n,) * d)
    pairs = []
    for axis in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[axis] = slice(0, n - 1)
        hi[axis] = slice(1, n)
        pairs.append(np.stack([index[tuple(lo)].ravel(), index[tuple(hi)].ravel()], axis=1))
    edges = np.concatenate(pairs, axis=0) if pairs else np.zeros((0, 2), np.int64)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]

    nbrs = [[] for _ in range(site_count)]
    for i, j in edges:
        nbrs[i].append(j)
        nbrs[j].append(i)
    nbr_ptr = np.zeros(site_count + 1, dtype=np.int64)
    nbr_ptr[1:] = np.cumsum([len(a) for a in nbrs])
    nbr_idx = np.array([j for a in nbrs for j in sorted(a)], dtype=np.int64)
    return LatticeSpec(d, n, site_count, edges, nbr_ptr, nbr_idx)


@dataclass(frozen=True)
class ModelParams:
    beta: float
    h: float
    u: float
    r: float

    def __post_init__(self):
        for name in ("beta", "h", "u"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value}")
        if not np.isfinite(self.r):
            raise ValueError(f"r must be finite, got {self.r}")

    @classmethod
    def unchecked(cls, beta, h, u, r):
        """Build without positivity checks (beta=0 or h=0 reference points)."""
        obj = object.__new__(cls)
        for name, value in zip(("beta", "h", "u", "r"), (beta, h, u, r)):
            object.__setattr__(obj, name, float(value))
        if not obj.u > 0:
            raise ValueError("u must stay positive for the measure to be normalisable")
        return obj

    def replace(self, **changes) -> "ModelParams":
        values = dict(beta=self.beta, h=self.h, u=self.u, r=self.r)
        values.update(changes)
        return ModelParams.unchecked(**values)


@dataclass(frozen=True)
class PerturbationSpec:
    """Mixed p-spin perturbation data.

    ``c_n = cn_prefactor * site_count ** (-cn_exponent)``; the exponent must be
    positive so that ``c_n`` vanishes with the volume.
    """

    alpha: dict = field(default_factory=dict)
    p_max: int = 3
    cn_exponent: float = 0.25
    cn_prefactor: float = 1.0
    xi_law: str = "gaussian"
    mode: str = "off"

    def __post_init__(self):
        alpha = {int(p): float(a) for p, a in dict(self.alpha).items()}
        object.__setattr__(self, "alpha", alpha)
        if self.mode not in PERT_MODES:
            raise ValueError(f"unknown perturbation mode {self.mode!r}")
        if self.xi_law not in XI_LAWS:
            raise ValueError(f"unknown xi law {self.xi_law!r}")
        if self.p_max < 2:
            raise ValueError("p_max must be at least 2")
        for p, a in alpha.items():
            if not 2 <= p <= self.p_max:
                raise ValueError(f"alpha has p={p} outside 2..{self.p_max}")
            if abs(a) > 1:
                raise ValueError(f"|alpha_{p}| = {abs(a)} exceeds 1")
        if self.mode == "off" and self.support():
            raise ValueError("mode 'off' requires alpha identically zero")
        if not self.cn_exponent > 0:
            raise ValueError("cn_exponent must be positive so that c_n -> 0")

    def support(self) -> list[int]:
        return sorted(p for p, a in self.alpha.items() if a != 0.0)

    @property
    def active(self) -> bool:
        return self.mode != "off" and bool(self.support())

    def c_n(self, site_count: int) -> float:
        return self.cn_prefactor * site_count ** (-self.cn_exponent)

    def with_c(self, c: float, site_count: int) -> "PerturbationSpec":
        """Copy whose ``c_n`` equals ``c`` exactly at ``site_count``."""
        return PerturbationSpec(
            self.alpha, self.p_max, self.cn_exponent,
            c * site_count**self.cn_exponent, self.xi_law, self.mode,
        )


NO_PERTURBATION = PerturbationSpec()


def base_hamiltonian(config, g, params: ModelParams, lattice: LatticeSpec) -> float:
    """``-beta * sum_<xy> phi_x phi_y - h * sum_x g_x phi_x``, each bond once."""
    phi = np.asarray(config, dtype=float)
    g = np.asarray(g, dtype=float)
    _check_finite(phi, g)
    e = lattice.edges
    bond = float(np.dot(phi[e[:, 0]], phi[e[:, 1]])) if len(e) else 0.0
    return -params.beta * bond - params.h * float(np.dot(g, phi))


def bond_sum(config, lattice: LatticeSpec) -> float:
    e = lattice.edges
    if not len(e):
        return 0.0
    return float(np.dot(config[e[:, 0]], config[e[:, 1]]))


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite entries in spin configuration or field")


def pspin_form(xi_p: np.ndarray, phi: np.ndarray) -> float:
    """``sum over p-tuples of xi_x * phi_x1 ... phi_xp``."""
    t = xi_p
    for _ in range(xi_p.ndim):
        t = t @ phi
    return float(t)


def perturbation_x(config, disorder, pert: PerturbationSpec, site_count: int) -> float:
    """The real perturbation sum ``X_n`` (no ``c_n``, no imaginary unit)."""
    if not pert.active:
        return 0.0
    phi = np.asarray(config, dtype=float)
    total = 0.0
    for p in pert.support():
        if p not in disorder.xi:
            raise ValueError(f"disorder has no xi tensor for p={p}")
        norm = site_count ** (-(p - 1) / 2)
        total += pert.alpha[p] * 2.0**-p * norm * pspin_form(disorder.xi[p], phi)
    return total


def perturbation_hamiltonian(config, disorder, pert: PerturbationSpec, lattice: LatticeSpec):
    """``H^per``: ``i c_n X_n`` (imaginary_exact), ``c_n X_n`` (real_sampled) or 0."""
    if pert.mode == "off":
        return 0.0
    x = perturbation_x(config, disorder, pert, lattice.site_count)
    c = pert.c_n(lattice.site_count)
    if pert.mode == "imaginary_exact":
        return 1j * c * x
    return c * x


def full_hamiltonian(config, disorder, params: ModelParams, pert: PerturbationSpec,
                     lattice: LatticeSpec):
    if pert.mode == "imaginary_exact" and lattice.site_count > EXACT_SITE_CAP:
        raise ValueError(
            f"imaginary perturbation only supported up to {EXACT_SITE_CAP} sites"
        )
    phi = np.asarray(config, dtype=float)
    phi2 = phi * phi
    value = (base_hamiltonian(phi, disorder.g, params, lattice)
             + params.u * float(np.sum(phi2 * phi2))
             - params.r * float(np.sum(phi2)))
    return value - perturbation_hamiltonian(phi, disorder, pert, lattice)


def site_polynomial(xi_p: np.ndarray, phi: np.ndarray, site: int) -> np.ndarray:
    """Coefficients (low to high) of the p-spin form as a polynomial in ``phi[site]``."""
    rest = np.array(phi, dtype=float)
    rest[site] = 0.0
    polys = [xi_p]
    for _ in range(xi_p.ndim):
        new = [polys[0] @ rest]
        for k in range(1, len(polys)):
            new.append(polys[k] @ rest + polys[k - 1][..., site])
        new.append(polys[-1][..., site])
        polys = new
    return np.array([float(c) for c in polys])


class LocalConditional(NamedTuple):
    """Single-site log-density ``sum_k coeffs[k] t^k`` (constant term dropped).

    ``u``, ``r``, ``b`` are read off the quartic, quadratic and linear
    coefficients: the log-density is ``-u t^4 + r t^2 + b t + (other degrees)``.
    """

    u: float
    r: float
    b: float
    coeffs: np.ndarray


def local_conditional_params(config, disorder, params: ModelParams, pert: PerturbationSpec,
                             site: int, lattice: LatticeSpec) -> LocalConditional:
    if pert.mode == "imaginary_exact":
        raise ValueError("no real single-site conditional under an imaginary coupling")
    phi = np.asarray(config, dtype=float)
    nbrs = lattice.nbr_idx[lattice.nbr_ptr[site]:lattice.nbr_ptr[site + 1]]
    b = params.beta * float(phi[nbrs].sum()) + params.h * float(disorder.g[site])
    coeffs = np.array([0.0, b, params.r, 0.0, -params.u])
    if pert.active:
        c = pert.c_n(lattice.site_count)
        for p in pert.support():
            scale = c * pert.alpha[p] * 2.0**-p * lattice.site_count ** (-(p - 1) / 2)
            poly = scale * site_polynomial(disorder.xi[p], phi, site)
            if len(poly) > len(coeffs):
                coeffs = np.pad(coeffs, (0, len(poly) - len(coeffs)))
            coeffs[1:len(poly)] += poly[1:]
    return LocalConditional(-coeffs[4], coeffs[2], coeffs[1], coeffs)


def energy_delta(config, disorder, params: ModelParams, pert: PerturbationSpec,
                 site: int, new_value: float, lattice: LatticeSpec) -> float:
    """``H(phi with phi[site] = new_value) - H(phi)`` from site-local terms."""
    old = float(config[site])
    if new_value == old:
        return 0.0
    cond = local_conditional_params(config, disorder, params, pert, site, lattice)
    powers = np.arange(len(cond.coeffs))
    gain = np.dot(cond.coeffs, new_value**powers - old**powers)
    return -float(gain)


def lattice_automorphisms(lattice: LatticeSpec):
    """Yield site permutations induced by the hyperoctahedral symmetries of the box."""
    n, d = lattice.n, lattice.d
    idx = np.arange(lattice.site_count).reshape((n,) * d)
    for perm in itertools.permutations(range(d)):
        for flips in itertools.product((False, True), repeat=d):
            t = np.transpose(idx, perm)
            for axis, f in enumerate(flips):
                if f:
                    t = np.flip(t, axis)
            yield t.ravel().copy()
