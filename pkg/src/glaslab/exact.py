"""Tensor-grid quadrature oracle for lattices of at most four sites.

All Gibbs quantities are computed from one weight tensor on a shared
Gauss-Legendre grid ``[-L, L]^N``.  The grid is certified twice: a tail bound
fixes ``L`` and a node-doubling check fixes the node count ``M``.  Mixed
moments ``<prod_x phi_x^{k_x}>`` for every ``k_x <= max_degree`` come from a
single contraction of the weight tensor with a Vandermonde matrix per axis,
and multi-replica overlap polynomials are assembled from those moments
(replicas are independent given the disorder).
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .lattice import (
    EXACT_SITE_CAP,
    LatticeSpec,
    ModelParams,
    NO_PERTURBATION,
    PerturbationSpec,
)

TAIL_TOL = 1e-12
DOUBLING_TOL = 1e-9
DEFAULT_NODE_BUDGET = 2 * 10**7
DEFAULT_MAX_DEGREE = 8


class QuadratureError(RuntimeError):
    """The grid certificate could not be met within the node budget."""


@dataclass(frozen=True)
class ComplexExpectation:
    value: complex
    error: float

    @property
    def real(self) -> float:
        return float(np.real(self.value))


@dataclass(frozen=True)
class CorrelationTensors:
    one_point: np.ndarray
    two_point: np.ndarray
    # site_moments[x, k] = <phi_x^k>, k = 0..max_degree
    site_moments: np.ndarray

    @property
    def truncated(self) -> np.ndarray:
        return self.two_point - np.outer(self.one_point, self.one_point)


def _log_density(phi, u, r, b, extra=0.0):
    return -u * phi**4 + r * phi**2 + b * phi + extra


def tail_cutoff(u: float, r: float, b_abs: float, extra_coef: float = 0.0,
                extra_power: int = 0, tol: float = TAIL_TOL) -> float:
    """Smallest ``L`` (0.05 steps) whose tail certificate holds.

    The one-sided tail of ``exp(e(phi))``, ``e = -u phi^4 + r phi^2 + |b| phi
    (+ extra)``, is bounded by ``exp(e(L)) / |e'(L)|`` once ``e`` is concave
    and decreasing beyond ``L``; it must be below ``tol`` times a lower bound
    on the central mass.
    """

    def e(x):
        return _log_density(x, u, r, b_abs, extra_coef * np.abs(x) ** extra_power)

    q = extra_power

    def de(x):
        return -4 * u * x**3 + 2 * r * x + b_abs + q * extra_coef * x ** max(q - 1, 0)

    def d2e(x):
        return -12 * u * x**2 + 2 * r + q * max(q - 1, 0) * extra_coef * x ** max(q - 2, 0)

    # lower bound on the mass: 2*delta times the minimum density near the mode
    xs = np.linspace(-10, 10, 4001) / u**0.25 * max(1.0, (abs(r) + b_abs) ** 0.5)
    mode = xs[np.argmax(e(xs))]
    delta = 0.1 * u**-0.25
    near = np.linspace(mode - delta, mode + delta, 201)
    log_mass_lb = math.log(2 * delta) + float(np.min(e(near)))

    L = max(0.5, math.sqrt(max(r, 0.0) / (6 * u)) + 0.05, abs(mode) + delta)
    while True:
        slope = de(L)
        if slope < 0 and d2e(L) <= 0:
            log_tail = e(L) - math.log(-slope)
            if log_tail <= math.log(tol) + log_mass_lb:
                return float(L)
        L += 0.05
        if L > 1e3:
            raise QuadratureError("tail certificate failed: measure not confining")


@dataclass(frozen=True)
class QuadratureGrid:
    nodes: np.ndarray
    weights: np.ndarray
    cutoff: float
    # largest relative moment change seen in the doubling certificate
    certified_change: float

    @property
    def size(self) -> int:
        return len(self.nodes)

    @staticmethod
    def gauss_legendre(m: int, cutoff: float):
        x, w = np.polynomial.legendre.leggauss(m)
        return x * cutoff, w * cutoff

    @classmethod
    def certify(cls, u: float, r: float, b_list, cutoff: float, max_nodes: int,
                max_degree: int = DEFAULT_MAX_DEGREE, start: int = 16):
        """Smallest node count (grown geometrically) whose single-site moments
        move by less than ``DOUBLING_TOL`` when the node count is doubled."""
        m = start
        while m <= max_nodes:
            cur = _moments_on_grid(*cls.gauss_legendre(m, cutoff), u, r, b_list, max_degree)
            ref = _moments_on_grid(*cls.gauss_legendre(2 * m, cutoff), u, r, b_list, max_degree)
            scale = np.maximum(np.abs(ref), np.sqrt(np.abs(ref[:, [0]] * ref[:, [-1]])) * 1e-3)
            change = float(np.max(np.abs(cur - ref) / np.maximum(scale, 1e-300)))
            if change < DOUBLING_TOL:
                x, w = cls.gauss_legendre(m, cutoff)
                return cls(x, w, cutoff, change)
            m = max(m + 1, int(math.ceil(m * 1.25)))
        raise QuadratureError(
            f"node-doubling certificate failed up to {max_nodes} nodes on [-{cutoff}, {cutoff}]"
        )


def _moments_on_grid(x, w, u, r, b_list, max_degree):
    out = []
    for b in b_list:
        logf = _log_density(x, u, r, b)
        f = w * np.exp(logf - logf.max())
        z = f.sum()
        out.append([np.dot(f, x**k) / z for k in range(max_degree + 1)])
    return np.array(out)


def single_site_moment(u: float, r: float, b: float, k: int, max_nodes: int = 1024) -> float:
    """``<phi^k>`` under the density proportional to ``exp(-u phi^4 + r phi^2 + b phi)``."""
    if not 0 <= k <= 16:
        raise ValueError("k must lie in 0..16")
    if not u > 0:
        raise ValueError("u must be positive")
    cutoff = tail_cutoff(u, r, abs(b))
    grid = QuadratureGrid.certify(u, r, [b], cutoff, max_nodes, max_degree=max(k, 2))
    x, w = QuadratureGrid.gauss_legendre(2 * grid.size, cutoff)
    return float(_moments_on_grid(x, w, u, r, [b], k)[0, k])


def single_site_log_z(u: float, r: float, b: float, max_nodes: int = 1024) -> float:
    """``log of the integral of exp(-u phi^4 + r phi^2 + b phi)`` over the real line."""
    cutoff = tail_cutoff(u, r, abs(b))
    grid = QuadratureGrid.certify(u, r, [b], cutoff, max_nodes, max_degree=2)
    x, w = QuadratureGrid.gauss_legendre(2 * grid.size, cutoff)
    logf = _log_density(x, u, r, b)
    top = logf.max()
    return float(top + np.log(np.dot(w, np.exp(logf - top))))


def _pspin_monomials(xi: dict, pert: PerturbationSpec, n_sites: int) -> Counter:
    """Collect ``X_n`` into monomials keyed by per-site exponent tuples."""
    mono = Counter()
    for p in pert.support():
        if p not in xi:
            raise ValueError(f"disorder has no xi tensor for p={p}")
        scale = pert.alpha[p] * 2.0**-p * n_sites ** (-(p - 1) / 2)
        tensor = xi[p]
        for tup in itertools.product(range(n_sites), repeat=p):
            exps = [0] * n_sites
            for x in tup:
                exps[x] += 1
            mono[tuple(exps)] += scale * tensor[tup]
    return mono


class ExactSolution:
    """Weight tensor and derived moments for one (lattice, disorder, params, perturbation)."""

    def __init__(self, lattice: LatticeSpec, disorder, params: ModelParams,
                 pert: PerturbationSpec = NO_PERTURBATION,
                 node_budget: int = DEFAULT_NODE_BUDGET,
                 max_degree: int = DEFAULT_MAX_DEGREE):
        n_sites = lattice.site_count
        if n_sites > EXACT_SITE_CAP:
            raise ValueError(f"exact oracle handles at most {EXACT_SITE_CAP} sites, got {n_sites}")
        self.lattice = lattice
        self.disorder = disorder
        self.params = params
        self.pert = pert
        self.max_degree = max_degree
        self.n_sites = n_sites
        g = np.asarray(disorder.g, dtype=float)
        self._g = g

        max_nodes = int(math.floor(node_budget ** (1.0 / n_sites) + 1e-9))
        c = pert.c_n(n_sites) if pert.active else 0.0
        self._c = c
        self._mono = _pspin_monomials(disorder.xi, pert, n_sites) if pert.active else Counter()

        deg = int(lattice.degree().max()) if lattice.edge_count else 0
        r_eff = params.r + params.beta * deg
        b_field = params.h * (float(np.max(np.abs(g))) if n_sites else 0.0)
        extra_coef, extra_power = 0.0, 0
        if pert.mode == "real_sampled" and self._mono:
            extra_coef = abs(c) * sum(abs(v) for v in self._mono.values())
            extra_power = max(pert.support())
        cutoff = tail_cutoff(params.u, r_eff, b_field, extra_coef, extra_power)
        b_edge = b_field + params.beta * deg * cutoff
        self.grid = QuadratureGrid.certify(
            params.u, params.r, [0.0, b_edge, -b_edge], cutoff, max_nodes,
        )
        if self.grid.size**n_sites > node_budget:
            raise QuadratureError("node budget exceeded")
        self._build()

    def _build(self):
        x, w = self.grid.nodes, self.grid.weights
        p, lat, n_sites = self.params, self.lattice, self.n_sites
        m = len(x)
        shape = (m,) * n_sites

        def axis_view(vec, site):
            s = [1] * n_sites
            s[site] = m
            return vec.reshape(s)

        logw = np.zeros(shape)
        base = np.log(w) - p.u * x**4 + p.r * x**2
        for site in range(n_sites):
            logw += axis_view(base + p.h * self._g[site] * x, site)
        for i, j in lat.edges:
            logw += p.beta * (axis_view(x, i) * axis_view(x, j))

        phase = None
        if self._mono:
            xgrid = np.zeros(shape)
            for exps, coef in self._mono.items():
                term = coef
                for site, k in enumerate(exps):
                    if k:
                        term = term * axis_view(x**k, site)
                xgrid += term
            if self.pert.mode == "imaginary_exact":
                phase = self._c * xgrid
            else:
                logw += self._c * xgrid

        shift = float(logw.max())
        weights = np.exp(logw - shift)
        del logw
        if phase is not None:
            weights = weights * np.exp(1j * phase)
        self._shift = shift

        vander = x[:, None] ** np.arange(self.max_degree + 1)[None, :]
        t = weights
        for _ in range(n_sites):
            t = np.tensordot(t, vander, axes=([0], [0]))
        self._raw = t
        self._abs_total = float(np.sum(np.abs(weights)))
        z0 = t[(0,) * n_sites]
        if abs(z0) <= self.error_scale * self._abs_total:
            raise QuadratureError(
                "partition function vanishes within quadrature error (complex cancellation)"
            )
        self._z0 = z0

    @property
    def error_scale(self) -> float:
        return max(self.grid.certified_change, TAIL_TOL) * 10

    @cached_property
    def moments(self) -> np.ndarray:
        """``moments[k_1, ..., k_N] = <prod_x phi_x^{k_x}>``."""
        return self._raw / self._z0

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self._raw)

    def log_z(self) -> complex:
        value = np.log(complex(self._z0)) + self._shift
        return value if self.is_complex else value.real

    def partition_function(self) -> ComplexExpectation:
        value = complex(self._z0) * math.exp(self._shift)
        if not self.is_complex:
            value = value.real
        err = self.error_scale * self._abs_total * math.exp(self._shift)
        return ComplexExpectation(value, err)

    def moment(self, exps) -> complex:
        exps = tuple(int(k) for k in exps)
        if len(exps) != self.n_sites:
            raise ValueError("exponent vector length must equal site count")
        if max(exps, default=0) > self.max_degree:
            raise ValueError(f"moment degree {max(exps)} beyond stored degree {self.max_degree}")
        return self.moments[exps]

    def expectation(self, observable: dict) -> ComplexExpectation:
        """Gibbs expectation of ``sum coeff * prod_{x in sites} phi_x``.

        ``observable`` maps a tuple of site indices (repeats allowed, the empty
        tuple is the constant) to a coefficient.
        """
        total = 0.0
        scale = 0.0
        for sites, coef in observable.items():
            exps = [0] * self.n_sites
            for s in sites:
                exps[s] += 1
            val = coef * self.moment(exps)
            total = total + val
            scale += abs(val)
        if not self.is_complex:
            total = float(np.real(total))
        return ComplexExpectation(total, self.error_scale * max(scale, 1.0))

    def correlations(self) -> CorrelationTensors:
        n_sites = self.n_sites
        mom = self.moments
        zero = [0] * n_sites
        one = np.empty(n_sites, dtype=mom.dtype)
        two = np.empty((n_sites, n_sites), dtype=mom.dtype)
        site = np.empty((n_sites, self.max_degree + 1), dtype=mom.dtype)
        for x in range(n_sites):
            e = list(zero)
            e[x] = 1
            one[x] = mom[tuple(e)]
            for k in range(self.max_degree + 1):
                e = list(zero)
                e[x] = k
                site[x, k] = mom[tuple(e)]
            for y in range(n_sites):
                e = list(zero)
                e[x] += 1
                e[y] += 1
                two[x, y] = mom[tuple(e)]
        return CorrelationTensors(one, two, site)

    def replica_monomial(self, pairs) -> complex:
        """``<prod_j R_{a_j, b_j}>`` for replica label pairs (labels are any hashables)."""
        pairs = list(pairs)
        k = len(pairs)
        n_sites = self.n_sites
        if k == 0:
            return 1.0
        labels = sorted({lab for pair in pairs for lab in pair})
        total = 0.0
        for sites in itertools.product(range(n_sites), repeat=k):
            exps = {lab: [0] * n_sites for lab in labels}
            for (a, b), x in zip(pairs, sites):
                exps[a][x] += 1
                exps[b][x] += 1
            term = 1.0
            for lab in labels:
                term = term * self.moment(exps[lab])
            total = total + term
        return total / n_sites**k

    def free_energy(self) -> tuple[float, float]:
        lz = complex(self.log_z())
        return lz.real / self.n_sites, lz.imag / self.n_sites


def solve_exact(lattice, disorder, params, pert=NO_PERTURBATION, **kwargs) -> ExactSolution:
    return ExactSolution(lattice, disorder, params, pert, **kwargs)


def partition_function_exact(lattice, disorder, params, pert=NO_PERTURBATION, **kwargs):
    return solve_exact(lattice, disorder, params, pert, **kwargs).partition_function()


def gibbs_expectation_exact(lattice, disorder, params, pert, observable, **kwargs):
    return solve_exact(lattice, disorder, params, pert, **kwargs).expectation(observable)


def replica_observable_exact(lattice, disorder, params, pert, spec, solution=None, **kwargs):
    """Exact ``<spec>`` for an overlap polynomial (string or parsed expression)."""
    from .fspec import parse_fspec

    sol = solution or solve_exact(lattice, disorder, params, pert, **kwargs)
    expr = parse_fspec(spec) if isinstance(spec, str) else spec
    total = 0.0
    scale = 0.0
    for pairs, coef in expr.expand().items():
        val = coef * sol.replica_monomial(pairs)
        total = total + val
        scale += abs(val)
    if not sol.is_complex:
        total = float(np.real(total))
    return ComplexExpectation(total, sol.error_scale * max(scale, 1.0))


def free_energy_exact(lattice, disorder, params, pert=NO_PERTURBATION, **kwargs):
    """``(Re log Z / N, Im log Z / N)`` on the principal branch."""
    return solve_exact(lattice, disorder, params, pert, **kwargs).free_energy()
