import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glaslab.disorder import DisorderRealization
from glaslab.lattice import (
    NO_PERTURBATION, ModelParams, PerturbationSpec, base_hamiltonian, build_lattice,
    energy_delta, full_hamiltonian, lattice_automorphisms, local_conditional_params,
    perturbation_hamiltonian,
)


@pytest.mark.parametrize("d,n,sites,edges", [(1, 3, 3, 2), (2, 2, 4, 4), (3, 2, 8, 12),
                                             (1, 1, 1, 0), (2, 3, 9, 12)])
def test_build_lattice_counts(d, n, sites, edges):
    lat = build_lattice(d, n)
    assert lat.site_count == sites
    assert lat.edge_count == edges


@given(st.integers(1, 3), st.integers(1, 5))
def test_edges_are_unique_unit_steps(d, n):
    lat = build_lattice(d, n)
    assert lat.site_count == n**d
    assert lat.edge_count == d * n ** (d - 1) * (n - 1)
    c = lat.coords()
    dist = np.abs(c[lat.edges[:, 0]] - c[lat.edges[:, 1]]).sum(axis=1)
    assert np.all(dist == 1)
    assert np.all(lat.edges[:, 0] < lat.edges[:, 1])
    assert len({tuple(e) for e in lat.edges}) == lat.edge_count
    # canonical order
    assert [tuple(e) for e in lat.edges] == sorted(tuple(e) for e in lat.edges)
    assert lat.degree().sum() == 2 * lat.edge_count


def test_build_lattice_rejects_bad_sizes():
    with pytest.raises(ValueError):
        build_lattice(0, 3)
    with pytest.raises(ValueError):
        build_lattice(1, 0)
    with pytest.raises(ValueError):
        build_lattice(40, 4)


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(0.0, 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        ModelParams(1.0, -1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        ModelParams(1.0, 1.0, 0.0, 0.0)
    ModelParams(1.0, 1.0, 1.0, -5.0)


def test_perturbation_spec_validation():
    with pytest.raises(ValueError):
        PerturbationSpec({2: 1.5}, mode="real_sampled")
    with pytest.raises(ValueError):
        PerturbationSpec({4: 0.5}, p_max=3, mode="real_sampled")
    with pytest.raises(ValueError):
        PerturbationSpec({2: 1.0}, mode="off")
    with pytest.raises(ValueError):
        PerturbationSpec(xi_law="cauchy")
    with pytest.raises(ValueError):
        PerturbationSpec(cn_exponent=0.0)


@given(st.integers(1, 10**6))
def test_default_cn_vanishes(n_sites):
    pert = PerturbationSpec({2: 1.0}, mode="real_sampled")
    assert pert.c_n(n_sites) == pytest.approx(n_sites**-0.25)
    assert pert.c_n(10 * n_sites) < pert.c_n(n_sites)


def test_base_hamiltonian_examples():
    lat2 = build_lattice(1, 2)
    assert base_hamiltonian([0.0, 0.0], [0.3, -2.0], ModelParams(1, 1, 1, 0), lat2) == 0.0
    assert base_hamiltonian([1.0, 1.0], [1.0, -1.0], ModelParams(1, 2, 1, 0), lat2) == -1.0
    lat1 = build_lattice(1, 1)
    assert base_hamiltonian([2.0], [1.0], ModelParams(5, 3, 1, 0), lat1) == -6.0


def test_full_hamiltonian_examples():
    lat1 = build_lattice(1, 1)
    dis = DisorderRealization.fixed([0.0])
    assert full_hamiltonian([1.0], dis, ModelParams(1, 1, 1, 0), NO_PERTURBATION, lat1) == 1.0
    lat = build_lattice(1, 3)
    dis3 = DisorderRealization.fixed([0.1, 0.2, 0.3])
    assert full_hamiltonian(np.zeros(3), dis3, ModelParams(1, 1, 1, 0.5), NO_PERTURBATION, lat) == 0.0
    pert = PerturbationSpec({2: 1.0}, p_max=2, mode="imaginary_exact").with_c(0.1, 1)
    disx = DisorderRealization.fixed([0.0], {2: [[1.0]]})
    val = full_hamiltonian([1.0], disx, ModelParams(1, 1, 1, 0), pert, lat1)
    assert val == pytest.approx(1 - 1j * 0.1 * 0.25)


def test_full_hamiltonian_rejects_imaginary_on_large_lattice():
    lat = build_lattice(1, 5)
    pert = PerturbationSpec({2: 1.0}, p_max=2, mode="imaginary_exact")
    dis = DisorderRealization.fixed(np.zeros(5), {2: np.ones((5, 5))})
    with pytest.raises(ValueError):
        full_hamiltonian(np.ones(5), dis, ModelParams(1, 1, 1, 0), pert, lat)


def test_perturbation_hamiltonian_examples():
    lat1 = build_lattice(1, 1)
    pert = PerturbationSpec({2: 1.0}, p_max=2, mode="real_sampled", cn_prefactor=1.0)
    dis = DisorderRealization.fixed([0.0], {2: [[2.0]]})
    assert perturbation_hamiltonian([3.0], dis, pert, lat1) == pytest.approx(4.5)
    lat2 = build_lattice(1, 2)
    pert2 = PerturbationSpec({2: 1.0}, p_max=2, mode="real_sampled").with_c(1.0, 2)
    dis2 = DisorderRealization.fixed([0.0, 0.0], {2: np.ones((2, 2))})
    # brute-force enumeration of the four 2-tuples: (1/4) * 2^(-1/2) * 4
    brute = 0.25 * 2**-0.5 * sum(1.0 for _ in itertools.product(range(2), repeat=2))
    assert perturbation_hamiltonian([1.0, 1.0], dis2, pert2, lat2) == pytest.approx(brute)
    assert brute == pytest.approx(1 / math.sqrt(2))
    assert perturbation_hamiltonian([1.0, 1.0], dis2, NO_PERTURBATION, lat2) == 0.0


def test_perturbation_rejects_missing_xi():
    lat = build_lattice(1, 2)
    pert = PerturbationSpec({2: 1.0, 3: 0.5}, mode="real_sampled")
    dis = DisorderRealization.fixed([0.0, 0.0], {2: np.ones((2, 2))})
    with pytest.raises(ValueError):
        perturbation_hamiltonian([1.0, 1.0], dis, pert, lat)


def _random_pert_disorder(rng, n_sites, alpha):
    xi = {p: rng.standard_normal((n_sites,) * p) for p in alpha}
    return DisorderRealization.fixed(rng.standard_normal(n_sites), xi)


@given(st.floats(0.05, 2.0), st.floats(0.05, 2.0), st.integers(0, 2**31))
@settings(max_examples=30)
def test_perturbation_is_linear_in_c_and_alpha(a2, c, seed):
    rng = np.random.default_rng(seed)
    lat = build_lattice(1, 3)
    dis = _random_pert_disorder(rng, 3, (2, 3))
    phi = rng.standard_normal(3)
    a2 = min(a2, 0.5)
    base = PerturbationSpec({2: a2}, mode="real_sampled").with_c(c, 3)
    double_c = PerturbationSpec({2: a2}, mode="real_sampled").with_c(2 * c, 3)
    double_a = PerturbationSpec({2: 2 * a2}, mode="real_sampled").with_c(c, 3)
    h0 = perturbation_hamiltonian(phi, dis, base, lat)
    assert perturbation_hamiltonian(phi, dis, double_c, lat) == pytest.approx(2 * h0, rel=1e-12)
    assert perturbation_hamiltonian(phi, dis, double_a, lat) == pytest.approx(2 * h0, rel=1e-12)


def test_real_sampled_with_zero_alpha_equals_off():
    rng = np.random.default_rng(4)
    lat = build_lattice(2, 2)
    dis = _random_pert_disorder(rng, 4, (2,))
    params = ModelParams(0.7, 0.4, 1.1, 0.3)
    phi = rng.standard_normal(4)
    zero = PerturbationSpec({}, mode="real_sampled")
    assert full_hamiltonian(phi, dis, params, zero, lat) == full_hamiltonian(
        phi, dis, params, NO_PERTURBATION, lat)


@given(st.integers(0, 2**31))
@settings(max_examples=20)
def test_zero_coupling_kills_base_hamiltonian(seed):
    rng = np.random.default_rng(seed)
    lat = build_lattice(2, 3)
    p = ModelParams.unchecked(0.0, 0.0, 1.0, 0.0)
    assert base_hamiltonian(rng.standard_normal(9), rng.standard_normal(9), p, lat) == 0.0


def test_local_conditional_examples():
    params = ModelParams(1.0, 2.0, 1.0, 0.0)
    lat1 = build_lattice(1, 1)
    lc = local_conditional_params([0.3], DisorderRealization.fixed([1.0]), params,
                                  NO_PERTURBATION, 0, lat1)
    assert lc.b == pytest.approx(2.0)
    assert (lc.u, lc.r) == (1.0, 0.0)
    lat3 = build_lattice(1, 3)
    lc = local_conditional_params([1.0, 5.0, -1.0], DisorderRealization.fixed([0.0, 0.0, 0.0]),
                                  ModelParams(3.0, 1.0, 1.0, 0.0), NO_PERTURBATION, 1, lat3)
    assert lc.b == pytest.approx(0.0)
    lat2 = build_lattice(1, 2)
    lc = local_conditional_params([0.0, 2.0], DisorderRealization.fixed([-1.0, 0.0]),
                                  ModelParams(0.5, 1.0, 1.0, 0.0), NO_PERTURBATION, 0, lat2)
    assert lc.b == pytest.approx(0.0)


def test_local_conditional_rejects_imaginary():
    lat = build_lattice(1, 2)
    pert = PerturbationSpec({2: 1.0}, mode="imaginary_exact")
    dis = DisorderRealization.fixed([0.0, 0.0], {2: np.ones((2, 2))})
    with pytest.raises(ValueError):
        local_conditional_params([1.0, 1.0], dis, ModelParams(1, 1, 1, 0), pert, 0, lat)


def test_local_conditional_matches_energy_in_real_sampled_mode():
    rng = np.random.default_rng(11)
    lat = build_lattice(1, 3)
    pert = PerturbationSpec({2: 0.7, 3: -0.4}, mode="real_sampled").with_c(0.8, 3)
    dis = _random_pert_disorder(rng, 3, (2, 3))
    params = ModelParams(0.6, 0.9, 1.2, 0.4)
    phi = rng.standard_normal(3)
    site = 1
    lc = local_conditional_params(phi, dis, params, pert, site, lat)
    # minus the energy, as a polynomial in phi_site, must match the local log-density
    ts = np.linspace(-2, 2, 7)
    logd = []
    for t in ts:
        cfg = phi.copy()
        cfg[site] = t
        logd.append(-full_hamiltonian(cfg, dis, params, pert, lat))
    poly = sum(c * ts**k for k, c in enumerate(lc.coeffs))
    assert (lc.coeffs[1], lc.coeffs[2]) == (lc.b, lc.r)
    diff = np.array(logd) - poly
    assert np.allclose(diff, diff[0], atol=1e-10)


def test_energy_delta_examples():
    lat1 = build_lattice(1, 1)
    dis = DisorderRealization.fixed([1.0])
    p = ModelParams(1.0, 1.0, 1.0, 0.0)
    assert energy_delta([0.0], dis, p, NO_PERTURBATION, 0, 1.0, lat1) == pytest.approx(0.0)
    assert energy_delta([0.7], dis, p, NO_PERTURBATION, 0, 0.7, lat1) == 0.0


@pytest.mark.parametrize("mode", ["off", "real_sampled"])
def test_energy_delta_matches_full_recomputation(mode):
    rng = np.random.default_rng(2024)
    lat = build_lattice(2, 2)
    alpha = {2: 0.8, 3: -0.6} if mode == "real_sampled" else {}
    pert = PerturbationSpec(alpha, mode=mode)
    dis = _random_pert_disorder(rng, 4, tuple(alpha))
    worst = 0.0
    for _ in range(1000):
        params = ModelParams(rng.uniform(0.1, 2), rng.uniform(0.1, 2), rng.uniform(0.1, 2),
                             rng.uniform(-1, 1))
        phi = rng.standard_normal(4) * 1.5
        site = int(rng.integers(4))
        new = float(rng.standard_normal() * 2)
        after = phi.copy()
        after[site] = new
        ref = full_hamiltonian(after, dis, params, pert, lat) - full_hamiltonian(
            phi, dis, params, pert, lat)
        got = energy_delta(phi, dis, params, pert, site, new, lat)
        scale = max(abs(ref), 1.0)
        worst = max(worst, abs(got - ref) / scale)
    assert worst <= 1e-10


def test_hamiltonian_invariant_under_automorphisms():
    rng = np.random.default_rng(5)
    params = ModelParams(0.8, 0.6, 1.0, 0.2)
    for d, n in [(1, 4), (2, 3)]:
        lat = build_lattice(d, n)
        phi = rng.standard_normal(lat.site_count)
        g = rng.standard_normal(lat.site_count)
        ref = full_hamiltonian(phi, DisorderRealization.fixed(g), params, NO_PERTURBATION, lat)
        perms = list(itertools.islice(lattice_automorphisms(lat), 8))
        assert len(perms) > 1
        for perm in perms:
            perm = np.asarray(perm)
            val = full_hamiltonian(phi[perm], DisorderRealization.fixed(g[perm]), params,
                                   NO_PERTURBATION, lat)
            assert val == pytest.approx(ref, rel=1e-12)


def test_rejects_non_finite_config():
    lat = build_lattice(1, 2)
    with pytest.raises(ValueError):
        base_hamiltonian([np.nan, 0.0], [0.0, 0.0], ModelParams(1, 1, 1, 0), lat)
