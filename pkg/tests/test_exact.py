import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma

from glaslab.disorder import DisorderRealization, RNGSpec, sample_disorder
from glaslab.exact import (
    QuadratureError,
    free_energy_exact,
    gibbs_expectation_exact,
    partition_function_exact,
    replica_observable_exact,
    single_site_log_z,
    single_site_moment,
    solve_exact,
)
from glaslab.fspec import FSpecError, parse_fspec, relabel
from glaslab.lattice import NO_PERTURBATION, ModelParams, PerturbationSpec, build_lattice

M2 = gamma(0.75) / gamma(0.25)
P0 = ModelParams(0.5, 0.5, 1.0, 0.5)
ZERO = ModelParams.unchecked(0.0, 0.0, 1.0, 0.0)


def _fixed(n_sites, seed=0, xi_orders=()):
    rng = np.random.default_rng(seed)
    xi = {p: rng.standard_normal((n_sites,) * p) for p in xi_orders}
    return DisorderRealization.fixed(rng.standard_normal(n_sites), xi)


def test_single_site_moment_examples():
    assert single_site_moment(1, 0, 0, 0) == pytest.approx(1.0, abs=1e-12)
    assert single_site_moment(1, 0, 0, 1) == pytest.approx(0.0, abs=1e-12)
    assert single_site_moment(1, 0, 0, 2) == pytest.approx(M2, rel=1e-9)
    # the quoted 7-digit literal is a rounding of the gamma ratio 0.33798912...
    assert single_site_moment(1, 0, 0, 2) == pytest.approx(0.3379894, abs=5e-7)


def test_single_site_moment_preconditions():
    with pytest.raises(ValueError):
        single_site_moment(1, 0, 0, 17)
    with pytest.raises(ValueError):
        single_site_moment(0, 0, 0, 2)


@given(st.floats(0.2, 3), st.floats(-2, 3), st.floats(-2, 2))
@settings(max_examples=25, deadline=None)
def test_single_site_moment_against_dense_trapezoid(u, r, b):
    x = np.linspace(-8, 8, 40001)
    logf = -u * x**4 + r * x**2 + b * x
    f = np.exp(logf - logf.max())
    ref = np.trapezoid(f * x**2, x) / np.trapezoid(f, x)
    assert single_site_moment(u, r, b, 2) == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_product_measure_partition_function(n):
    lat = build_lattice(1, n)
    z = partition_function_exact(lat, _fixed(n), ZERO)
    z0 = math.exp(single_site_log_z(1.0, 0.0, 0.0))
    assert z.value == pytest.approx(z0**n, rel=1e-9)
    psi, psi_im = free_energy_exact(lat, _fixed(n), ZERO)
    assert psi == pytest.approx(math.log(z0), rel=1e-9)
    assert psi_im == 0.0


def test_imaginary_with_zero_c_matches_off():
    lat = build_lattice(1, 3)
    dis = _fixed(3, 1, xi_orders=(2,))
    pert = PerturbationSpec({2: 1.0}, p_max=2, mode="imaginary_exact").with_c(0.0, 3)
    z_im = partition_function_exact(lat, dis, P0, pert)
    z_off = partition_function_exact(lat, dis, P0)
    assert complex(z_im.value) == pytest.approx(z_off.value, rel=1e-12)
    assert free_energy_exact(lat, dis, P0, pert)[1] == pytest.approx(0.0, abs=1e-12)


def test_two_site_partition_function_matches_dense_trapezoid():
    lat = build_lattice(1, 2)
    g = np.array([0.3, -0.7])
    params = ModelParams.unchecked(0.5, 0.5, 1.0, 0.0)
    z = partition_function_exact(lat, DisorderRealization.fixed(g), params)
    x = np.linspace(-5, 5, 2001)
    a, b = np.meshgrid(x, x, indexing="ij")
    e = (-(a**4 + b**4) + 0.5 * a * b + 0.5 * (g[0] * a + g[1] * b))
    ref = np.trapezoid(np.trapezoid(np.exp(e), x, axis=1), x)
    assert isinstance(z.value, float) and z.value > 0
    assert z.value == pytest.approx(ref, rel=1e-8)
    psi, _ = free_energy_exact(lat, DisorderRealization.fixed(g), params)
    assert psi == pytest.approx(math.log(z.value) / 2, rel=1e-10)


def test_gibbs_expectation_examples():
    lat = build_lattice(1, 3)
    dis = _fixed(3, 2)
    assert gibbs_expectation_exact(lat, dis, P0, NO_PERTURBATION, {(): 1.0}).value == 1.0
    for x in range(3):
        val = gibbs_expectation_exact(lat, dis, ZERO, NO_PERTURBATION, {(x,): 1.0}).value
        assert val == pytest.approx(0.0, abs=1e-12)
    one = build_lattice(1, 1)
    val = gibbs_expectation_exact(one, DisorderRealization.fixed([1.0]),
                                  ModelParams(0.8, 1.0, 1.0, 0.0), NO_PERTURBATION, {(0, 0): 1.0})
    assert val.value == pytest.approx(single_site_moment(1, 0, 1, 2), rel=1e-9)


def test_expectation_is_linear_in_the_observable():
    lat = build_lattice(1, 3)
    sol = solve_exact(lat, _fixed(3, 3), P0)
    obs = {(0,): 2.0, (1, 2): -0.5, (0, 0, 1, 1): 1.5}
    parts = sum(c * sol.expectation({k: 1.0}).value for k, c in obs.items())
    assert sol.expectation(obs).value == pytest.approx(parts, rel=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_replica_examples_at_zero_coupling(n):
    lat = build_lattice(1, n)
    sol = solve_exact(lat, _fixed(n), ZERO)
    r12 = replica_observable_exact(lat, None, None, None, "R12", solution=sol)
    r12sq = replica_observable_exact(lat, None, None, None, "R12**2", solution=sol)
    assert r12.value == pytest.approx(0.0, abs=1e-12)
    assert r12sq.value == pytest.approx(M2**2 / n, rel=1e-9)


def test_replica_assembly_from_correlations():
    lat = build_lattice(2, 2)
    sol = solve_exact(lat, _fixed(4, 4), P0)
    corr = sol.correlations()
    n = 4
    r11 = replica_observable_exact(lat, None, None, None, "R11", solution=sol).value
    r12 = replica_observable_exact(lat, None, None, None, "R12", solution=sol).value
    r12sq = replica_observable_exact(lat, None, None, None, "R12**2", solution=sol).value
    assert r11 == pytest.approx(np.trace(corr.two_point) / n, rel=1e-12)
    assert r12 == pytest.approx(np.sum(corr.one_point**2) / n, rel=1e-12)
    assert r12sq == pytest.approx(np.sum(corr.two_point**2) / n**2, rel=1e-12)


def test_correlation_tensor_invariants():
    lat = build_lattice(1, 4)
    for seed in range(5):
        corr = solve_exact(lat, _fixed(4, seed), P0).correlations()
        two = corr.two_point
        assert np.allclose(two, two.T, rtol=0, atol=1e-14)
        assert np.allclose(np.diag(two), corr.site_moments[:, 2], rtol=1e-12)
        assert np.all(two**2 <= np.outer(np.diag(two), np.diag(two)) * (1 + 1e-12))
        assert np.allclose(corr.site_moments[:, 0], 1.0)


def test_matches_brute_force_enumeration_of_a_three_site_chain():
    # explicit sum over a coarse grid of the exponentiated Hamiltonian
    lat = build_lattice(1, 3)
    dis = _fixed(3, 5)
    sol = solve_exact(lat, dis, P0)
    x = np.linspace(-4, 4, 321)
    a, b, c = np.meshgrid(x, x, x, indexing="ij")
    phi = (a, b, c)
    e = sum(-P0.u * p**4 + P0.r * p**2 + P0.h * g * p for p, g in zip(phi, dis.g))
    e = e + P0.beta * (a * b + b * c)
    w = np.exp(e - e.max())
    ref = (w * a * c).sum() / w.sum()
    assert sol.moment((1, 0, 1)) == pytest.approx(ref, rel=1e-6)


@given(st.permutations([1, 2, 3]))
@settings(max_examples=6, deadline=None)
def test_replica_exchangeability(perm):
    lat = build_lattice(1, 3)
    sol = solve_exact(lat, _fixed(3, 6), P0)
    spec = parse_fspec("R12*R13 - 2*R23**2 + R11*R23")
    permuted = relabel(spec, {i + 1: p for i, p in enumerate(perm)})
    a = replica_observable_exact(lat, None, None, None, spec, solution=sol).value
    b = replica_observable_exact(lat, None, None, None, permuted, solution=sol).value
    assert b == pytest.approx(a, rel=1e-12)


def test_rejects_clamp_and_excess_degree():
    lat = build_lattice(1, 2)
    sol = solve_exact(lat, _fixed(2), P0)
    with pytest.raises(FSpecError):
        replica_observable_exact(lat, None, None, None, "clamp(R12)", solution=sol)
    with pytest.raises(ValueError):
        replica_observable_exact(lat, None, None, None, "R11**5", solution=sol)


def test_rejects_more_than_four_sites():
    with pytest.raises(ValueError):
        solve_exact(build_lattice(1, 5), _fixed(5), P0)


def test_node_budget_exceeded():
    with pytest.raises(QuadratureError):
        solve_exact(build_lattice(1, 4), _fixed(4), P0, node_budget=100)


def test_off_mode_is_real_and_imaginary_mode_is_complex():
    lat = build_lattice(1, 2)
    dis = _fixed(2, 7, xi_orders=(2,))
    assert not solve_exact(lat, dis, P0).is_complex
    pert = PerturbationSpec({2: 1.0}, p_max=2, mode="imaginary_exact")
    sol = solve_exact(lat, dis, P0, pert)
    assert sol.is_complex
    assert sol.expectation({(): 1.0}).value == pytest.approx(1.0)


def test_imaginary_perturbation_free_energy_shift_is_quadratic_in_c():
    lat = build_lattice(1, 2)
    dis = _fixed(2, 8, xi_orders=(2,))
    base = PerturbationSpec({2: 1.0}, p_max=2, mode="imaginary_exact")
    psi0 = free_energy_exact(lat, dis, P0)[0]
    cs = np.array([0.4, 0.2, 0.1, 0.05])
    gaps = [abs(free_energy_exact(lat, dis, P0, base.with_c(c, 2))[0] - psi0) for c in cs]
    slope = np.polyfit(np.log(cs), np.log(gaps), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.3)


def test_real_sampled_partition_function_matches_weight():
    # c X added to the exponent: check against a dense two-site trapezoid
    lat = build_lattice(1, 2)
    dis = _fixed(2, 9, xi_orders=(2,))
    pert = PerturbationSpec({2: 0.5}, p_max=2, mode="real_sampled").with_c(0.3, 2)
    z = partition_function_exact(lat, dis, P0, pert).value
    x = np.linspace(-5, 5, 2001)
    a, b = np.meshgrid(x, x, indexing="ij")
    phi = (a, b)
    xs = sum(dis.xi[2][i, j] * phi[i] * phi[j] for i, j in itertools.product(range(2), repeat=2))
    xval = 0.5 * 0.25 * 2 ** -0.5 * xs
    e = sum(-p**4 + 0.5 * p**2 + 0.5 * g * p for p, g in zip(phi, dis.g)) + 0.5 * a * b + 0.3 * xval
    ref = np.trapezoid(np.trapezoid(np.exp(e), x, axis=1), x)
    assert z == pytest.approx(ref, rel=1e-8)


def test_moment_bound_stability_between_three_and_four_sites():
    rng = RNGSpec(2024)
    vals = {}
    for n in (3, 4):
        lat = build_lattice(1, n)
        tops = []
        for i in range(40):
            dis = sample_disorder(lat, NO_PERTURBATION, rng, i)
            tops.append(solve_exact(lat, dis, P0).correlations().site_moments[:, 4].real.max())
        vals[n] = np.mean(tops)
    assert abs(vals[3] - vals[4]) / vals[4] < 0.2


def test_deterministic_and_thread_safe():
    from concurrent.futures import ThreadPoolExecutor

    lat = build_lattice(1, 3)
    dis = _fixed(3, 10)
    ref = solve_exact(lat, dis, P0).moments
    with ThreadPoolExecutor(4) as pool:
        outs = list(pool.map(lambda _: solve_exact(lat, dis, P0).moments, range(4)))
    assert all(np.array_equal(ref, o) for o in outs)
