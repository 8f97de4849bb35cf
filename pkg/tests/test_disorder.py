import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from glaslab.disorder import DisorderRealization, RNGSpec, sample_disorder, xi_law_draw
from glaslab.lattice import NO_PERTURBATION, PerturbationSpec, build_lattice


def _same(a, b):
    return (np.array_equal(a.g, b.g) and a.xi.keys() == b.xi.keys()
            and all(np.array_equal(a.xi[p], b.xi[p]) for p in a.xi))


def test_off_mode_has_no_xi():
    lat = build_lattice(1, 4)
    d = sample_disorder(lat, NO_PERTURBATION, RNGSpec(1), 0)
    assert d.xi == {}
    assert d.g.shape == (4,)


def test_same_seed_and_index_is_bit_identical():
    lat = build_lattice(2, 2)
    pert = PerturbationSpec({2: 1.0, 3: 0.5}, mode="real_sampled")
    a = sample_disorder(lat, pert, RNGSpec(99), 7)
    b = sample_disorder(lat, pert, RNGSpec(99), 7)
    assert _same(a, b)
    c = sample_disorder(lat, pert, RNGSpec(99), 8)
    assert not np.array_equal(a.g, c.g)
    assert sorted(a.xi) == [2, 3]
    assert a.xi[3].shape == (4, 4, 4)


def test_rejects_negative_index_and_memory_cap():
    lat = build_lattice(1, 50)
    pert = PerturbationSpec({3: 1.0}, mode="real_sampled")
    with pytest.raises(ValueError):
        sample_disorder(lat, NO_PERTURBATION, RNGSpec(0), -1)
    with pytest.raises(MemoryError):
        sample_disorder(lat, pert, RNGSpec(0), 0, xi_entry_cap=10**4)


def test_worker_count_does_not_change_realizations():
    lat = build_lattice(1, 5)
    pert = PerturbationSpec({2: 1.0}, mode="real_sampled")
    rng = RNGSpec(2**63 + 11)
    serial = [sample_disorder(lat, pert, rng, i) for i in range(40)]
    with ThreadPoolExecutor(8) as pool:
        par = list(pool.map(lambda i: sample_disorder(lat, pert, rng, i), reversed(range(40))))
    par = par[::-1]
    assert all(_same(a, b) for a, b in zip(serial, par))


def test_single_site_field_moments():
    lat = build_lattice(1, 1)
    rng = RNGSpec(3)
    n = 10**5
    g = np.array([sample_disorder(lat, NO_PERTURBATION, rng, i).g[0] for i in range(n)])
    assert abs(g.mean()) < 4 / math.sqrt(n)
    assert abs(g.var() - 1) < 0.02


@pytest.mark.parametrize("law", ["gaussian", "rademacher", "uniform"])
def test_xi_laws_mean_zero_unit_variance(law):
    x = xi_law_draw(law, np.random.default_rng(0), 10**5)
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - 1) < 0.03
    if law == "rademacher":
        assert set(np.unique(x)) <= {-1.0, 1.0}
    if law == "uniform":
        assert np.all(np.abs(x) <= 1.7320509)


def test_xi_law_rejects_unknown():
    with pytest.raises(ValueError):
        xi_law_draw("cauchy", np.random.default_rng(0), 3)


def test_g_and_xi_streams_uncorrelated():
    lat = build_lattice(1, 1)
    pert = PerturbationSpec({2: 1.0}, mode="real_sampled")
    rng = RNGSpec(17)
    n = 10**4
    pairs = np.array([(d.g[0], d.xi[2][0, 0]) for d in
                      (sample_disorder(lat, pert, rng, i) for i in range(n))])
    corr = np.corrcoef(pairs.T)[0, 1]
    assert abs(corr) < 4 / math.sqrt(n)


def test_dump_and_load_roundtrip(tmp_path):
    lat = build_lattice(1, 3)
    pert = PerturbationSpec({2: 0.5, 3: -1.0}, mode="real_sampled", xi_law="rademacher")
    d = sample_disorder(lat, pert, RNGSpec(5), 2)
    path = tmp_path / "dis.npz"
    d.dump(path)
    back = DisorderRealization.load(path)
    assert _same(d, back)
    assert back.realization_index == 2 and back.master_seed == 5
    assert back.xi_law == "rademacher" and back.lattice_dims == (1, 3)


def test_rng_streams_are_distinct_per_purpose_and_replica():
    rng = RNGSpec(1)
    a = rng.stream(0, "chain-proposal", 0).random(4)
    b = rng.stream(0, "chain-proposal", 1).random(4)
    c = rng.stream(0, "chain-accept", 0).random(4)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.array_equal(a, RNGSpec(1).stream(0, "chain-proposal", 0).random(4))
