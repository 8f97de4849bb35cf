import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glaslab.fspec import FSpecError, parse_fspec, relabel


def _q(m, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, m))
    return (a + a.T) / 2


def test_constant_and_symbol():
    q = _q(3)
    assert parse_fspec("1").evaluate(q) == 1.0
    assert parse_fspec("R12").evaluate(q) == q[0, 1]
    assert parse_fspec("R_2_3").evaluate(q) == q[1, 2]
    assert parse_fspec("R21").pairs == {(1, 2)}


def test_clamp_bounds():
    q = np.array([[1.0, 3.0], [3.0, 1.0]])
    assert parse_fspec("clamp(R12)").evaluate(q) == 1.0
    assert parse_fspec("clamp(-R12)").evaluate(q) == -1.0
    assert parse_fspec("clamp(R12, -0.5, 0.5)").evaluate(q) == 0.5
    assert not parse_fspec("clamp(R12)").is_polynomial


def test_vectorised_over_snapshots():
    qs = np.stack([_q(3, s) for s in range(5)])
    f = parse_fspec("R12*R13 - 0.5*R23**2")
    ref = qs[:, 0, 1] * qs[:, 0, 2] - 0.5 * qs[:, 1, 2] ** 2
    assert np.allclose(f.evaluate(qs), ref)


@pytest.mark.parametrize("bad", ["R1", "R12 / R13", "exp(R12)", "R12**R13", "R12**-1",
                                 "clamp(R12, a, b)", "R_0_1", "import os", "R12 <"])
def test_rejects_bad_specs(bad):
    with pytest.raises(FSpecError):
        parse_fspec(bad)


def test_replicas_and_too_few_overlaps():
    f = parse_fspec("R12*R34")
    assert f.replicas == {1, 2, 3, 4}
    with pytest.raises(FSpecError):
        f.evaluate(_q(3))


def test_expand_matches_evaluate():
    f = parse_fspec("(R12 - 2*R13)**2 + 3")
    poly = f.expand()
    assert poly[((1, 2), (1, 2))] == 1.0
    assert poly[((1, 2), (1, 3))] == -4.0
    assert poly[((1, 3), (1, 3))] == 4.0
    assert poly[()] == 3.0
    q = _q(3, 9)
    val = sum(c * np.prod([q[a - 1, b - 1] for a, b in k]) for k, c in poly.items())
    assert val == pytest.approx(float(f.evaluate(q)))
    with pytest.raises(FSpecError):
        parse_fspec("clamp(R12)").expand()


@given(st.permutations([1, 2, 3]), st.integers(0, 1000))
@settings(max_examples=30)
def test_relabel_is_consistent_with_permuted_overlaps(perm, seed):
    mapping = {i + 1: p for i, p in enumerate(perm)}
    f = parse_fspec("R12*R13 + clamp(R23) - R11")
    g = relabel(f, mapping)
    q = _q(3, seed)
    # label a of f becomes label perm[a] of g, so move the overlaps along
    qp = np.empty_like(q)
    idx = np.array(perm) - 1
    qp[np.ix_(idx, idx)] = q
    assert float(g.evaluate(qp)) == pytest.approx(float(f.evaluate(q)))
