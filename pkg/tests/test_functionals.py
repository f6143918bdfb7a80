import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qamle.errors import CoincidentPoints, TooFewPoints
from qamle.extension import mcshane_upper
from qamle.functionals import (NO_ADMISSIBLE_PAIR, FunctionalKind, Jet,
                               JetField, ScalarField, a_functional,
                               b_functional, gamma1_pair, gamma1_sup_oracle,
                               gamma1_sup_raw, lip_pair, phi_pair, phi_set,
                               phi_total, psi_localized)
from qamle.geometry import (BallUnion, DiscreteDomain, contains_ball,
                            grid_domain, interior, region_boundary)

LIP, G1 = FunctionalKind.LIP, FunctionalKind.GAMMA1


def _line(xs):
    return DiscreteDomain(np.asarray(xs, dtype=float)[:, None], constraints=[0])


def _jets_1d(x, y, fx, fy, gx, gy):
    dom = _line([x, y])
    return JetField(dom, {0: Jet(fx, [gx]), 1: Jet(fy, [gy])})


def _random_jet_pair(rng, d):
    x, y = rng.normal(size=d), rng.normal(size=d)
    return x, Jet(rng.normal(), rng.normal(size=d)), y, Jet(rng.normal(), rng.normal(size=d))


# -- reference implementations (plain loops, no shared code) --------------------

def ref_lip_set(pts, vals, idx):
    best = 0.0
    for a in idx:
        for b in idx:
            if a != b:
                best = max(best, abs(vals[a] - vals[b]) / math.dist(pts[a], pts[b]))
    return best


def ref_gamma1(x, jx, y, jy):
    x, y = np.asarray(x, float), np.asarray(y, float)
    r2 = float(np.dot(x - y, x - y))
    A = (2 * (jx.value - jy.value) + np.dot(jx.grad + jy.grad, y - x)) / r2
    B = np.linalg.norm(jx.grad - jy.grad) / math.sqrt(r2)
    return math.sqrt(A * A + B * B) + abs(A)


def ref_psi(dom, f, V, alpha, c_b=1.5):
    """Definition-level enumeration: ball containment plus depth."""
    V = sorted(int(v) for v in V)
    bnd = region_boundary(dom, V, c_b)
    D = dom.distances
    best = NO_ADMISSIBLE_PAIR
    for x in V:
        if min(D[x, b] for b in bnd) < alpha:
            continue
        for y in f.indices:
            if y == x:
                continue
            if contains_ball(dom, V, x, D[x, y]):
                best = max(best, abs(f.values[x] - f.values[y]) / D[x, y])
    return best


# -- Lip --------------------------------------------------------------------------

def test_lip_pair_examples():
    dom = _line([0.0, 0.5, 1.0])
    assert lip_pair(ScalarField(dom, [3.0, 3.0, 3.0]), 0, 2) == 0.0
    assert lip_pair(ScalarField(dom, {0: 0.0, 2: 1.0}), 0, 2) == 1.0
    assert lip_pair(ScalarField(dom, {0: 0.0, 1: 2.0}), 0, 1) == pytest.approx(4.0)


def test_pair_errors():
    dom = _line([0.0, 1.0])
    f = ScalarField(dom, {0: 0.0, 1: 1.0})
    with pytest.raises(CoincidentPoints):
        lip_pair(f, 1, 1)
    with pytest.raises(KeyError):
        lip_pair(ScalarField(dom, {0: 0.0}), 0, 1)


def test_phi_set_examples():
    dom = _line([0.0, 0.5, 1.0])
    f = ScalarField(dom, [0.0, 0.0, 1.0])
    assert phi_set(LIP, f, [0, 1, 2]) == pytest.approx(2.0)
    assert phi_set(LIP, f, [0, 2]) == pytest.approx(lip_pair(f, 0, 2))
    assert phi_set(LIP, ScalarField(dom, [5.0] * 3), [0, 1, 2]) == 0.0
    with pytest.raises(TooFewPoints):
        phi_set(LIP, f, [1])


@given(seed=st.integers(0, 2**31), n=st.integers(2, 40), d=st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_phi_set_matches_reference(seed, n, d):
    rng = np.random.default_rng(seed)
    pts = rng.random((n, d))
    vals = rng.normal(size=n)
    dom = DiscreteDomain(pts, constraints=[0])
    f = ScalarField(dom, vals)
    sub = rng.choice(n, size=int(rng.integers(2, n + 1)), replace=False)
    assert phi_set(LIP, f, sub) == pytest.approx(ref_lip_set(pts, vals, sub), rel=1e-12)


@given(seed=st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_restriction_monotone(seed):
    rng = np.random.default_rng(seed)
    dom = DiscreteDomain(rng.random((25, 2)), constraints=[0])
    for f, kind in ((ScalarField(dom, rng.normal(size=25)), LIP),
                    (JetField(dom, (rng.normal(size=25), rng.normal(size=(25, 2)))), G1)):
        big = rng.choice(25, 12, replace=False)
        small = big[:5]
        assert phi_set(kind, f, small) <= phi_set(kind, f, big)


@pytest.mark.parametrize("kind", [LIP, G1])
def test_symmetric_nonnegative(kind):
    rng = np.random.default_rng(11)
    dom = DiscreteDomain(rng.random((20, 2)), constraints=[0])
    if kind is LIP:
        f = ScalarField(dom, rng.normal(size=20))
    else:
        f = JetField(dom, (rng.normal(size=20), rng.normal(size=(20, 2))))
    for i in range(20):
        for j in range(i + 1, 20):
            a, b = phi_pair(kind, f, i, j), phi_pair(kind, f, j, i)
            assert a == b and a >= 0


# -- Gamma^1 ----------------------------------------------------------------------

def test_a_functional_examples():
    f = _jets_1d(0.0, 1.0, 0.0, 1.0, 0.0, 0.0)
    assert a_functional(f, 0, 1) == pytest.approx(-2.0)
    g = _jets_1d(0.0, 1.0, 0.0, 0.0, 1.0, -1.0)
    assert a_functional(g, 0, 1) == pytest.approx(0.0)
    # same polynomial written at two points
    p = _jets_1d(0.0, 1.0, 0.5, 0.5 + 3.0, 3.0, 3.0)
    assert a_functional(p, 0, 1) == pytest.approx(0.0)


@given(seed=st.integers(0, 2**31), d=st.integers(1, 3))
@settings(max_examples=60, deadline=None)
def test_a_functional_flips_sign_under_swap(seed, d):
    # the formula changes sign when the two points are exchanged
    rng = np.random.default_rng(seed)
    dom = DiscreteDomain(rng.normal(size=(2, d)), constraints=[0])
    f = JetField(dom, (rng.normal(size=2), rng.normal(size=(2, d))))
    assert a_functional(f, 0, 1) + a_functional(f, 1, 0) == pytest.approx(0.0, abs=1e-12)
    assert gamma1_pair(f, 0, 1) == pytest.approx(gamma1_pair(f, 1, 0), rel=1e-14)


def test_b_functional_examples():
    assert b_functional(_jets_1d(0.0, 1.0, 0.0, 5.0, 2.0, 2.0), 0, 1) == 0.0
    assert b_functional(_jets_1d(0.0, 1.0, 0.0, 0.0, 1.0, -1.0), 0, 1) == pytest.approx(2.0)
    near = b_functional(_jets_1d(0.0, 1.0, 0.0, 0.0, 1.0, -1.0), 0, 1)
    far = b_functional(_jets_1d(0.0, 2.0, 0.0, 0.0, 1.0, -1.0), 0, 1)
    assert far == pytest.approx(near / 2)


@pytest.mark.parametrize("fx,fy,gx,gy,expected", [
    (0.0, 1.0, 0.0, 0.0, 4.0),
    (0.0, 0.0, 1.0, -1.0, 2.0),
    (0.5, 3.5, 3.0, 3.0, 0.0),
])
def test_gamma1_pair_examples(fx, fy, gx, gy, expected):
    f = _jets_1d(0.0, 1.0, fx, fy, gx, gy)
    assert gamma1_pair(f, 0, 1) == pytest.approx(expected, abs=1e-12)


@given(seed=st.integers(0, 2**31), d=st.integers(1, 3))
@settings(max_examples=60, deadline=None)
def test_gamma1_matches_reference(seed, d):
    rng = np.random.default_rng(seed)
    x, jx, y, jy = _random_jet_pair(rng, d)
    dom = DiscreteDomain(np.stack([x, y]), constraints=[0])
    f = JetField(dom, {0: jx, 1: jy})
    assert gamma1_pair(f, 0, 1) == pytest.approx(ref_gamma1(x, jx, y, jy), rel=1e-12)


def test_sup_oracle_examples():
    f = _jets_1d(0.0, 1.0, 0.0, 1.0, 0.0, 0.0)
    assert gamma1_sup_oracle(f, 0, 1, 10.0, 0.01) == pytest.approx(4.0, abs=1e-3)
    same = _jets_1d(0.0, 1.0, 0.5, 3.5, 3.0, 3.0)
    assert gamma1_sup_oracle(same, 0, 1, 10.0, 0.01) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("d", [1, 2])
def test_sup_oracle_line_agrees_with_full_grid(d):
    rng = np.random.default_rng(5 + d)
    for _ in range(5):
        x, jx, y, jy = _random_jet_pair(rng, d)
        r = np.linalg.norm(x - y)
        full = gamma1_sup_raw(x, jx, y, jy, 6 * r, r / 40, mode="full")
        line = gamma1_sup_raw(x, jx, y, jy, 6 * r, r / 40, mode="line")
        closed = ref_gamma1(x, jx, y, jy)
        assert full <= closed + 1e-9 and line <= closed + 1e-9
        assert full == pytest.approx(closed, rel=5e-3)
        assert line == pytest.approx(closed, rel=5e-3)


@given(seed=st.integers(0, 2**31), d=st.integers(1, 3))
@settings(max_examples=50, deadline=None)
def test_sup_oracle_never_exceeds_closed_form(seed, d):
    rng = np.random.default_rng(seed)
    x, jx, y, jy = _random_jet_pair(rng, d)
    r = np.linalg.norm(x - y)
    sup = gamma1_sup_raw(x, jx, y, jy, 20 * r, r / 200)
    closed = ref_gamma1(x, jx, y, jy)
    assert sup <= closed + 1e-9
    assert abs(sup - closed) <= 1e-3 * max(1.0, closed)


# -- localised functional ----------------------------------------------------------

@pytest.fixture
def tent():
    dom = grid_domain((33,), 0.0, 1.0, constraints=[0, 16, 32])
    f = ScalarField(dom, {0: 0.0, 16: 0.0, 32: 1.0})
    return dom, mcshane_upper(f, np.arange(33))


def test_psi_tent_example(tent):
    dom, T = tent
    assert T.values[8] == pytest.approx(0.5)
    V = interior(dom, BallUnion(((8, 0.2),)))
    assert psi_localized(LIP, T, V, 0.05) == pytest.approx(2.0)
    assert psi_localized(LIP, T, V, 0.05) == pytest.approx(ref_psi(dom, T, V, 0.05))


def test_psi_constant_and_no_pair(tent):
    dom, _ = tent
    V = interior(dom, BallUnion(((8, 0.2),)))
    flat = ScalarField(dom, np.ones(33))
    assert psi_localized(LIP, flat, V, 0.05) == 0.0
    assert psi_localized(LIP, flat, V, 1.0) == NO_ADMISSIBLE_PAIR


@given(seed=st.integers(0, 2**31), alpha=st.sampled_from([0.0, 0.05, 0.1, 0.2]))
@settings(max_examples=40, deadline=None)
def test_psi_matches_definition(seed, alpha):
    rng = np.random.default_rng(seed)
    dom = grid_domain((7, 7), 0.0, 1.0, constraints=[0])
    f = ScalarField(dom, rng.normal(size=dom.n))
    om = BallUnion(((int(rng.integers(dom.n)), float(rng.uniform(0.2, 0.6))),))
    V = interior(dom, om)
    if V.size == dom.n:
        return
    assert psi_localized(LIP, f, V, alpha) == ref_psi(dom, f, V, alpha)


@given(seed=st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_psi_bounded_by_closure_value(seed):
    rng = np.random.default_rng(seed)
    dom = DiscreteDomain(rng.random((50, 2)), constraints=[0])
    f = ScalarField(dom, rng.normal(size=50))
    V = interior(dom, BallUnion(((int(rng.integers(50)), 0.35),)))
    if V.size == 50:
        return
    bnd = region_boundary(dom, V)
    psi = psi_localized(LIP, f, V, 0.0)
    assert psi <= phi_set(LIP, f, np.union1d(V, bnd)) + 1e-12


# -- fields ------------------------------------------------------------------------

def test_fields_partial_and_total():
    dom = _line([0.0, 1.0, 2.0])
    f = ScalarField(dom, {2: 1.5, 0: -1.0})
    assert f.indices.tolist() == [0, 2]
    assert not f.is_total
    g = f.with_values([1], [0.25])
    assert g.is_total and not f.is_total
    assert g.as_dict() == {0: -1.0, 1: 0.25, 2: 1.5}
    assert f.restrict([2]).as_dict() == {2: 1.5}
    assert phi_total(LIP, ScalarField(dom, {1: 3.0})) == 0.0


def test_jet_field_dimension_checked():
    dom = DiscreteDomain([[0.0, 0.0], [1.0, 0.0]], constraints=[0])
    with pytest.raises(ValueError):
        JetField(dom, {0: Jet(0.0, [1.0])})


def test_functional_kind_parse():
    assert FunctionalKind.parse("LIP") is LIP
    assert FunctionalKind.parse(G1) is G1
    with pytest.raises(ValueError):
        FunctionalKind.parse("gamma2")
