import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperdyn.errors import BasepointMissing, EmptyChain
from hyperdyn.gridsets import GridSet
from hyperdyn.lattice import (Chain, LatticeSubgroup, bracket_saturate, chain_epsilon,
                              gamma_delta, hermite_normal_form, lattice_contains,
                              lps_violation_witness, make_chain, map_grid_set,
                              projection_density, propagate_chain)
from hyperdyn.torus import DEFAULT_MATRIX, classify, wrap


@pytest.fixture(scope="module")
def A():
    return classify(DEFAULT_MATRIX)


def test_hnf_diagonal():
    g = LatticeSubgroup.from_generators([[1, 0, 0], [0, 2, 0], [0, 0, 3]])
    assert g.rank == 3 and g.index() == 6
    assert np.array_equal(g.basis, np.diag([1, 2, 3]))


int_vectors = st.lists(st.lists(st.integers(-30, 30), min_size=3, max_size=3),
                       min_size=1, max_size=5)


@given(int_vectors)
@settings(max_examples=80, deadline=None)
def test_hnf_idempotent_and_membership(gens):
    basis = hermite_normal_form(gens)
    assert np.array_equal(hermite_normal_form(basis), basis)
    for g in gens:
        assert lattice_contains(basis, g)


@given(int_vectors, st.lists(st.integers(-3, 3), min_size=1, max_size=5))
@settings(max_examples=50, deadline=None)
def test_hnf_spans_combinations(gens, coeffs):
    basis = hermite_normal_form(gens)
    combo = np.zeros(3, dtype=object)
    for c, g in zip(coeffs, gens):
        combo = combo + c * np.asarray(g, dtype=object)
    assert lattice_contains(basis, [int(v) for v in combo])


def test_gamma_delta_trivial_and_full(A):
    single = GridSet.empty(16, 3)
    single.bits[0, 0, 0] = True
    grp = gamma_delta(single, np.zeros(3), 3 / 16)
    assert grp.rank == 0
    full = GridSet.full(32, 3)
    grp = gamma_delta(full, np.zeros(3), 3 / 32)
    assert grp.rank == 3
    assert grp.index() == 1
    assert np.array_equal(grp.basis, np.eye(3, dtype=np.int64))


def test_gamma_delta_monotone_in_delta(A):
    rng = np.random.default_rng(13)
    S = GridSet.empty(16, 3)
    S.bits[rng.random((16, 16, 16)) < 0.4] = True
    S.bits[0, 0, 0] = True
    small = gamma_delta(S, np.zeros(3), 1.4 / 16)
    large = gamma_delta(S, np.zeros(3), 2.6 / 16)
    assert large.contains_subgroup(small)


def test_gamma_delta_missing_basepoint():
    S = GridSet.empty(16, 3)
    S.bits[5, 5, 5] = True
    with pytest.raises(BasepointMissing):
        gamma_delta(S, np.zeros(3), 3 / 16)


def test_projection_density_trivial(A):
    empty = LatticeSubgroup.from_generators(np.zeros((0, 3), dtype=np.int64))
    stats = projection_density(empty, A, window=1.0, budget=100)
    assert stats["max_gap"] == 1.0


def test_three_distance_phenomenon(A):
    g = LatticeSubgroup.from_generators([[1, 0, 0]])
    stats = projection_density(g, A, window=1.0, budget=2001)
    pos = stats["positions"]
    gaps = np.diff(np.concatenate([pos, [pos[0] + 1.0]]))
    assert len(set(np.round(gaps, 12))) <= 3


def test_full_lattice_density(A):
    full = LatticeSubgroup.from_generators(np.eye(3, dtype=np.int64))
    stats = projection_density(full, A, window=1.0, budget=10000)
    assert stats["max_gap"] < 1e-2


def test_chain_basics(A):
    with pytest.raises(EmptyChain):
        make_chain(np.zeros((1, 3)), A)
    ch = make_chain(np.zeros((2, 3)), A)
    assert ch.epsilon == 0.0
    e_u = A.direction("u")
    pts = np.arange(5)[:, None] * 0.01 * e_u
    ch = make_chain(pts, A)
    assert abs(ch.epsilon - 0.01) < 1e-12
    assert np.max(np.abs(A.proj_contracting(np.diff(pts, axis=0)))) < 1e-14


def test_propagate_equals_direct_bracket(A):
    rng = np.random.default_rng(14)
    for _ in range(200):
        n = int(rng.integers(2, 21))
        pts = np.cumsum(rng.uniform(-0.05, 0.05, (n, 3)), axis=0) + rng.random(3)
        ch = make_chain(pts, A)
        res, eps_per_level = propagate_chain(A, ch, record_epsilons=True)
        assert np.max(np.abs(res - A.bracket(pts[0], pts[-1]))) < 1e-10
        # the rebuilt chains never expand the relation bound
        assert max(eps_per_level) <= ch.epsilon + 1e-12


def test_propagate_base_case(A):
    pts = np.array([[0.0, 0.0, 0.0], [0.01, 0.02, -0.01]])
    ch = make_chain(pts, A)
    assert np.allclose(propagate_chain(A, ch), A.bracket(pts[0], pts[1]))


def test_saturate_trivial_cases(A):
    full = GridSet.full(16, 3)
    out = bracket_saturate(A, full, 3 / 16)
    assert np.array_equal(out.bits, full.bits)
    single = GridSet.empty(16, 3)
    single.bits[3, 4, 5] = True
    out = bracket_saturate(A, single, 3 / 16)
    assert np.array_equal(out.bits, single.bits)


def test_saturate_fixpoint_idempotent(A):
    rng = np.random.default_rng(15)
    S = GridSet.empty(32, 3)
    S.bits[rng.random((32,) * 3) < 0.05] = True
    sat = bracket_saturate(A, S, 3 / 32)
    again = bracket_saturate(A, sat, 3 / 32, rounds=2)
    assert np.array_equal(sat.bits, again.bits)
    assert np.all(S.bits <= sat.bits)


def test_saturate_schedule_independence(A):
    """The fixpoint is order-independent: a permuted-offsets schedule lands on
    the same bitset."""
    from hyperdyn.lattice import _bracket_cell_shifts

    rng = np.random.default_rng(16)
    S = GridSet.empty(24, 3)
    S.bits[rng.random((24,) * 3) < 0.08] = True
    n = S.resolution
    offsets, shifts = _bracket_cell_shifts(A, n, 3 / n)
    perm = rng.permutation(len(offsets))

    bits = S.bits.copy()
    axes = (0, 1, 2)
    for _ in range(64):
        new = bits.copy()
        for k in perm:
            pair = bits & np.roll(bits, tuple(-offsets[k]), axis=axes)
            new |= np.roll(pair, tuple(shifts[k]), axis=axes)
        if np.array_equal(new, bits):
            break
        bits = new
    reference = bracket_saturate(A, S, 3 / n)
    assert np.array_equal(bits, reference.bits)


def test_saturation_equivariance(A):
    rng = np.random.default_rng(17)
    S = GridSet.empty(32, 3)
    S.bits[rng.random((32,) * 3) < 0.02] = True
    sat_then_map = map_grid_set(A, bracket_saturate(A, S, 3 / 32))
    map_then_sat = bracket_saturate(A, map_grid_set(A, S), 3 / 32)
    # image marks land within one cell of the other order's marks
    assert np.all(sat_then_map.bits <= map_then_sat.dilate(1).bits)


def test_lps_witness(A):
    full = GridSet.full(16, 3)
    assert lps_violation_witness(A, full, 3 / 16) is None
    S = GridSet.empty(64, 3)
    S.bits[10, 10, 10] = True
    S.bits[10, 10, 12] = True
    w = lps_violation_witness(A, S, 3 / 64)
    assert w is not None
    x, y, z = w
    assert not bool(S.contains(z))


def test_horseshoe_saturation_closed(A):
    """A saturated set never yields a violation witness (closure check)."""
    rng = np.random.default_rng(18)
    S = GridSet.empty(32, 3)
    S.bits[rng.random((32,) * 3) < 0.03] = True
    sat = bracket_saturate(A, S, 3 / 32)
    assert lps_violation_witness(A, sat, 3 / 32) is None
