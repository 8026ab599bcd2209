import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperdyn.damap import build_da_2d
from hyperdyn.errors import ManifoldUnavailable, ResolutionOverflow
from hyperdyn.gridsets import (CurveSpec, GridSet, avoidance_set, component_sizes,
                               connected_components, decompose_lambda01,
                               forward_trap_set, invariance_defect, local_arc_test,
                               orbit_closure)
from hyperdyn.torus import CAT_MATRIX, DEFAULT_MATRIX, classify, torus_delta, wrap


@pytest.fixture(scope="module")
def A():
    return classify(DEFAULT_MATRIX)


@pytest.fixture(scope="module")
def cat():
    return classify(CAT_MATRIX)


@given(st.lists(st.booleans(), min_size=1, max_size=256))
@settings(max_examples=60, deadline=None)
def test_rle_roundtrip(bits):
    n = 16
    flat = np.zeros(n * n, dtype=bool)
    flat[:len(bits)] = bits
    gs = GridSet(n, 2, flat.reshape(n, n))
    back = GridSet.from_bytes(gs.to_bytes())
    assert np.array_equal(back.bits, gs.bits)
    assert back.resolution == n and back.dim == 2


def test_header_magic():
    gs = GridSet.empty(8, 3)
    blob = gs.to_bytes()
    assert blob[:4] == b"HGS1"
    with pytest.raises(ValueError):
        GridSet.from_bytes(b"XXXX" + blob[4:])


def test_resolution_overflow():
    with pytest.raises(ResolutionOverflow):
        GridSet.empty(2 ** 11, 3)


def test_pgm_export(tmp_path):
    gs = GridSet.empty(8, 2)
    gs.bits[2, 3] = True
    path = tmp_path / "slice.pgm"
    gs.to_pgm(path)
    data = path.read_bytes()
    assert data.startswith(b"P5\n8 8\n255\n")
    assert data[-64:].count(255) == 1


def test_degenerate_point_curve(A):
    curve = CurveSpec(np.zeros((2, 3)), np.zeros(3))
    S = orbit_closure(A, curve, 16, max_iters=5)
    assert S.popcount() == 1
    assert bool(S.contains(np.zeros(3)))
    assert invariance_defect(A, S) == 0.0


def test_unstable_segment_densifies(A):
    e_u = A.direction("u")
    curve = CurveSpec(np.array([-0.02 * e_u, 0.02 * e_u]), np.zeros(3))
    cov = []
    for iters in (2, 5, 8):
        S = orbit_closure(A, curve, 32, max_iters=iters, backward_iters=0)
        cov.append(S.coverage())
    assert cov[0] < cov[1] < cov[2]
    assert cov[-1] > 0.9
    # direct leaf-sampling oracle at the same length
    length = 0.04 * A.lam("u") ** 8
    ts = np.linspace(-length / 2, length / 2, int(length * 3 * 32))
    oracle = GridSet.empty(32, 3)
    oracle.mark(wrap(ts[:, None] * e_u))
    S = orbit_closure(A, curve, 32, max_iters=8, backward_iters=0)
    agree = np.count_nonzero(S.bits & oracle.bits) / oracle.popcount()
    assert agree > 0.95


def test_orbit_closure_invariance_after_stabilization(A):
    e_u = A.direction("u")
    curve = CurveSpec(np.array([-0.05 * e_u, 0.05 * e_u]), np.zeros(3))
    S = orbit_closure(A, curve, 16, max_iters=12, backward_iters=0)
    assert invariance_defect(A, S) == 0.0


def test_resolution_monotonicity(A):
    e_u = A.direction("u")
    curve = CurveSpec(np.array([-0.02 * e_u, 0.02 * e_u]), np.zeros(3))
    fine = orbit_closure(A, curve, 32, max_iters=4)
    coarse = orbit_closure(A, curve, 16, max_iters=4)
    assert np.all(coarse.bits <= fine.coarsen().bits)


def test_avoidance_properties(A):
    center, radius = np.array([0.5, 0.5, 0.5]), 0.1
    S1 = avoidance_set(A, center, radius, 32, 8)
    S2 = avoidance_set(A, center, radius, 32, 9)
    assert np.all(S2.bits <= S1.bits)  # nested in horizon
    assert bool(S1.contains(np.zeros(3)))  # fixed point outside the ball stays
    d = np.linalg.norm(torus_delta(S1.cell_centers(), center), axis=-1)
    assert d.min() > radius  # ball cells empty by construction
    full = avoidance_set(A, center, 0.95, 8, 3)
    assert full.popcount() == 0


def test_components_on_torus_wrap():
    gs = GridSet.empty(16, 2)
    gs.bits[0, :] = True
    gs.bits[15, :] = True
    assert connected_components(gs).max() == 1
    empty = GridSet.empty(8, 2)
    assert connected_components(empty).max() == 0


def test_two_isolated_cells():
    gs = GridSet.empty(16, 2)
    gs.bits[2, 2] = True
    gs.bits[9, 9] = True
    labels = connected_components(gs)
    assert labels.max() == 2
    assert sorted(component_sizes(labels)[1:]) == [1, 1]


def test_vertex_vs_face_adjacency():
    gs = GridSet.empty(8, 2)
    gs.bits[1, 1] = True
    gs.bits[2, 2] = True  # diagonal touch
    assert connected_components(gs, "face").max() == 2
    assert connected_components(gs, "vertex").max() == 1


def test_decompose_partition():
    gs = GridSet.empty(16, 2)
    gs.bits[1, 1] = True
    gs.bits[5, 5] = True
    gs.bits[5, 6] = True
    l0, l1 = decompose_lambda01(gs)
    assert np.array_equal(l0.bits | l1.bits, gs.bits)
    assert not np.any(l0.bits & l1.bits)
    assert l0.popcount() == 1 and l1.popcount() == 2
    full = GridSet.full(8, 2)
    l0, l1 = decompose_lambda01(full)
    assert l0.popcount() == 0 and l1.popcount() == full.popcount()


@pytest.fixture(scope="module")
def horseshoe(cat):
    """Cells whose sampled orbits stay in an eigen-aligned box for the
    resolution-matched horizon: the Cantor-dust horseshoe surrogate (the
    horizon grows with N so the dust keeps fragmenting)."""
    from hyperdyn.gridsets import _cell_sample_grids

    def build(n, a=0.6):
        h = int(np.ceil(np.log(a * n) / np.log(cat.lam("u")))) + 1
        per_cell = np.ones((n,) * 2, dtype=bool)
        for pts in _cell_sample_grids(n, 2, 3):
            d = cat.to_eigen(torus_delta(np.zeros(2), pts))
            alive = np.max(np.abs(d), axis=-1) <= a
            fwd = pts.copy()
            bwd = pts.copy()
            for _ in range(h):
                fwd = cat.apply(fwd)
                bwd = cat.apply_inverse(bwd)
                for q in (fwd, bwd):
                    e = cat.to_eigen(torus_delta(np.zeros(2), q))
                    alive &= np.max(np.abs(e), axis=-1) <= a
            per_cell &= alive.reshape((n,) * 2)
        return GridSet(n, 2, per_cell, {"kind": "horseshoe"})
    return build


def test_horseshoe_cantor_structure(horseshoe):
    # component sizes shrink toward singletons as the grid doubles
    sizes, fracs = [], []
    for n in (64, 128, 256):
        S = horseshoe(n)
        assert S.popcount() > 100
        labels = connected_components(S)
        sizes.append(int(component_sizes(labels)[1:].max()))
        l0, _ = decompose_lambda01(S)
        fracs.append(l0.popcount() / S.popcount())
    assert sizes[0] > sizes[1] > sizes[2]
    assert fracs[0] < fracs[1] < fracs[2]


def test_local_arc_full_and_single(cat):
    full = GridSet.full(32, 2)
    assert local_arc_test(cat, full, [0.3, 0.7], "unstable", 0.2)
    single = GridSet.empty(32, 2)
    single.bits[0, 0] = True
    assert not local_arc_test(cat, single, [0.0, 0.0], "unstable", 0.5)


def test_local_arc_needs_2d(A):
    with pytest.raises(ManifoldUnavailable):
        local_arc_test(A, GridSet.full(8, 3), np.zeros(3), "stable", 0.1)


def test_da2d_attractor_arcs(cat):
    """Expanding-attractor surrogate: unstable arcs stay inside the trapped
    set, stable arcs leave it."""
    g = build_da_2d(cat, np.zeros(2), rho=0.28, mu=1.1, cstar=0.02)
    S = forward_trap_set(g, np.zeros(2), g.rho / 4, 128, horizon=12)
    assert 0.0 < S.coverage() < 1.0
    # pick a marked cell on the attractor away from the deleted ball
    centers = S.cell_centers()
    d = np.linalg.norm(torus_delta(centers, np.zeros(2)), axis=-1)
    x = centers[np.argmax(d > 0.3)]
    assert local_arc_test(g, S.dilate(1), x, "unstable", 0.12)
    assert not local_arc_test(g, S, x, "stable", 0.6)
