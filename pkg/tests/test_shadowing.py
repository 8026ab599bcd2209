import numpy as np
import pytest

from hyperdyn.damap import build_da, linear_da
from hyperdyn.errors import EmptyOrbit, NoConvergence
from hyperdyn.shadowing import (PseudoOrbit, expansivity_gap, load_pseudo_orbit_csv,
                                make_pseudo_orbit, random_pseudo_orbit,
                                shadow_linear, shadow_nonlinear)
from hyperdyn.torus import (DA_BASE_MATRIX, DEFAULT_MATRIX, classify,
                            eigen_sup_distance, int_adjugate, int_det, torus_delta,
                            wrap)


@pytest.fixture(scope="module")
def A():
    return classify(DEFAULT_MATRIX)


@pytest.fixture(scope="module")
def F():
    B = classify(DA_BASE_MATRIX)
    return build_da(B, np.array([0.5, 0.5, 0.5]), 0.2, 1.2, 0.03)


def true_orbit(A, x0, n):
    pts = [np.asarray(x0, dtype=float)]
    for _ in range(n):
        pts.append(A.apply(pts[-1]))
    return np.array(pts)


def periodic_point(A, period, m):
    mat = np.linalg.matrix_power(A.matrix.astype(object), period) - np.eye(3, dtype=object)
    mat = np.array([[int(v) for v in row] for row in mat])
    return wrap(np.asarray(int_adjugate(mat) @ np.asarray(m), dtype=float) / int_det(mat))


def test_true_orbit_zero_beta(A):
    po = make_pseudo_orbit(A, true_orbit(A, [0.3, 0.7, 0.1], 60))
    res = shadow_linear(A, po)
    assert po.alpha == 0.0
    assert res.beta == 0.0 and res.residual == 0.0


def test_single_jump_closed_form(A):
    """One jump of v at step k: the correction splits v into its contracting
    part pushed forward and expanding part pushed backward (geometric series
    computed here independently of the solver)."""
    rng = np.random.default_rng(5)
    n, k = 40, 19
    head = true_orbit(A, rng.random(3), k)
    v = A.from_eigen([2e-4, -1e-4, 3e-4])
    tail = true_orbit(A, A.apply(head[-1]) + v, n - k - 1)  # one jump of v at step k
    pts = np.vstack([head, tail])
    po = make_pseudo_orbit(A, pts)
    res = shadow_linear(A, po)
    v_eig = A.to_eigen(v)
    lam = A.eigenvalues
    expect = np.zeros((n + 1, 3))
    for i in range(3):
        if abs(lam[i]) < 1:
            for j in range(k + 1, n + 1):  # e_{j} = -lam^{j-k-1} v for j > k
                expect[j, i] = -lam[i] ** (j - k - 1) * v_eig[i]
        else:
            for j in range(0, k + 1):  # pushed backward
                expect[j, i] = lam[i] ** (j - k - 1) * v_eig[i]
    got = A.to_eigen(torus_delta(po.points, res.orbit))
    assert np.max(np.abs(got - expect)) < 1e-12


def test_k_bound_random(A):
    rng = np.random.default_rng(6)
    k = A.shadowing_constant()
    for _ in range(25):
        po = random_pseudo_orbit(A, 2000, 1e-3, rng)
        res = shadow_linear(A, po)
        assert res.residual < 1e-12
        assert res.beta <= k * po.alpha + 1e-9


def test_shadow_scaling_linearity(A):
    # same jump pattern at half size: the correction scales exactly linearly
    rng = np.random.default_rng(7)
    po = random_pseudo_orbit(A, 500, 1e-3, rng)
    res = shadow_linear(A, po)
    pts = [po.points[0]]
    for j in po.jumps * 0.5:
        pts.append(wrap(A.apply(pts[-1]) + j))
    po_half = make_pseudo_orbit(A, np.array(pts))
    res_half = shadow_linear(A, po_half)
    assert abs(res_half.beta - 0.5 * res.beta) < 1e-9


def test_periodic_recovers_true_orbit(A):
    rng = np.random.default_rng(8)
    y0 = periodic_point(A, 7, (1, 2, 1))
    orbit = true_orbit(A, y0, 6)
    noisy = wrap(orbit + rng.uniform(-1e-4, 1e-4, orbit.shape))
    po = make_pseudo_orbit(A, noisy)
    res = shadow_linear(A, po, boundary="periodic")
    assert res.residual < 1e-12
    assert np.max(torus_delta(res.orbit, orbit)) < 5e-4
    # uniqueness through rotation invariance
    rolled = make_pseudo_orbit(A, np.roll(noisy, 2, axis=0))
    res2 = shadow_linear(A, rolled, boundary="periodic")
    assert np.max(eigen_sup_distance(A, np.roll(res.orbit, 2, axis=0), res2.orbit)) < 1e-10


def test_empty_orbit_raises(A):
    with pytest.raises(EmptyOrbit):
        make_pseudo_orbit(A, np.zeros((1, 3)))


def test_nonlinear_matches_linear_for_zero_kick(A):
    L = linear_da(A)
    rng = np.random.default_rng(9)
    po = random_pseudo_orbit(A, 200, 1e-3, rng)
    r1 = shadow_linear(A, po)
    r2 = shadow_nonlinear(L, po, tol=1e-11)
    assert np.max(eigen_sup_distance(A, r1.orbit, r2.orbit)) < 1e-9
    assert r2.iterations == 1


def test_nonlinear_fixed_point_fiber(F):
    """A noisy constant pseudo-orbit at the bifurcated point is shadowed by an
    orbit on the collapsed center fiber; its endpoint's leaf coordinate lands
    on a root of the leafwise fixed-point equation (the 1D oracle)."""
    B = F.base
    rng = np.random.default_rng(10)
    x1 = F.x1
    noisy = wrap(x1 + rng.uniform(-1e-4, 1e-4, (41, 3)))
    po = make_pseudo_orbit(B, noisy, map_id="da", apply_fn=F.apply)
    res = shadow_nonlinear(F, po, tol=1e-11)
    assert res.residual < 1e-11
    c_fix = F.diagnostics["leaf_fixed_points"][2]
    assert np.max(np.linalg.norm(torus_delta(res.orbit, x1), axis=-1)) < 2 * c_fix + 1e-3
    # the final orbit point sits on the center leaf near a leafwise fixed point
    final = torus_delta(x1, res.orbit[-1])
    eig = B.to_eigen(final)
    c_coord = eig[1]
    roots = np.asarray(F.diagnostics["leaf_fixed_points"])
    assert np.min(np.abs(np.abs(c_coord) - np.abs(roots))) < 2e-3


def test_nonlinear_crossing_ball(F):
    B = F.base
    rng = np.random.default_rng(11)
    pts = [rng.random(3)]
    for _ in range(400):
        pts.append(wrap(F.apply(pts[-1]) + B.from_eigen(rng.uniform(-1e-4, 1e-4, 3))))
    po = make_pseudo_orbit(B, np.array(pts), map_id="da", apply_fn=F.apply)
    res = shadow_nonlinear(F, po, tol=1e-9)
    res2 = shadow_nonlinear(F, po, tol=1e-12)
    assert res2.beta <= 10 * po.alpha
    assert np.max(eigen_sup_distance(B, res.orbit, res2.orbit)) < 1e-8


def test_expansivity_gap(A, F):
    x = np.array([0.1, 0.2, 0.3])
    assert expansivity_gap(A, x, x, 5) == 0.0
    eps = 1e-7
    y = x + eps * A.direction("u")
    g = expansivity_gap(A, x, y, 4)
    assert abs(g - eps * A.lam("u") ** 4) / g < 1e-6
    # the two created fixed points are a collapsed-fiber candidate: their gap
    # stays put for as long as double precision can follow the orbits
    fps = F.fixed_points()
    horizon = 10  # lambda_u^h * eps stays below the gap scale
    g = expansivity_gap(F, fps[0], fps[2], horizon)
    d0 = float(np.linalg.norm(torus_delta(fps[0], fps[2])))
    assert abs(g - d0) < 1e-4


def test_csv_roundtrip(tmp_path, A):
    rng = np.random.default_rng(12)
    po = random_pseudo_orbit(A, 50, 1e-3, rng)
    path = tmp_path / "orbit.csv"
    np.savetxt(path, po.points, delimiter=",")
    po2 = load_pseudo_orbit_csv(A, path)
    assert abs(po.alpha - po2.alpha) < 1e-12


def test_no_convergence_reports(F):
    # a pseudo-orbit with a huge jump is outside every hyperbolic estimate
    B = F.base
    pts = np.array([[0.1, 0.1, 0.1], [0.9, 0.4, 0.8], [0.2, 0.6, 0.3]])
    po = make_pseudo_orbit(B, pts, map_id="da", apply_fn=F.apply)
    try:
        res = shadow_nonlinear(F, po, tol=1e-30, max_iter=3)
    except NoConvergence as exc:
        assert exc.iterations <= 3
    else:
        assert res.residual < 1e-9  # tiny systems may still solve exactly
