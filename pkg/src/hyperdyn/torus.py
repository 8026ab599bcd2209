"""Exact integer toral automorphisms and their hyperbolic eigen-splittings.

A toral automorphism is an integer matrix A in GL(n, Z) acting on T^n = R^n / Z^n
(n = 2 or 3 here).  Everything downstream: shadowing, brackets, lattice
subgroups, the derived-from-Anosov construction: consumes the objects built in
this module: the verified eigenvalue splitting, the eigenbasis change of
coordinates, torus/lift arithmetic, and the linear bracket

    bracket(x, y) = (x + E^s) /\ (y + E^u),

the unique intersection of x's contracting-plane translate with y's
expanding-line translate.

Eigenvalues are found by isolating the real roots of the exact integer
characteristic polynomial with dyadic-rational bisection (integer arithmetic
only, so signs are exact), which keeps classification deterministic across
platforms and lets the class checks fail closed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import NotHyperbolic, NotUnimodular, WrongClass

# An eigenvalue closer than this to the unit circle is treated as a failure of
# hyperbolicity (fail closed).
UNIT_CIRCLE_TOL = 1e-10

_BISECT_STEPS = 80  # dyadic bisection to 2^-80 relative to bracket width


def _int_matrix(matrix) -> np.ndarray:
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if m.shape[0] not in (2, 3):
        raise ValueError("only n = 2 or 3 supported")
    if not np.all(np.equal(np.mod(m, 1), 0)):
        raise ValueError("matrix entries must be integers")
    return m.astype(np.int64)


def int_det(m: np.ndarray) -> int:
    """Exact determinant of a 2x2 or 3x3 integer matrix (Python ints)."""
    a = [[int(v) for v in row] for row in m]
    if len(a) == 2:
        return a[0][0] * a[1][1] - a[0][1] * a[1][0]
    return (
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    )


def int_adjugate(m: np.ndarray) -> np.ndarray:
    """Exact adjugate; m @ adj(m) = det(m) * I."""
    a = [[int(v) for v in row] for row in m]
    if len(a) == 2:
        adj = [[a[1][1], -a[0][1]], [-a[1][0], a[0][0]]]
    else:
        def c(i, j):
            rows = [r for r in range(3) if r != i]
            cols = [s for s in range(3) if s != j]
            sub = a[rows[0]][cols[0]] * a[rows[1]][cols[1]] - a[rows[0]][cols[1]] * a[rows[1]][cols[0]]
            return (-1) ** (i + j) * sub

        adj = [[c(j, i) for j in range(3)] for i in range(3)]
    return np.array(adj, dtype=np.int64)


def int_inverse(m: np.ndarray) -> np.ndarray:
    """Exact inverse of a unimodular integer matrix."""
    d = int_det(m)
    if d not in (1, -1):
        raise NotUnimodular(f"determinant {d} is not +/-1")
    return (int_adjugate(m) * d).astype(np.int64)


def char_poly(m: np.ndarray) -> list[int]:
    """Monic characteristic polynomial, highest degree first, exact integers."""
    a = [[int(v) for v in row] for row in m]
    n = len(a)
    tr = sum(a[i][i] for i in range(n))
    d = int_det(m)
    if n == 2:
        return [1, -tr, d]
    # sum of principal 2x2 minors
    c2 = 0
    for i in range(3):
        for j in range(i + 1, 3):
            c2 += a[i][i] * a[j][j] - a[i][j] * a[j][i]
    return [1, -tr, c2, -d]


def _poly_eval_frac(coeffs: list[int], x: Fraction) -> Fraction:
    acc = Fraction(0)
    for c in coeffs:
        acc = acc * x + c
    return acc


def _bisect_root(coeffs: list[int], lo: Fraction, hi: Fraction) -> float:
    """Exact-sign bisection of a sign change of the integer polynomial."""
    flo = _poly_eval_frac(coeffs, lo)
    fhi = _poly_eval_frac(coeffs, hi)
    if flo == 0:
        return float(lo)
    if fhi == 0:
        return float(hi)
    assert (flo < 0) != (fhi < 0), "bracket does not straddle a root"
    for _ in range(_BISECT_STEPS):
        mid = (lo + hi) / 2
        fm = _poly_eval_frac(coeffs, mid)
        if fm == 0:
            return float(mid)
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
    return float((lo + hi) / 2)


def _bisect_root_frac(coeffs: list[int], lo: Fraction, hi: Fraction) -> Fraction:
    """Dyadic bisection returning the rational midpoint (exact signs)."""
    flo = _poly_eval_frac(coeffs, lo)
    fhi = _poly_eval_frac(coeffs, hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    assert (flo < 0) != (fhi < 0)
    for _ in range(_BISECT_STEPS):
        mid = (lo + hi) / 2
        fm = _poly_eval_frac(coeffs, mid)
        if fm == 0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
    return (lo + hi) / 2


def real_roots(coeffs: list[int]) -> list[float]:
    """Simple real roots of a monic integer quadratic/cubic, ascending.

    Brackets come from the (at most two) critical points of the polynomial, so
    the isolation is deterministic; each bracket is then bisected with exact
    rational arithmetic.  Repeated roots (no sign change) are not reported;
    for unimodular matrices they can only be +/-1, which classification
    rejects exactly before root isolation.
    """
    n = len(coeffs) - 1
    bound = Fraction(1 + max(abs(c) for c in coeffs))
    if n == 2:
        _, b, c = coeffs
        disc = b * b - 4 * c
        if disc < 0:
            return []
        if disc == 0:
            return [float(Fraction(-b, 2))]
        lo, hi = -bound, bound
        vertex = Fraction(-b, 2)
        return [_bisect_root(coeffs, lo, vertex), _bisect_root(coeffs, vertex, hi)]
    # cubic: p is strictly monotone between consecutive critical points, so
    # cutting R there isolates the roots; the critical points themselves are
    # bisected exactly on the integer quadratic p'
    _, b, c, d = coeffs
    disc = (
        18 * b * c * d - 4 * b ** 3 * d + b ** 2 * c ** 2 - 4 * c ** 3 - 27 * d ** 2
    )
    dp = 4 * b * b - 12 * c  # discriminant of p' = 3x^2 + 2bx + c
    cuts: list[Fraction] = [-bound]
    if dp > 0:
        dcoeffs = [3, 2 * b, c]
        vertex = Fraction(-2 * b, 6)
        dbound = Fraction(1 + max(abs(v) for v in dcoeffs))
        cuts.append(_bisect_root_frac(dcoeffs, -dbound, vertex))
        cuts.append(_bisect_root_frac(dcoeffs, vertex, dbound))
    cuts.append(bound)
    cuts = sorted(set(cuts))
    roots = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        flo, fhi = _poly_eval_frac(coeffs, lo), _poly_eval_frac(coeffs, hi)
        if flo == 0:
            roots.append(float(lo))
        if (flo < 0) != (fhi < 0) and flo != 0 and fhi != 0:
            roots.append(_bisect_root(coeffs, lo, hi))
    if disc > 0:
        assert len(set(np.round(roots, 9))) == 3, "expected three distinct real roots"
    return sorted(set(roots))


def _null_vector(m: np.ndarray) -> np.ndarray:
    """Deterministic unit kernel vector of a (numerically) rank-deficient matrix."""
    if m.shape[0] == 2:
        cands = [np.array([m[0, 1], -m[0, 0]]), np.array([m[1, 1], -m[1, 0]])]
    else:
        cands = [np.cross(m[i], m[j]) for i, j in ((0, 1), (0, 2), (1, 2))]
    v = max(cands, key=lambda c: float(np.dot(c, c)))
    v = v / np.linalg.norm(v)
    # tie-break: first coordinate of visible size is positive
    for comp in v:
        if abs(comp) > 1e-8:
            if comp < 0:
                v = -v
            break
    return v


@dataclass(frozen=True)
class ToralAutomorphism:
    """A verified hyperbolic automorphism of T^n with its eigen-splitting.

    ``eigenvalues`` are sorted ascending; ``basis`` holds the matching unit
    eigenvectors as columns.  ``stable``/``center``/``unstable`` are index
    tuples into that ordering.  The ``center`` slot is only populated for the
    three-dimensional class with real positive simple spectrum and a single
    expanding direction (then eigenvalues read lambda_s < lambda_c < 1 <
    lambda_u); otherwise every contracting index is ``stable``.
    """

    matrix: np.ndarray
    det: int
    char: tuple[int, ...]
    eigenvalues: np.ndarray
    basis: np.ndarray
    basis_inv: np.ndarray
    stable: tuple[int, ...]
    center: tuple[int, ...]
    unstable: tuple[int, ...]
    t3_class: bool
    unstable_gt3: bool
    inverse_matrix: np.ndarray = field(repr=False, default=None)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def contracting(self) -> tuple[int, ...]:
        return self.stable + self.center

    def lam(self, which: str) -> float:
        idx = {"s": self.stable, "c": self.center, "u": self.unstable}[which]
        if not idx:
            raise WrongClass(f"no '{which}' direction for this automorphism")
        return float(self.eigenvalues[idx[0]])

    def direction(self, which: str) -> np.ndarray:
        idx = {"s": self.stable, "c": self.center, "u": self.unstable}[which]
        if not idx:
            raise WrongClass(f"no '{which}' direction for this automorphism")
        return self.basis[:, idx[0]].copy()

    # -- dynamics ---------------------------------------------------------

    def apply(self, x, torus: bool = True) -> np.ndarray:
        """Image of points under the automorphism (exact integer matvec)."""
        x = np.asarray(x, dtype=float)
        y = x @ self.matrix.T.astype(float)
        return np.mod(y, 1.0) if torus else y

    def apply_inverse(self, x, torus: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = x @ self.inverse_matrix.T.astype(float)
        return np.mod(y, 1.0) if torus else y

    def power(self, k: int) -> "ToralAutomorphism":
        m = np.linalg.matrix_power(self.matrix.astype(object), abs(k))
        if k < 0:
            m = np.vectorize(int)(np.linalg.matrix_power(self.inverse_matrix.astype(object), -k))
        return classify(np.array(m, dtype=np.int64))

    # -- eigen coordinates -------------------------------------------------

    def to_eigen(self, x) -> np.ndarray:
        """Coordinates of lifted points in the eigenbasis."""
        return np.asarray(x, dtype=float) @ self.basis_inv.T

    def from_eigen(self, c) -> np.ndarray:
        return np.asarray(c, dtype=float) @ self.basis.T

    def proj_unstable(self, v) -> np.ndarray:
        """Coordinate(s) along E^u of the splitting (projection along E^s+E^c)."""
        return self.to_eigen(v)[..., list(self.unstable)]

    def proj_contracting(self, v) -> np.ndarray:
        """Coordinates along E^s (+E^c) of the splitting (projection along E^u)."""
        return self.to_eigen(v)[..., list(self.contracting)]

    # -- bracket -----------------------------------------------------------

    def bracket(self, x, y) -> np.ndarray:
        """Unique z with z - x in the contracting plane and z - y in E^u.

        In eigencoordinates z simply copies y's contracting components and x's
        expanding one, so the operation is exact up to the basis conversion.
        """
        cx = self.to_eigen(x)
        cy = self.to_eigen(y)
        cz = cy.copy()
        cz[..., list(self.unstable)] = cx[..., list(self.unstable)]
        return self.from_eigen(cz)

    def contracting_projector(self) -> np.ndarray:
        """Matrix of the projection onto E^s (+E^c) along E^u (Cartesian)."""
        sel = np.zeros(self.dim)
        sel[list(self.contracting)] = 1.0
        return self.basis @ np.diag(sel) @ self.basis_inv

    def shadowing_constant(self) -> float:
        """K with beta <= K * alpha for the exact linear shadowing solve.

        In the eigen sup-norm the contracting components contribute
        1/(1-lambda) and the expanding ones 1/(lambda-1).
        """
        lams = self.eigenvalues
        ks = [1.0 / (1.0 - abs(lams[i])) for i in self.contracting]
        ks += [1.0 / (abs(lams[i]) - 1.0) for i in self.unstable]
        return max(ks)


def classify(matrix, require_t3: bool = False) -> ToralAutomorphism:
    """Validate an integer matrix as a hyperbolic toral automorphism.

    Raises NotUnimodular / NotHyperbolic / WrongClass per the failure mode.
    ``require_t3`` additionally demands the three-dimensional class with all
    eigenvalues real, positive, simple and exactly one expanding direction.
    """
    m = _int_matrix(matrix)
    n = m.shape[0]
    d = int_det(m)
    if d not in (1, -1):
        raise NotUnimodular(f"determinant {d} is not +/-1")
    coeffs = char_poly(m)
    # rational roots of a monic integer polynomial with unit constant term can
    # only be +/-1, and either one sits on the unit circle
    p1 = _poly_eval_frac(coeffs, Fraction(1))
    pm1 = _poly_eval_frac(coeffs, Fraction(-1))
    if p1 == 0 or pm1 == 0:
        raise NotHyperbolic("eigenvalue +/-1 (characteristic polynomial has a unit root)")
    roots = real_roots(coeffs)
    if n == 2 and len(roots) < 2:
        # complex pair of a unimodular 2x2 has modulus exactly 1
        raise NotHyperbolic("complex eigenvalue pair on the unit circle")
    if n == 3 and len(roots) < 3:
        # one real root mu and a complex pair of modulus sqrt(|det/mu|)
        mu = roots[0]
        pair_mod = float(np.sqrt(abs(d / mu)))
        if abs(abs(mu) - 1.0) <= UNIT_CIRCLE_TOL or abs(pair_mod - 1.0) <= UNIT_CIRCLE_TOL:
            raise NotHyperbolic("eigenvalue within tolerance of the unit circle")
        raise WrongClass("complex eigenvalues: no real eigen-splitting to represent")
    if any(abs(abs(r) - 1.0) <= UNIT_CIRCLE_TOL for r in roots):
        raise NotHyperbolic("real eigenvalue within tolerance of the unit circle")
    if len(set(np.round(roots, 12))) != n:
        raise WrongClass("repeated eigenvalues: splitting not simple")

    lams = np.array(sorted(roots))
    contracting = tuple(i for i, r in enumerate(lams) if abs(r) < 1)
    expanding = tuple(i for i, r in enumerate(lams) if abs(r) > 1)
    t3 = n == 3 and all(r > 0 for r in lams) and len(expanding) == 1
    if t3:
        stable, center, unstable = (contracting[0],), (contracting[1],), expanding
    else:
        stable, center, unstable = contracting, (), expanding
    if require_t3 and not t3:
        raise WrongClass("matrix is hyperbolic but not in the T^3 class "
                         "(real positive simple spectrum with one expanding direction)")

    mf = m.astype(float)
    basis = np.column_stack([_null_vector(mf - lam * np.eye(n)) for lam in lams])
    for i, lam in enumerate(lams):
        resid = float(np.max(np.abs(mf @ basis[:, i] - lam * basis[:, i])))
        assert resid < 1e-8, f"eigenvector residual {resid:.2e}"
    basis_inv = np.linalg.inv(basis)

    for arr in (m, lams, basis, basis_inv):
        arr.flags.writeable = False
    inv = int_inverse(m)
    inv.flags.writeable = False
    return ToralAutomorphism(
        matrix=m,
        det=d,
        char=tuple(coeffs),
        eigenvalues=lams,
        basis=basis,
        basis_inv=basis_inv,
        stable=stable,
        center=center,
        unstable=expanding,
        t3_class=t3,
        unstable_gt3=bool(t3 and lams[expanding[0]] > 3.0),
        inverse_matrix=inv,
    )


# -- torus / lift arithmetic ------------------------------------------------

def wrap(x) -> np.ndarray:
    """Reduce lifted points to the fundamental domain [0,1)^n."""
    return np.mod(np.asarray(x, dtype=float), 1.0)


def nearest_rep(delta) -> np.ndarray:
    """Componentwise reduction of a difference vector to [-1/2, 1/2)."""
    d = np.asarray(delta, dtype=float)
    return d - np.round(d)


def torus_delta(x, y) -> np.ndarray:
    """Shortest representative of y - x on the torus."""
    return nearest_rep(np.asarray(y, dtype=float) - np.asarray(x, dtype=float))


def torus_distance(x, y) -> np.ndarray:
    """Euclidean distance minimized over integer translates."""
    return np.linalg.norm(torus_delta(x, y), axis=-1)


def eigen_sup_distance(A: ToralAutomorphism, x, y) -> np.ndarray:
    """Torus distance measured as sup-norm over eigencoordinates.

    This is the metric in which the linear shadowing constant is clean; it is
    only meaningful at scales well below the injectivity radius.
    """
    return np.max(np.abs(A.to_eigen(torus_delta(x, y))), axis=-1)


# The default exemplar: companion matrix of x^3 - 6x^2 + 5x - 1, which is
# hyperbolic with real positive simple spectrum, one expanding eigenvalue
# greater than 3, and irreducible characteristic polynomial.
DEFAULT_MATRIX = ((0, 0, 1), (1, 0, -5), (0, 1, 6))

# Companion of x^3 - 8x^2 + 6x - 1: same class, but det(A - I) = -2 so the
# induced torus map has a second fixed point at (1/2, 1/2, 1/2).  Used as the
# base of the derived-from-Anosov construction, which needs a fixed point to
# bifurcate while keeping the origin's fixed point untouched.
DA_BASE_MATRIX = ((0, 0, 1), (1, 0, -6), (0, 1, 8))

CAT_MATRIX = ((2, 1), (1, 1))
