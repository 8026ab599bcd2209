"""The derived-from-Anosov diffeomorphism and its foliation machinery.

The map is an explicit bifurcation of a linear hyperbolic automorphism at a
fixed point x1: inside the ball B_{rho/2}(x1) the image is displaced along one
eigendirection e_b (the center direction on T^3, the stable one for the 2D
variant) by

    psi(x) = k(c) * phi(r),   c = bumped eigencoordinate of x - x1,
                              r = |x - x1| (nearest representative),

with a C^2 radial cutoff phi (identically 1 on [0, rho/4], identically 0 from
rho/2 on) and a Gaussian-damped linear kick

    k(c) = (mu - lambda_b) * c * exp(-(c/cstar)^2 / 2).

At x1 the bumped derivative becomes mu > 1 while two new fixed points appear
symmetrically on the bumped leaf with derivative in (0, 1), and the leafwise
map stays monotone for moderate mu, which keeps the construction a
diffeomorphism.  The kick was chosen over a plain cubic because the cubic's
derivative goes negative between the new fixed points and the clamp radius,
destroying invertibility at any parameter set that actually bifurcates.

Structural fact used throughout: because the displacement is parallel to e_b
and the other eigencoordinates transform diagonally, every plane spanned by
e_b and another eigendirection maps to a parallel plane.  Concretely on T^3
the center-stable planes {u = const} and center-unstable planes {s = const}
are exactly invariant, so the center-stable foliation of the perturbed map is
the linear one, while the strong unstable (and strong stable) lines genuinely
tilt inside those planes.  Projections along the center-stable foliation
therefore reduce to matching the unstable eigencoordinate, and only the
one-dimensional strong leaves require numerical integration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadBifurcation, DirectionNotConverged, SupportLeak
from .torus import ToralAutomorphism, nearest_rep, wrap


def smoothstep_c2(t):
    """Quintic smoothstep: 0 -> 1 on [0,1] with vanishing first and second
    derivatives at both ends."""
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10.0 + t * (-15.0 + 6.0 * t))


def smoothstep_c2_d(t):
    t = np.asarray(t)
    inside = (t > 0.0) & (t < 1.0)
    tt = np.where(inside, t, 0.5)
    return np.where(inside, 30.0 * tt ** 2 * (1.0 - tt) ** 2, 0.0)


@dataclass
class BumpedToralMap:
    """Linear automorphism plus a compactly supported kick along e_b."""

    base: ToralAutomorphism
    x1: np.ndarray
    rho: float
    mu: float
    cstar: float
    bumped: str = "c"  # eigendirection displaced: 'c' on T^3, 's' on T^2
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        A = self.base
        self.x1 = np.asarray(self.x1, dtype=float)
        bidx = {"s": A.stable, "c": A.center, "u": A.unstable}[self.bumped]
        if not bidx:
            raise BadBifurcation(f"base has no '{self.bumped}' direction")
        self.bumped_index = bidx[0]
        self.lam_b = float(A.eigenvalues[self.bumped_index])
        self.amp = self.mu - self.lam_b
        self.e_b = A.basis[:, self.bumped_index].copy()
        self.w_b = A.basis_inv[self.bumped_index].copy()  # gradient of c(x)
        self.r_in = self.rho / 4.0
        self.r_out = self.rho / 2.0
        # longdouble copies so backward orbits can run at extended precision
        self._ld = {
            "matrix": A.matrix.astype(np.longdouble),
            "inv": A.inverse_matrix.astype(np.longdouble),
            "e_b": self.e_b.astype(np.longdouble),
            "w_b": self.w_b.astype(np.longdouble),
            "x1": self.x1.astype(np.longdouble),
        }

    # -- bump -----------------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def is_linear(self) -> bool:
        return self.amp == 0.0

    def kick(self, c):
        t = c / self.cstar
        return self.amp * c * np.exp(-0.5 * t * t)

    def kick_d(self, c):
        t = c / self.cstar
        return self.amp * (1.0 - t * t) * np.exp(-0.5 * t * t)

    def cutoff(self, r):
        t = (r - self.r_in) / (self.r_out - self.r_in)
        return np.where(r >= self.r_out, 0.0, np.where(r <= self.r_in, 1.0,
                        1.0 - smoothstep_c2(t)))

    def cutoff_d(self, r):
        t = (r - self.r_in) / (self.r_out - self.r_in)
        return -smoothstep_c2_d(t) / (self.r_out - self.r_in)

    def _offset(self, x):
        """Nearest representative of x - x1 (works on lifts and torus points)."""
        x1 = self._ld["x1"] if _is_ld(x) else self.x1
        return nearest_rep(np.asarray(x) - x1)

    def displacement(self, x):
        """Scalar kick psi(x); exactly zero outside B_{rho/2}(x1)."""
        d = self._offset(x)
        r = np.linalg.norm(d, axis=-1)
        w_b = self._ld["w_b"] if _is_ld(x) else self.w_b
        c = d @ w_b
        return np.where(r >= self.r_out, 0.0, self.kick(c) * self.cutoff(r))

    def displacement_gradient(self, x):
        """Cartesian gradient of psi (analytic)."""
        d = self._offset(x)
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        w_b = self._ld["w_b"] if _is_ld(x) else self.w_b
        c = (d @ w_b)[..., None]
        rr = np.where(r > 0, r, 1.0)
        grad = self.kick_d(c) * self.cutoff(r) * w_b + self.kick(c) * self.cutoff_d(r) * (d / rr)
        return np.where(r >= self.r_out, 0.0, grad)

    # -- the map ----------------------------------------------------------------

    def apply(self, x, torus: bool = True):
        x = np.asarray(x, dtype=np.longdouble if _is_ld(x) else float)
        mat = self._ld["matrix"] if _is_ld(x) else self.base.matrix.astype(float)
        e_b = self._ld["e_b"] if _is_ld(x) else self.e_b
        y = x @ mat.T
        if not self.is_linear:
            psi = self.displacement(x)
            bumped = y + psi[..., None] * e_b
            # outside the support the original matvec is returned bit-for-bit
            y = np.where((psi != 0.0)[..., None], bumped, y)
        return np.mod(y, 1.0) if torus else y

    def apply_inverse(self, x, torus: bool = True):
        """Preimage via a 1D monotone solve along the bumped direction.

        The candidate A^{-1} y is exact wherever it lands clear of the support
        ball (accounting for the maximal displacement); elsewhere the kick
        size t solves t = psi(A^{-1} y - (t/lambda_b) e_b) by bisection plus a
        Newton polish.
        """
        y = np.asarray(x, dtype=np.longdouble if _is_ld(x) else float)
        ld = _is_ld(y)
        inv = self._ld["inv"] if ld else self.base.inverse_matrix.astype(float)
        e_b = self._ld["e_b"] if ld else self.e_b
        x_lin = y @ inv.T
        if self.is_linear:
            return np.mod(x_lin, 1.0) if torus else x_lin
        single = x_lin.ndim == 1
        pts = np.atleast_2d(x_lin)
        d = self._offset(pts)
        r = np.linalg.norm(d, axis=-1)
        kmax = abs(self.amp) * self.cstar * float(np.exp(-0.5))  # max |k|
        slack = kmax / abs(self.lam_b)
        need = r < self.r_out + slack
        if need.any():
            sol = self._solve_kick(pts[need], e_b, kmax)
            pts = pts.copy()
            pts[need] = pts[need] - (sol / self.lam_b)[..., None] * e_b
        out = pts[0] if single else pts
        return np.mod(out, 1.0) if torus else out

    def _solve_kick(self, x_lin, e_b, kmax):
        """Solve t = psi(x_lin - (t/lam_b) e_b) for each row (monotone in t)."""
        lo = np.full(len(x_lin), -kmax * 1.0001, dtype=x_lin.dtype)
        hi = -lo

        def f(t):
            return t - self.displacement(x_lin - (t / self.lam_b)[:, None] * e_b)

        flo = f(lo)
        for _ in range(48):
            mid = 0.5 * (lo + hi)
            fm = f(mid)
            neg = (fm < 0) == (flo < 0)
            lo = np.where(neg, mid, lo)
            flo = np.where(neg, fm, flo)
            hi = np.where(neg, hi, mid)
        t = 0.5 * (lo + hi)
        for _ in range(4):  # Newton polish; derivative bounded away from zero
            pts = x_lin - (t / self.lam_b)[:, None] * e_b
            grad = self.displacement_gradient(pts)
            deriv = 1.0 + (grad @ e_b) / self.lam_b
            t = t - (t - self.displacement(pts)) / deriv
        return t

    def jacobian(self, x) -> np.ndarray:
        """D f = A + e_b (grad psi)^T, shape (..., dim, dim)."""
        x = np.asarray(x, dtype=float)
        grad = self.displacement_gradient(x)
        return self.base.matrix.astype(float) + self.e_b[:, None] * grad[..., None, :]

    def jacobian_apply(self, x, v):
        """D f(x) v without materializing the matrix (v broadcastable)."""
        base = np.asarray(v) @ self.base.matrix.T.astype(float)
        gv = np.sum(self.displacement_gradient(x) * v, axis=-1)
        return base + gv[..., None] * self.e_b

    def jacobian_inverse_apply(self, x, v):
        """D f(x)^{-1} v via the rank-one update formula."""
        inv = self.base.inverse_matrix.astype(float)
        w = np.asarray(v) @ inv.T
        grad = self.displacement_gradient(x)
        denom = self.lam_b + grad @ self.e_b
        gw = np.sum(grad * w, axis=-1)
        return w - (gw / denom)[..., None] * self.e_b

    # -- eigencoordinate helpers ---------------------------------------------

    def ucoord(self, x):
        """Unstable eigencoordinate of the lift (absolute, origin at 0)."""
        row = self.base.basis_inv[self.base.unstable[0]]
        return np.asarray(x) @ (row.astype(np.longdouble) if _is_ld(x) else row)

    def leafwise_map(self, c):
        """Image coordinate of the bumped leaf through x1: c -> lam_b c + k(c) phi(|c|)."""
        return self.lam_b * c + self.kick(c) * self.cutoff(np.abs(c))

    def leafwise_map_d(self, c):
        s = np.sign(c)
        return (self.lam_b + self.kick_d(c) * self.cutoff(np.abs(c))
                + self.kick(c) * self.cutoff_d(np.abs(c)) * s)

    def fixed_points_on_leaf(self) -> tuple[np.ndarray, np.ndarray]:
        """Roots of leafwise_map(c) = c in [-rho/2, rho/2] and their derivatives."""
        from scipy.optimize import brentq

        grid = np.linspace(-self.r_out, self.r_out, 4001)
        vals = self.leafwise_map(grid) - grid
        sign = np.sign(vals)
        idx = np.flatnonzero(np.diff(sign) != 0)
        roots = []
        for i in idx:
            roots.append(brentq(lambda c: float(self.leafwise_map(c) - c),
                                grid[i], grid[i + 1], xtol=1e-15))
        roots = np.array(sorted(set(np.round(roots, 14))))
        return roots, self.leafwise_map_d(roots)

    def fixed_points(self) -> np.ndarray:
        roots, _ = self.fixed_points_on_leaf()
        return wrap(self.x1 + roots[:, None] * self.e_b)

    def local_manifold_arc(self, x, side: str, arc_len: float, n_samples: int):
        """Local stable/unstable arcs for the 2D variant (grid set tests)."""
        x = np.asarray(x, dtype=float)
        if side == "stable" and self.bumped == "s":
            # lines {u = const} are exactly invariant and tangent to the
            # contracting bundle, so stable leaves are straight
            ts = np.linspace(-arc_len / 2, arc_len / 2, n_samples)
            return wrap(x + ts[:, None] * self.base.direction("s"))
        if side == "unstable":
            leaf = grow_unstable_leaf(self, x, arc_len, arc_len / n_samples)
            return wrap(leaf.points)
        raise ValueError(f"unsupported side {side!r} for bumped='{self.bumped}'")


def _is_ld(x) -> bool:
    return isinstance(x, np.ndarray) and x.dtype == np.longdouble


def linear_da(A: ToralAutomorphism) -> BumpedToralMap:
    """The automorphism wrapped as a zero-kick map (mu = lambda keeps amp = 0)."""
    which = "c" if A.center else "s"
    lam = A.lam(which)
    return BumpedToralMap(base=A, x1=np.zeros(A.dim), rho=0.25, mu=lam,
                          cstar=0.01, bumped=which)


def build_da(A: ToralAutomorphism, x1, rho: float, mu: float, cstar: float,
             strict: bool = True) -> BumpedToralMap:
    """Construct and verify the T^3 derived-from-Anosov map.

    Verifies by direct evaluation: x1 is fixed under the base, the kick
    vanishes identically outside B_{rho/2}(x1), exactly three fixed points sit
    on the bumped leaf with derivatives {mu, d, d}, d in (0,1), and the
    leafwise image coordinate is monotone (the map is invertible along
    leaves).  With strict=False the map is returned with the check results in
    ``diagnostics`` instead of raising, so deliberately broken parameter sets
    can serve as negative controls for the cone verifier.
    """
    if A.dim == 3 and not A.t3_class:
        raise BadBifurcation("base automorphism is not in the T^3 class")
    if not (0 < cstar < rho / 4):
        raise ValueError("need 0 < cstar < rho/4")
    lam_u = A.lam("u")
    if not (mu < lam_u):
        raise ValueError(f"mu must stay below the expanding eigenvalue {lam_u:.3f}")
    x1 = np.asarray(x1, dtype=float)
    if float(np.linalg.norm(nearest_rep(A.apply(x1) - x1))) > 1e-12:
        raise BadBifurcation("x1 is not a fixed point of the base automorphism")
    F = BumpedToralMap(base=A, x1=x1, rho=rho, mu=mu, cstar=cstar,
                       bumped="c" if A.dim == 3 else "s")
    if mu <= 1.0:
        raise BadBifurcation("mu <= 1 creates no bifurcation (degenerate kick)")
    diag = F.diagnostics
    problems = []

    roots, derivs = F.fixed_points_on_leaf()
    diag["leaf_fixed_points"] = roots.tolist()
    diag["leaf_derivatives"] = derivs.tolist()
    if len(roots) != 3:
        problems.append(f"expected 3 fixed points on the bumped leaf, found {len(roots)}")
    else:
        d2, d0, d3 = derivs
        if abs(d0 - mu) > 1e-8:
            problems.append(f"derivative at x1 is {d0:.6f}, expected mu={mu}")
        if not (0.0 < d2 < 1.0 and 0.0 < d3 < 1.0):
            problems.append(f"outer fixed-point derivatives {d2:.4f}, {d3:.4f} not in (0,1)")
        if abs(d2 - d3) > 1e-8:
            problems.append("outer derivatives not symmetric")
        if np.max(np.abs(roots)) >= F.r_in:
            problems.append("created fixed points left the flat core of the cutoff")

    # leafwise monotonicity on a deterministic ball grid (invertibility)
    mono = _min_leaf_derivative(F)
    diag["min_leaf_derivative"] = mono
    if mono <= 0.0:
        problems.append(f"leafwise derivative reaches {mono:.4f} <= 0: not injective on leaves")

    # compact support, exact
    rng = np.random.default_rng(20240901)
    shell = rho / 2 + rng.uniform(0.0, 0.2, size=(2000, A.dim))
    dirs = rng.normal(size=(2000, A.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = wrap(x1 + shell[:, :1] * dirs)
    if np.any(F.displacement(pts) != 0.0):
        raise SupportLeak("kick is nonzero outside the support ball")

    diag["problems"] = problems
    if strict and problems:
        raise BadBifurcation("; ".join(problems))
    return F


def _min_leaf_derivative(F: BumpedToralMap, n: int = 33) -> float:
    axes = [np.linspace(-F.r_out, F.r_out, n)] * F.dim
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, F.dim)
    grid = grid[np.linalg.norm(grid, axis=1) < F.r_out]
    pts = F.x1 + grid
    deriv = F.lam_b + F.displacement_gradient(pts) @ F.e_b
    return float(np.min(deriv))


def build_da_2d(A: ToralAutomorphism, x1, rho: float, mu: float, cstar: float) -> BumpedToralMap:
    """2D variant: kick along the stable direction turns x1 into a repeller,
    producing the classical expanding-attractor picture on T^2."""
    if A.dim != 2:
        raise ValueError("2D builder needs a 2D automorphism")
    if not (0 < cstar < rho / 4):
        raise ValueError("need 0 < cstar < rho/4")
    x1 = np.asarray(x1, dtype=float)
    F = BumpedToralMap(base=A, x1=x1, rho=rho, mu=mu, cstar=cstar, bumped="s")
    roots, derivs = F.fixed_points_on_leaf()
    if len(roots) != 3:
        raise BadBifurcation(f"expected 3 fixed points on the bumped leaf, found {len(roots)}")
    if _min_leaf_derivative(F) <= 0:
        raise BadBifurcation("leafwise map not monotone")
    F.diagnostics["leaf_fixed_points"] = roots.tolist()
    F.diagnostics["leaf_derivatives"] = derivs.tolist()
    return F


# -- cone fields ---------------------------------------------------------------

@dataclass
class ConeReport:
    direction: str
    theta: float
    n_samples: int
    n_failures: int
    witnesses: np.ndarray
    min_growth: float
    worst_ratio: float

    @property
    def passed(self) -> bool:
        return self.n_failures == 0


def verify_cones(F: BumpedToralMap, theta: float, n_samples: int, seed: int = 0,
                 n_rays: int = 16) -> dict:
    """Sampled cone-field certificate of partial hyperbolicity.

    Checks, at ``n_samples`` seeded points: the expanding cone of half-angle
    theta around E^u (eigencoordinate ratio) is mapped strictly inside itself
    by D f with recorded growth, and the transverse cone around the
    contracting (center-)stable plane is mapped strictly inside itself by
    D f^{-1}.  Failures are returned as data, not raised.
    """
    if not (0 < theta < np.pi / 4):
        raise ValueError("theta must lie in (0, pi/4)")
    A = F.base
    rng = np.random.default_rng(seed)
    pts = rng.random((n_samples, A.dim))
    grad = F.displacement_gradient(pts)
    tan = np.tan(theta)
    uidx = list(A.unstable)
    cidx = list(A.contracting)
    out = {}

    # forward cone around E^u
    rays = _cone_boundary_rays(A, uidx, cidx, tan, n_rays)  # (nrays, dim) eigen
    worst_ratio = 0.0
    min_growth = np.inf
    fail = np.zeros(n_samples, dtype=bool)
    for v_eig in rays:
        v_cart = A.from_eigen(v_eig)
        gv = grad @ v_cart
        img = np.tile(A.eigenvalues * v_eig, (n_samples, 1))
        img[:, F.bumped_index] += gv
        ratio = np.max(np.abs(img[:, cidx]), axis=1) / np.abs(img[:, uidx[0]])
        growth = np.linalg.norm(A.from_eigen(img), axis=1) / np.linalg.norm(v_cart)
        worst_ratio = max(worst_ratio, float(ratio.max()))
        min_growth = min(min_growth, float(growth.min()))
        fail |= ratio >= tan
    out["unstable"] = ConeReport("unstable", theta, n_samples, int(fail.sum()),
                                 pts[fail][:16], min_growth, worst_ratio)

    # backward cone around the contracting plane (transverse to E^u)
    rays_cs = _cone_boundary_rays(A, cidx, uidx, tan, n_rays, transverse=True)
    inv = A.inverse_matrix.astype(float)
    denom = F.lam_b + grad @ F.e_b
    worst = 0.0
    ming = np.inf
    fail = np.zeros(n_samples, dtype=bool)
    for v_eig in rays_cs:
        v_cart = A.from_eigen(v_eig)
        w = inv @ v_cart
        gw = grad @ w
        img_cart = w[None, :] - (gw / denom)[:, None] * F.e_b
        img = A.to_eigen(img_cart)
        ratio = np.abs(img[:, uidx[0]]) / np.max(np.abs(img[:, cidx]), axis=1)
        growth = np.linalg.norm(img_cart, axis=1) / np.linalg.norm(v_cart)
        worst = max(worst, float(ratio.max()))
        ming = min(ming, float(growth.min()))
        fail |= ratio >= tan
    out["contracting"] = ConeReport("contracting", theta, n_samples, int(fail.sum()),
                                    pts[fail][:16], ming, worst)
    return out


def _cone_boundary_rays(A, axis_idx, trans_idx, tan, n_rays, transverse=False):
    """Extreme rays of {|v_trans| <= tan |v_axis|} in eigencoordinates."""
    dim = A.dim
    rays = []
    if not transverse:
        # 1D axis (E^u), transverse components on a circle/pair
        angles = np.linspace(0, 2 * np.pi, n_rays, endpoint=False) if len(trans_idx) == 2 else [0.0, np.pi]
        for a in angles:
            v = np.zeros(dim)
            v[axis_idx[0]] = 1.0
            if len(trans_idx) == 2:
                v[trans_idx[0]] = tan * np.cos(a)
                v[trans_idx[1]] = tan * np.sin(a)
            else:
                v[trans_idx[0]] = tan * np.cos(a)
            rays.append(v)
    else:
        # axis is the contracting plane/line, transverse is E^u
        angles = np.linspace(0, 2 * np.pi, n_rays, endpoint=False) if len(axis_idx) == 2 else [0.0, np.pi]
        for a in angles:
            for su in (1.0, -1.0):
                v = np.zeros(dim)
                if len(axis_idx) == 2:
                    v[axis_idx[0]] = np.cos(a)
                    v[axis_idx[1]] = np.sin(a)
                else:
                    v[axis_idx[0]] = np.cos(a)
                v[trans_idx[0]] = su * tan
                rays.append(v)
    return np.array(rays)


# -- strong unstable direction and leaves --------------------------------------

def unstable_direction(F: BumpedToralMap, x, depth: int = 30, tol: float = 1e-10):
    """Unit tangent of the strong unstable bundle by push-forward along a
    backward orbit (points may be a batch).

    Convergence is certified by running two probe vectors: both must arrive at
    the same direction (geometric contraction of the projective iteration),
    otherwise the point is too close to non-hyperbolic behavior.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    orbit = [x]
    for _ in range(depth):
        orbit.append(F.apply_inverse(orbit[-1]))
    A = F.base
    probe2 = A.direction("u") + 0.5 * F.e_b
    v = np.tile(A.direction("u"), (len(x), 1))
    v2 = np.tile(probe2 / np.linalg.norm(probe2), (len(x), 1))
    for y in orbit[:0:-1]:
        v = F.jacobian_apply(y, v)
        v = v / np.linalg.norm(v, axis=-1, keepdims=True)
        v2 = F.jacobian_apply(y, v2)
        v2 = v2 / np.linalg.norm(v2, axis=-1, keepdims=True)
    sgn = np.sign(v @ A.basis_inv[A.unstable[0]])
    v = v * sgn[:, None]
    sgn2 = np.sign(v2 @ A.basis_inv[A.unstable[0]])
    v2 = v2 * sgn2[:, None]
    drift = float(np.max(np.linalg.norm(v - v2, axis=-1)))
    if drift > np.sqrt(tol):
        raise DirectionNotConverged(f"probe disagreement {drift:.2e} after depth {depth}")
    return v


@dataclass
class Leaf:
    """Arc-length parameterized polyline sample of a one-dimensional leaf."""

    seed: np.ndarray
    field_id: str
    points: np.ndarray  # lifted
    arclength: np.ndarray  # cumulative, 0 at the node nearest the seed
    step: float

    def length(self) -> float:
        return float(self.arclength[-1] - self.arclength[0])

    def max_turn(self) -> float:
        t = np.diff(self.points, axis=0)
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        dots = np.clip(np.sum(t[:-1] * t[1:], axis=1), -1, 1)
        return float(np.max(np.arccos(dots))) if len(dots) else 0.0

    def point_at(self, s):
        """Point at signed arclength s (linear interpolation)."""
        cols = [np.interp(s, self.arclength, self.points[:, i])
                for i in range(self.points.shape[1])]
        return np.stack(cols, axis=-1)

    def ucoord_to_arclength(self, F: BumpedToralMap, u_target):
        """Arclength(s) where the leaf crosses the given unstable coordinate
        (the unstable coordinate is strictly monotone along unstable leaves)."""
        u = F.ucoord(self.points)
        return np.interp(u_target, u, self.arclength)


def grow_unstable_leaf(F: BumpedToralMap, x, length: float, h: float,
                       anchor_depth: int | None = None) -> Leaf:
    """Strong unstable leaf through x, grown by forward iteration.

    A straight seed segment placed along E^u at a deep backward image of x
    converges to the true leaf under forward iteration (transverse deviations
    contract like lambda_c/lambda_u per step); the polyline is refined to
    spacing <= h by inserting source midpoints and trimmed to a bounded
    arclength budget around the orbit of x each step.
    """
    x = np.asarray(x, dtype=float)
    A = F.base
    lam_u = A.lam("u")
    if F.is_linear:
        e_u = A.direction("u")
        n = max(int(np.ceil(length / h)), 8)
        ts = np.linspace(-length / 2, length / 2, n + 1)
        pts = x + ts[:, None] * e_u
        return Leaf(seed=x, field_id="u", points=pts, arclength=ts.copy(), step=h)

    h_seed = min(0.01, length / 4 + 1e-12, h * 8)
    m = anchor_depth or max(8, int(np.ceil(np.log((length + 1.0) / h_seed) / np.log(lam_u))) + 4)
    # run the anchor orbit on the torus: lifted backward orbits grow like
    # lambda_s^{-m} and their rounding would be amplified by lambda_u^m on the
    # way back, wrecking the seed pin-through
    y = wrap(x)
    for _ in range(m):
        y = F.apply_inverse(y)
    e_u = A.direction("u")
    n0 = 64
    ts = np.linspace(-h_seed, h_seed, n0 + 1)
    poly = y + ts[:, None] * e_u
    anchor = n0 // 2
    budget = 0.75 * length + 8 * h

    for _ in range(m):
        poly, anchor = _iterate_polyline(F, poly, anchor, h)
        poly, anchor = _trim_polyline(poly, anchor, budget)
        shift = np.round(poly[anchor])
        if shift.any():  # integer recentering keeps coordinates small (exact)
            poly = poly - shift

    # recenter at the anchor (the orbit of x) and resample to uniform spacing
    # on a grid containing s = 0, so the seed itself is a node
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    cum -= cum[anchor]
    lo = max(-length / 2, cum[0])
    hi = min(length / 2, cum[-1])
    ss = np.concatenate([-np.arange(1, int(-lo / h) + 1)[::-1] * h,
                         np.arange(0, int(hi / h) + 1) * h])
    pts = np.stack([np.interp(ss, cum, poly[:, i]) for i in range(poly.shape[1])], axis=-1)
    center = int(np.flatnonzero(ss == 0.0)[0])
    shift = x - pts[center]  # includes the lattice translation onto x's lift
    miss = float(np.linalg.norm(nearest_rep(shift)))
    if miss > 1e-5:
        raise DirectionNotConverged(f"leaf missed its seed by {miss:.2e}")
    pts = pts + shift  # pin the polyline through the seed (sub-step correction)
    return Leaf(seed=x, field_id="u", points=pts, arclength=ss, step=h)


def _iterate_polyline(F, poly, anchor, h):
    for _ in range(80):
        img = F.apply(poly, torus=False)
        gaps = np.linalg.norm(np.diff(img, axis=0), axis=-1)
        bad = np.flatnonzero(gaps > h)
        if not len(bad):
            return img, anchor
        mids = 0.5 * (poly[bad] + poly[bad + 1])
        poly = np.insert(poly, bad + 1, mids, axis=0)
        anchor += int(np.count_nonzero(bad < anchor))
    return img, anchor


def _trim_polyline(poly, anchor, budget):
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    keep = np.abs(cum - cum[anchor]) <= budget
    idx = np.flatnonzero(keep)
    return poly[idx[0]:idx[-1] + 1], anchor - idx[0]


def center_leaf(F: BumpedToralMap, x, length: float, h: float) -> Leaf:
    """The bumped-direction leaf: exactly a straight line (the foliation is
    preserved by construction)."""
    x = np.asarray(x, dtype=float)
    n = max(int(np.ceil(length / h)), 8)
    ts = np.linspace(-length / 2, length / 2, n + 1)
    return Leaf(seed=x, field_id="c", points=x + ts[:, None] * F.e_b,
                arclength=ts.copy(), step=h)


def integrate_leaf(F: BumpedToralMap, x, field: str, length: float, h: float) -> Leaf:
    if field == "u":
        return grow_unstable_leaf(F, x, length, h)
    if field == "c":
        return center_leaf(F, x, length, h)
    if field == "cs":
        raise ValueError("center-stable leaves are the exact planes {u = const}; "
                         "use cs_plane_samples")
    raise ValueError(f"unknown field {field!r}")


def cs_plane_samples(F: BumpedToralMap, x, extent: float, n: int) -> np.ndarray:
    """Samples of the center-stable leaf of x: the plane x + span(e_s, e_b),
    which is exactly invariant for displacement-along-e_b maps."""
    A = F.base
    e_s = A.direction("s")
    ts = np.linspace(-extent / 2, extent / 2, n)
    if A.dim == 2:
        return np.asarray(x) + ts[:, None] * e_s
    grid_a, grid_b = np.meshgrid(ts, ts, indexing="ij")
    return (np.asarray(x) + grid_a.reshape(-1, 1) * e_s
            + grid_b.reshape(-1, 1) * F.e_b)


def leaf_density(F: BumpedToralMap, x, field: str, length: float,
                 resolution: int) -> float:
    """Fraction of grid cells visited by the leaf polyline of given length."""
    from .gridsets import GridSet

    h = min(1.0 / (3 * resolution), 0.01)
    leaf = integrate_leaf(F, x, field, length, h)
    gs = GridSet.empty(resolution, F.dim)
    gs.mark(wrap(leaf.points))
    return gs.coverage()
