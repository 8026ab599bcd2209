"""Pseudo-orbits and shadowing solvers.

For a linear automorphism the shadow of a finite pseudo-orbit is computed
exactly in eigencoordinates: each contracting component solves the jump
recurrence forward as a geometric series, each expanding component backward,
so the result is an honest orbit up to float roundoff and the correction obeys
beta <= K * alpha with K = max(1/(1-lambda_c), 1/(lambda_u-1)) in the eigen
sup-norm.

For perturbed (derived-from-Anosov) maps the shadow is found by damped Newton
on sequence space, linearizing along the current sequence and imposing the
hyperbolic boundary conditions (zero contracting correction at the start, zero
expanding correction at the end) that make the block-bidiagonal system square.

Pseudo-orbit points are stored as torus points; per-step jumps are measured
with nearest-representative reduction, so periodic torus orbits (which close
up only modulo Z^n on lifts) are representable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.signal import lfilter

from .errors import EmptyOrbit, NoConvergence
from .torus import ToralAutomorphism, eigen_sup_distance, nearest_rep, torus_delta, wrap


@dataclass(frozen=True)
class PseudoOrbit:
    """Finite sequence x_0..x_N with measured per-step jump bound alpha.

    ``jumps[n]`` is the nearest-representative of x_{n+1} - F(x_n); alpha is
    the max of their eigen sup-norms (computed, never declared).
    """

    points: np.ndarray
    jumps: np.ndarray
    alpha: float
    map_id: str = "linear"

    def __len__(self):
        return len(self.points)

    @property
    def closing_jump(self):
        return self.meta.get("closing_jump")

    meta: dict = field(default_factory=dict, compare=False)


def make_pseudo_orbit(A: ToralAutomorphism, points, map_id: str = "linear",
                      apply_fn=None) -> PseudoOrbit:
    """Measure the jumps of a point sequence under the given dynamics."""
    pts = wrap(points)
    if pts.ndim != 2 or len(pts) < 2:
        raise EmptyOrbit("a pseudo-orbit needs at least two points")
    fwd = apply_fn(pts[:-1]) if apply_fn is not None else A.apply(pts[:-1])
    jumps = torus_delta(fwd, pts[1:])
    alpha = float(np.max(np.abs(A.to_eigen(jumps)))) if len(jumps) else 0.0
    return PseudoOrbit(points=pts, jumps=jumps, alpha=alpha, map_id=map_id)


def random_pseudo_orbit(A: ToralAutomorphism, n_steps: int, alpha: float,
                        rng: np.random.Generator) -> PseudoOrbit:
    """Random walk x_{n+1} = F(x_n) + jump, jumps uniform in the eigen sup-ball."""
    d = A.dim
    jumps_eig = rng.uniform(-alpha, alpha, size=(n_steps, d))
    jumps = A.from_eigen(jumps_eig)
    pts = np.empty((n_steps + 1, d))
    pts[0] = rng.random(d)
    for n in range(n_steps):
        pts[n + 1] = wrap(A.apply(pts[n]) + jumps[n])
    return make_pseudo_orbit(A, pts)


@dataclass(frozen=True)
class ShadowResult:
    orbit: np.ndarray
    beta: float
    residual: float
    alpha: float
    k_bound: float
    boundary: str = "free"
    iterations: int = 0

    def to_report(self) -> dict:
        return {
            "beta": self.beta,
            "residual": self.residual,
            "alpha": self.alpha,
            "K_bound": self.k_bound,
            "boundary": self.boundary,
        }


def _forward_series(lam: float, v: np.ndarray) -> np.ndarray:
    """e_0 = 0, e_{n+1} = lam * e_n - v_n for a contracting component."""
    e = np.zeros(len(v) + 1)
    e[1:] = lfilter([1.0], [1.0, -lam], -v)
    return e


def _backward_series(lam: float, v: np.ndarray) -> np.ndarray:
    """e_N = 0, e_n = (e_{n+1} + v_n) / lam for an expanding component."""
    e = np.zeros(len(v) + 1)
    e[:-1] = lfilter([1.0 / lam], [1.0, -1.0 / lam], v[::-1])[::-1]
    return e


def _periodic_series(lam: float, v: np.ndarray) -> np.ndarray:
    """Cyclic solution of e_{n+1} = lam*e_n - v_n over n mod P (stable form)."""
    p = len(v)
    if abs(lam) < 1.0:
        part = _forward_series(lam, v)  # zero-initialized particular solution
        e0 = part[p] / (1.0 - lam ** p)
        return part[:-1] + e0 * lam ** np.arange(p)
    # expanding: solve the reversed recurrence e_n = (e_{n+1} + v_n)/lam
    part = _backward_series(lam, v)  # zero-terminal particular solution
    hP = part[0] / (1.0 - float(lam) ** (-p))
    return part[:-1] + hP * float(lam) ** (np.arange(p, dtype=float) - p)


def shadow_linear(A: ToralAutomorphism, po: PseudoOrbit,
                  boundary: str = "free") -> ShadowResult:
    """Exact shadow of a finite pseudo-orbit of a linear automorphism.

    boundary='free' imposes zero contracting correction at the start and zero
    expanding correction at the end (the bi-infinite statement approximated by
    a finite window).  boundary='periodic' additionally closes the orbit: the
    closing jump x_0 - F(x_N) is reduced by its nearest lattice vector, so the
    result is a genuine periodic orbit of the torus map.
    """
    if len(po) < 2:
        raise EmptyOrbit("empty or single-point pseudo-orbit")
    if boundary not in ("free", "periodic"):
        raise ValueError(f"unknown boundary {boundary!r}")
    pts = po.points
    v_eig = A.to_eigen(po.jumps)
    if boundary == "periodic":
        closing = torus_delta(A.apply(pts[-1]), pts[0])
        v_eig = np.vstack([v_eig, A.to_eigen(closing)])

    e_eig = np.empty((len(pts), A.dim))
    for i in range(A.dim):
        lam = float(A.eigenvalues[i])
        if boundary == "periodic":
            e_eig[:, i] = _periodic_series(lam, v_eig[:, i])
        elif abs(lam) < 1.0:
            e_eig[:, i] = _forward_series(lam, v_eig[:, i])
        else:
            e_eig[:, i] = _backward_series(lam, v_eig[:, i])

    orbit = wrap(pts + A.from_eigen(e_eig))
    beta = float(np.max(eigen_sup_distance(A, orbit, pts)))
    res = _orbit_residual(A, orbit, periodic=(boundary == "periodic"))
    return ShadowResult(orbit=orbit, beta=beta, residual=res, alpha=po.alpha,
                        k_bound=A.shadowing_constant(), boundary=boundary)


def _orbit_residual(A: ToralAutomorphism, orbit: np.ndarray, periodic: bool,
                    apply_fn=None) -> float:
    fwd = apply_fn(orbit[:-1]) if apply_fn is not None else A.apply(orbit[:-1])
    res = float(np.max(eigen_sup_distance(A, fwd, orbit[1:]))) if len(orbit) > 1 else 0.0
    if periodic:
        last = apply_fn(orbit[-1]) if apply_fn is not None else A.apply(orbit[-1])
        res = max(res, float(eigen_sup_distance(A, last, orbit[0])))
    return res


def shadow_nonlinear(F, po: PseudoOrbit, tol: float = 1e-9,
                     max_iter: int = 200) -> ShadowResult:
    """Damped Newton shadow for a perturbed map with analytic Jacobian.

    ``F`` must expose ``base`` (the linear part, a ToralAutomorphism),
    ``apply(points)`` and ``jacobian(points)``.  Each Newton step solves the
    linearized jump equations e_{n+1} = DF(y_n) e_n - w_n as a sparse square
    system with hyperbolic boundary conditions; steps that increase the
    residual are halved.  Raises NoConvergence when the pseudo-orbit has left
    the hyperbolic regime the boundary conditions assume.
    """
    if len(po) < 2:
        raise EmptyOrbit("empty or single-point pseudo-orbit")
    A = F.base
    d = A.dim
    y = po.points.copy()
    n_pts = len(y)
    n_steps = n_pts - 1

    # boundary rows: contracting eigen-components of e_0, expanding of e_N
    contracting = list(A.contracting)
    expanding = list(A.unstable)

    def residual_vec(y):
        return torus_delta(F.apply(y[:-1]), y[1:])

    w = residual_vec(y)
    res = float(np.max(eigen_sup_distance(A, F.apply(y[:-1]), y[1:]))) if n_steps else 0.0
    it = 0
    while res > tol:
        if it >= max_iter:
            raise NoConvergence(it, res)
        jac = F.jacobian(y[:-1])  # (n_steps, d, d)
        rows, cols, vals = [], [], []
        rhs = np.zeros(d * n_pts)
        eq = 0
        for n in range(n_steps):
            for i in range(d):
                rows.append(eq); cols.append(d * (n + 1) + i); vals.append(1.0)
                for j in range(d):
                    rows.append(eq); cols.append(d * n + j); vals.append(-jac[n, i, j])
                rhs[eq] = -w[n, i]
                eq += 1
        for i in contracting:
            for j in range(d):
                rows.append(eq); cols.append(j); vals.append(A.basis_inv[i, j])
            eq += 1
        for i in expanding:
            for j in range(d):
                rows.append(eq); cols.append(d * n_steps + j); vals.append(A.basis_inv[i, j])
            eq += 1
        mat = sp.csc_matrix((vals, (rows, cols)), shape=(d * n_pts, d * n_pts))
        e = spla.spsolve(mat, rhs).reshape(n_pts, d)

        step = 1.0
        for _ in range(10):
            y_new = wrap(y + step * e)
            w_new = residual_vec(y_new)
            res_new = float(np.max(np.abs(A.to_eigen(w_new))))
            if res_new < res:
                break
            step *= 0.5
        else:
            raise NoConvergence(it, res, "damped step failed to reduce residual")
        y, w, res = y_new, w_new, res_new
        it += 1

    beta = float(np.max(eigen_sup_distance(A, y, po.points)))
    return ShadowResult(orbit=y, beta=beta, residual=res, alpha=po.alpha,
                        k_bound=A.shadowing_constant(), iterations=it)


def expansivity_gap(F, x, y, horizon: int) -> float:
    """max over |n| <= horizon of the torus distance between the two orbits.

    The criterion behind it: the semiconjugacy identifies x and y exactly when
    their orbits stay within 2*C*r of each other for all time.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    gap = float(np.linalg.norm(torus_delta(x, y)))
    xf, yf = x.copy(), y.copy()
    xb, yb = x.copy(), y.copy()
    for _ in range(horizon):
        xf, yf = F.apply(xf), F.apply(yf)
        xb, yb = F.apply_inverse(xb), F.apply_inverse(yb)
        gap = max(gap, float(np.linalg.norm(torus_delta(xf, yf))),
                  float(np.linalg.norm(torus_delta(xb, yb))))
    return gap


def load_pseudo_orbit_csv(A: ToralAutomorphism, path, map_id="linear") -> PseudoOrbit:
    """One lifted point per row; lifts are wrapped to the torus internally."""
    pts = np.loadtxt(path, delimiter=",", ndmin=2)
    return make_pseudo_orbit(A, pts, map_id=map_id)
