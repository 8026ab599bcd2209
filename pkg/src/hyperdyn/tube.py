"""Tube neighborhood of the origin's unstable leaf and nonlinear chain projection.

Because center-stable leaves of the bumped map are exactly the level sets of
the unstable eigencoordinate u, the tube over a compact unstable arc U^u
through the lift of the base fixed point is literally the slab
{u_min <= u(z) <= u_max}, and projecting a point along its center-stable leaf
onto any unstable leaf amounts to sliding that leaf to the point's u-level.

The chain projection implements the shortening induction: one level replaces
the chain x_0..x_m by the intersections of each point's unstable leaf with the
next point's center-stable leaf.  Every level keeps point i on the unstable
leaf of the original x_i and only moves its u-level up the chain, so after
growing each point's leaf once over the tube's u-range the whole recursion,
its per-level displacement-bound checks, and the final projections onto U^u
are monotone interpolations along precomputed polylines.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .damap import BumpedToralMap, Leaf, grow_unstable_leaf, unstable_direction
from .errors import (CalibrationMissing, ChainLeftTube, DirectionNotConverged,
                     NoIntersectionInRange, ProjectionFailed, StepBoundViolated)


def unstable_transport(F: BumpedToralMap, pts, u_targets, substep: float = 0.01,
                       depth: int = 12):
    """Slide points along their strong unstable leaves to given u-levels.

    Heun steps of the u-parameterized leaf ODE with the tangent field from
    batched probe push-forward; returns (points, arclengths traveled).
    Adequate for calibration-scale moves; the chain pyramid uses fully grown
    leaves instead.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float)).copy()
    u_now = F.ucoord(pts)
    u_targets = np.broadcast_to(np.asarray(u_targets, dtype=float), u_now.shape).copy()
    arclen = np.zeros(len(pts))
    remaining = u_targets - u_now
    n_steps = int(np.ceil(np.max(np.abs(remaining)) / substep)) if len(pts) else 0
    for _ in range(max(n_steps, 1)):
        du = np.clip(remaining, -substep, substep)
        active = du != 0.0
        if not active.any():
            break
        vel0 = _leaf_velocity(F, pts, depth)
        pred = pts + du[:, None] * vel0
        vel1 = _leaf_velocity(F, pred, depth)
        step = 0.5 * (vel0 + vel1)
        pts = pts + du[:, None] * step
        arclen += np.abs(du) * np.linalg.norm(step, axis=-1)
        remaining = remaining - du
    return pts, arclen


def _leaf_velocity(F: BumpedToralMap, pts, depth):
    """dz/du along the unstable leaf: unit tangent scaled to unit u-speed."""
    v = unstable_direction(F, pts, depth=depth)
    u_speed = v @ F.base.basis_inv[F.base.unstable[0]]
    return v / u_speed[:, None]


def bracket_foliated(F: BumpedToralMap, x, y, max_range: float = 0.5,
                     h: float = 1e-3) -> np.ndarray:
    """Intersection of the center-stable leaf of x with the unstable leaf of y.

    The crossing is located on the grown leaf of y by the sign change of
    u(z) - u(x), which is monotone along the leaf, hence unique.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    du = float(F.ucoord(x) - F.ucoord(y))
    if abs(du) > max_range:
        raise NoIntersectionInRange(f"u-offset {du:.3f} beyond search range {max_range}")
    if du == 0.0:
        return y.copy()
    leaf = grow_unstable_leaf(F, y, 2.6 * abs(du) + 8 * h, h)
    u = F.ucoord(leaf.points)
    target = float(F.ucoord(x))
    if not (u[0] <= target <= u[-1]):
        raise NoIntersectionInRange("leaf window does not reach the target level")
    s = float(np.interp(target, u, leaf.arclength))
    return leaf.point_at(s)


# -- calibration ---------------------------------------------------------------

def leaf_separation_modulus(F: BumpedToralMap, n_pairs: int, eps_grid,
                            delta_grid=None, z_extent: float = 2.0,
                            n_z: int = 6, seed: int = 0) -> dict:
    """Empirical modulus delta(eps) for unstable-leaf separation.

    For sampled points x and leaf-neighbors y with l^u(x, y) <= delta, and
    samples z on the center-stable leaf of x, measures the unstable arc from z
    to the center-stable leaf of y.  The table reports, for each eps, the
    largest tested delta whose worst observed separation stays below eps.
    Failed projections (target level unreachable) are excluded and counted.
    """
    rng = np.random.default_rng(seed)
    eps_grid = np.asarray(sorted(eps_grid), dtype=float)
    if delta_grid is None:
        delta_grid = eps_grid * 0.8
    delta_grid = np.asarray(sorted(delta_grid), dtype=float)
    A = F.base
    e_s = A.direction("s")
    xs = rng.random((n_pairs, A.dim))
    # z offsets in the center-stable plane of x (the exact cs-leaf)
    ts = np.linspace(-z_extent / 2, z_extent / 2, n_z)
    worst = np.zeros(len(delta_grid))
    failures = 0
    for i, delta in enumerate(delta_grid):
        vel = _leaf_velocity(F, xs, depth=10)
        du = delta / np.linalg.norm(vel, axis=-1)  # arclength delta along the leaf
        y, l_xy = unstable_transport(F, xs, F.ucoord(xs) + du)
        seps = []
        for a in ts:
            for b in ts:
                z = xs + a * e_s + b * F.e_b
                try:
                    _, l_z = unstable_transport(F, z, F.ucoord(y))
                except DirectionNotConverged:
                    failures += 1
                    continue
                seps.append(l_z)
        worst[i] = float(np.max(seps))
    table = []
    for eps in eps_grid:
        ok = delta_grid[worst < eps]
        table.append((float(eps), float(ok.max()) if len(ok) else 0.0))
    return {"table": table, "delta_grid": delta_grid.tolist(), "worst": worst.tolist(),
            "failures": failures, "n_pairs": n_pairs, "z_extent": z_extent}


def save_calibration(calib: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(calib, fh, indent=1, sort_keys=True)


def load_calibration(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


@dataclass
class TubeV:
    """Union of center-stable leaves over a compact unstable arc at the origin.

    Membership is exact: the arc's u-coordinate range bounds the slab.  The
    three defining properties (arc diameter below delta_0; points of a common
    leaf inside the tube stay delta_p- and beta-close; controlled projection
    separations) are verified on samples at build time and kept in
    ``checks``.
    """

    arc: Leaf
    u_min: float
    u_max: float
    delta_p: float
    beta: float
    eta: float
    eps0: float
    delta0: float
    checks: dict = field(default_factory=dict)

    def contains(self, F: BumpedToralMap, pts) -> np.ndarray:
        u = F.ucoord(np.asarray(pts, dtype=float))
        return (u >= self.u_min) & (u <= self.u_max)

    def project_to_arc(self, F: BumpedToralMap, pts):
        """Center-stable projection onto the arc: the arc point at each
        point's u-level.  Returns (points, signed arc positions)."""
        u = np.atleast_1d(F.ucoord(np.asarray(pts, dtype=float)))
        if np.any(u < self.u_min - 1e-12) or np.any(u > self.u_max + 1e-12):
            raise ProjectionFailed("point u-level outside the arc range")
        s = self.arc.ucoord_to_arclength(F, u)
        return self.arc.point_at(s), s


def build_tube(F: BumpedToralMap, delta_p: float, beta: float, eta: float,
               calibration: dict | None, h: float = 5e-4,
               n_check: int = 1000, seed: int = 1) -> TubeV:
    """Assemble the tube: pick eps0 below min(delta_p, beta) from the
    calibration table, take delta0 = delta(eps0), and cut the unstable arc of
    that diameter through the lift of the origin fixed point."""
    if calibration is None or not calibration.get("table"):
        raise CalibrationMissing("leaf separation calibration required")
    bound = min(delta_p, beta)
    eligible = [(e, d) for e, d in calibration["table"] if e < bound and d > 0]
    if not eligible:
        raise CalibrationMissing(f"no calibrated eps below {bound}")
    eps0, delta0 = eligible[-1]
    arc = grow_unstable_leaf(F, np.zeros(F.dim), 0.95 * delta0, h)
    u = F.ucoord(arc.points)
    tube = TubeV(arc=arc, u_min=float(u.min()), u_max=float(u.max()),
                 delta_p=delta_p, beta=beta, eta=eta, eps0=eps0, delta0=delta0)
    tube.checks = _tube_checks(F, tube, n_check, seed)
    return tube


def _tube_checks(F, tube: TubeV, n_check: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    # sample points of V by sliding arc points along their cs-plane
    s = rng.uniform(tube.arc.arclength[0], tube.arc.arclength[-1], n_check)
    base = tube.arc.point_at(s)
    offs = rng.uniform(-0.4, 0.4, (n_check, 2))
    pts = base + offs[:, :1] * F.base.direction("s") + offs[:, 1:] * F.e_b
    # common-leaf pairs inside V stay delta_p- and beta-close
    u_tgt = rng.uniform(tube.u_min, tube.u_max, n_check)
    moved, _ = unstable_transport(F, pts, u_tgt)
    d = np.linalg.norm(moved - pts, axis=-1)
    return {
        "arc_diameter": float(np.linalg.norm(tube.arc.points[-1] - tube.arc.points[0])),
        "leaf_pair_max_dist": float(d.max()),
        "leaf_pairs_ok": bool(np.all(d < min(tube.delta_p, tube.beta))),
        "inside": bool(np.all(tube.contains(F, moved))),
    }


# -- chain projection -----------------------------------------------------------

def project_chain_nonlinear(F: BumpedToralMap, tube: TubeV, points,
                            eps: float, h: float = 5e-4) -> dict:
    """Shortening induction for a chain inside the tube, with projections.

    ``points`` are lifted chain points; all must lie in the tube except
    possibly the last (the first escapee may be kept as the final point).
    Runs the full level-by-level recursion, verifying at every level the two
    displacement bounds (distance from the leaf-slid intersection point to
    both of its parents must stay below eps), and returns the center-stable
    projections of the in-tube chain points onto the arc together with their
    signed arc positions.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n < 2:
        raise ChainLeftTube(0, "chain too short")
    inside = tube.contains(F, pts)
    if not inside[:-1].all():
        raise ChainLeftTube(int(np.argmin(inside[:-1])))
    if float(np.linalg.norm(pts[0] - tube.arc.seed)) > 1e-9:
        raise ChainLeftTube(0, "chain must start at the tube's arc seed")
    m = n - 1 if not inside[-1] else n  # indices 0..m-1 are in the tube

    u_levels = F.ucoord(pts)
    # the whole pyramid lives between the chain's u-levels; one leaf per point
    # over that window turns every later step into interpolation
    span = float(u_levels[:m].max() - u_levels[:m].min()) + float(
        np.max(np.abs(np.diff(u_levels))))
    leaves = []
    for i in range(m):
        need = 2.2 * (abs(span) + 4 * h) + 8 * h
        leaves.append(grow_unstable_leaf(F, pts[i], need, h))
    leaf_u = [F.ucoord(lf.points) for lf in leaves]

    cache: dict[tuple[int, int], np.ndarray] = {}

    def point_on(j: int, t: int) -> np.ndarray:
        """Unstable leaf of x_j at the u-level of x_t."""
        key = (j, t)
        if key not in cache:
            s = np.interp(u_levels[t], leaf_u[j], leaves[j].arclength)
            cache[key] = leaves[j].point_at(float(s))
        return cache[key]

    # level k chain: i -> point_on(i, i + k); verify both displacement bounds
    # of the relation for every consecutive pair at every level
    worst_bounds = 0.0
    for k in range(0, m - 1):
        for i in range(0, m - 1 - k):
            x_here = point_on(i, i + k)
            x_next = point_on(i + 1, i + 1 + k)
            q = point_on(i + 1, i + k)  # the bracket of the pair
            b1 = float(np.linalg.norm(q - x_next))
            b2 = float(np.linalg.norm(q - x_here))
            worst_bounds = max(worst_bounds, b1, b2)
            if b1 > eps or b2 > eps:
                raise StepBoundViolated(i, max(b1, b2), eps)

    proj_pts, arc_pos = tube.project_to_arc(F, pts[:m])
    return {
        "projections": proj_pts,
        "arc_positions": np.atleast_1d(arc_pos),
        "in_tube": m,
        "worst_step_bound": worst_bounds,
        "eps": eps,
        "exit_side": float(np.sign(u_levels[m - 1])),
    }
