"""Grid-resolution representations of compact invariant sets.

A GridSet is a bitset over a uniform N^dim partition of the torus with
half-open cells [k/N, (k+1)/N).  It stands in for the compact sets of the
theory: orbit closures of curves, finite-horizon avoidance sets
(intersection of all iterates of a ball complement), attractor surrogates.
All constructions are over-approximations at the stated resolution and are
recorded as such; nothing here claims to enclose the true sets rigorously.

Serialization: run-length-encoded binary with a 16-byte header
(magic ``HGS1``, dim, N, popcount as little-endian uint32) followed by
alternating uint32 run lengths over the C-order flattened bits, starting with
the length of the initial run of zeros.  2D slices export as binary PGM (P5).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import EmptySet, ManifoldUnavailable, ResolutionOverflow
from .torus import ToralAutomorphism, nearest_rep, torus_delta, wrap

MAX_CELLS = 1 << 28  # memory guard for N^dim


@dataclass
class GridSet:
    """Bitset over the uniform N^dim torus partition."""

    resolution: int
    dim: int
    bits: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = (self.resolution,) * self.dim
        if self.bits.shape != expected:
            raise ValueError(f"bits shape {self.bits.shape} != {expected}")
        if self.bits.dtype != bool:
            self.bits = self.bits.astype(bool)

    @classmethod
    def empty(cls, resolution: int, dim: int, **meta) -> "GridSet":
        _check_size(resolution, dim)
        return cls(resolution, dim, np.zeros((resolution,) * dim, dtype=bool), dict(meta))

    @classmethod
    def full(cls, resolution: int, dim: int, **meta) -> "GridSet":
        _check_size(resolution, dim)
        return cls(resolution, dim, np.ones((resolution,) * dim, dtype=bool), dict(meta))

    def copy(self) -> "GridSet":
        return GridSet(self.resolution, self.dim, self.bits.copy(), dict(self.meta))

    def popcount(self) -> int:
        return int(np.count_nonzero(self.bits))

    def coverage(self) -> float:
        return self.popcount() / self.bits.size

    def cell_of(self, points) -> np.ndarray:
        """Integer cell index of torus points (half-open cells)."""
        pts = wrap(points)
        idx = np.floor(pts * self.resolution).astype(np.int64)
        return np.clip(idx, 0, self.resolution - 1)

    def contains(self, points) -> np.ndarray:
        idx = self.cell_of(points)
        return self.bits[tuple(idx.reshape(-1, self.dim).T)].reshape(np.asarray(points).shape[:-1])

    def mark(self, points) -> None:
        idx = self.cell_of(points)
        self.bits[tuple(idx.reshape(-1, self.dim).T)] = True

    def cell_centers(self, cells=None) -> np.ndarray:
        """Torus coordinates of cell centers (marked cells by default)."""
        if cells is None:
            cells = np.argwhere(self.bits)
        return (np.asarray(cells) + 0.5) / self.resolution

    def marked_cells(self) -> np.ndarray:
        return np.argwhere(self.bits)

    def dilate(self, radius: int = 1) -> "GridSet":
        """Chebyshev dilation with torus wrap."""
        out = self.bits.copy()
        for axis in range(self.dim):
            acc = out.copy()
            for shift in range(1, radius + 1):
                acc |= np.roll(out, shift, axis=axis)
                acc |= np.roll(out, -shift, axis=axis)
            out = acc
        return GridSet(self.resolution, self.dim, out, dict(self.meta))

    def coarsen(self) -> "GridSet":
        """Halve the resolution; a coarse cell is marked if any child is."""
        n = self.resolution
        if n % 2:
            raise ValueError("resolution must be even to coarsen")
        b = self.bits
        if self.dim == 2:
            c = b.reshape(n // 2, 2, n // 2, 2).any(axis=(1, 3))
        else:
            c = b.reshape(n // 2, 2, n // 2, 2, n // 2, 2).any(axis=(1, 3, 5))
        return GridSet(n // 2, self.dim, c, dict(self.meta))

    # -- serialization ------------------------------------------------------

    def to_bytes(self) -> bytes:
        flat = self.bits.ravel()
        # run lengths of alternating values starting with zeros
        change = np.flatnonzero(np.diff(flat.view(np.int8)))
        bounds = np.concatenate([[0], change + 1, [flat.size]])
        runs = np.diff(bounds)
        if flat.size and flat[0]:
            runs = np.concatenate([[0], runs])
        header = struct.pack("<4sIII", b"HGS1", self.dim, self.resolution, self.popcount())
        return header + runs.astype("<u4").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "GridSet":
        magic, dim, n, pop = struct.unpack("<4sIII", blob[:16])
        if magic != b"HGS1":
            raise ValueError("bad magic")
        runs = np.frombuffer(blob[16:], dtype="<u4")
        flat = np.zeros(n ** dim, dtype=bool)
        pos, val = 0, False
        for r in runs:
            if val:
                flat[pos:pos + r] = True
            pos += int(r)
            val = not val
        gs = cls(n, dim, flat.reshape((n,) * dim))
        assert gs.popcount() == pop, "popcount mismatch in HGS1 payload"
        return gs

    def to_pgm(self, path, axis: int = 2, index: int = 0) -> None:
        """Write a 2D slice as binary PGM (P5, maxval 255)."""
        if self.dim == 2:
            img = self.bits
        else:
            img = np.take(self.bits, index, axis=axis)
        data = np.where(img, 255, 0).astype(np.uint8)
        with open(path, "wb") as fh:
            fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
            fh.write(data.tobytes())


def _check_size(resolution: int, dim: int):
    if resolution ** dim > MAX_CELLS:
        raise ResolutionOverflow(f"{resolution}^{dim} cells exceed the configured bound")


@dataclass(frozen=True)
class CurveSpec:
    """Piecewise-linear curve on the torus given by lifted control points.

    Must pass through a fixed point of the map it is iterated under; the
    orbit-closure surrogate keeps all iterates connected through that point.
    """

    control_points: np.ndarray
    fixed_point: np.ndarray

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=float)
        fp = np.asarray(self.fixed_point, dtype=float)
        if _curve_point_distance(cp, fp) > 1e-9:
            raise ValueError("curve must pass through the designated fixed point")

    def sample(self, spacing: float) -> np.ndarray:
        """Dense samples along the lifted polyline at the given spacing."""
        cp = np.asarray(self.control_points, dtype=float)
        out = [cp[:1]]
        for a, b in zip(cp[:-1], cp[1:]):
            seg = b - a
            n = max(int(np.ceil(np.linalg.norm(seg) / spacing)), 1)
            ts = np.arange(1, n + 1)[:, None] / n
            out.append(a + ts * seg)
        return np.vstack(out)


def _curve_point_distance(control_points: np.ndarray, point: np.ndarray) -> float:
    """Exact distance of a torus point to the lifted polyline segments."""
    best = np.inf
    for a, b in zip(control_points[:-1], control_points[1:]):
        mid = 0.5 * (a + b)
        p = point + np.round(mid - point)  # lift the point near this segment
        seg = b - a
        denom = float(seg @ seg)
        t = 0.0 if denom == 0 else float(np.clip((p - a) @ seg / denom, 0.0, 1.0))
        best = min(best, float(np.linalg.norm(p - (a + t * seg))))
    if len(control_points) == 1:
        best = float(np.linalg.norm(nearest_rep(control_points[0] - point)))
    return best


def orbit_closure(F, curve: CurveSpec, resolution: int, max_iters: int,
                  backward_iters: int | None = None) -> GridSet:
    """Grid over-approximation of the orbit of a curve.

    Samples the curve densely, pushes the samples forward and backward marking
    cells, and stops early if one full sweep adds no new cells.  Forward and
    backward depths may differ (expanding iterates stretch sample spacing, so
    each iterate is resampled by midpoint insertion in the source polyline to
    keep the marking faithful).
    """
    gs = GridSet.empty(resolution, curve.control_points.shape[1],
                       kind="orbit_closure", max_iters=max_iters)
    spacing = 1.0 / (3.0 * resolution)
    base = curve.sample(spacing)
    gs.mark(base)
    all_samples = [wrap(base)]
    if backward_iters is None:
        backward_iters = max_iters
    for direction, steps in (("fwd", max_iters), ("bwd", backward_iters)):
        pts = base.copy()
        for _ in range(steps):
            before = gs.popcount()
            pts = _iterate_refined(F, pts, spacing, backward=(direction == "bwd"))
            gs.mark(pts)
            all_samples.append(wrap(pts))
            if gs.popcount() == before:
                break
    gs.meta["samples"] = np.vstack(all_samples)
    return gs


def _iterate_refined(F, pts: np.ndarray, spacing: float, backward: bool) -> np.ndarray:
    """Apply the map to a polyline, inserting source midpoints where the image
    stretches beyond the sampling spacing."""
    for _ in range(60):
        img = F.apply_inverse(pts, torus=False) if backward else F.apply(pts, torus=False)
        gaps = np.linalg.norm(np.diff(img, axis=0), axis=-1)
        bad = np.flatnonzero(gaps > spacing)
        if not len(bad):
            return img
        mids = 0.5 * (pts[bad] + pts[bad + 1])
        pts = np.insert(pts, bad + 1, mids, axis=0)
    return img


def invariant_core(F, keep, dim: int, resolution: int, horizon: int,
                   samples_per_axis: int = 3, **meta) -> GridSet:
    """Grid surrogate of the maximal invariant set inside a region.

    Set-oriented iteration: start from the cells whose every sample satisfies
    ``keep`` (fail-closed region test) and repeatedly delete cells whose image
    or preimage samples no longer meet the surviving set.  After ``horizon``
    rounds a surviving cell carries a cell-granularity pseudo-orbit staying in
    the region for |n| <= horizon, so the result over-approximates the cells
    meeting the true maximal invariant set; in particular fixed points inside
    the region always keep their cell.
    """
    _check_size(resolution, dim)
    shape = (resolution,) * dim
    sample_grids = list(_cell_sample_grids(resolution, dim, samples_per_axis))
    alive = np.ones(shape, dtype=bool)
    for pts in sample_grids:
        alive &= np.asarray(keep(pts)).reshape(shape)

    fwd_cells = [_cells_of(F.apply(pts), resolution) for pts in sample_grids]
    bwd_cells = [_cells_of(F.apply_inverse(pts), resolution) for pts in sample_grids]
    for _ in range(horizon):
        hits_fwd = np.zeros(shape, dtype=bool)
        hits_bwd = np.zeros(shape, dtype=bool)
        for fc, bc in zip(fwd_cells, bwd_cells):
            hits_fwd |= alive[fc].reshape(shape)
            hits_bwd |= alive[bc].reshape(shape)
        new_alive = alive & hits_fwd & hits_bwd
        if np.array_equal(new_alive, alive):
            break
        alive = new_alive
    return GridSet(resolution, dim, alive, dict(meta))


def avoidance_set(F, center, radius: float, resolution: int, horizon: int,
                  samples_per_axis: int = 3) -> GridSet:
    """Cells carrying ball-avoiding cell-pseudo-orbits for |n| <= horizon
    (the grid stand-in for the intersection of all iterates of the ball
    complement); see invariant_core."""
    c = np.asarray(center, dtype=float)

    def keep(pts):
        return np.linalg.norm(torus_delta(pts, c), axis=-1) > radius

    return invariant_core(F, keep, len(c), resolution, horizon, samples_per_axis,
                          kind="avoidance", center=tuple(c), radius=radius,
                          depth=horizon)


def _cells_of(points: np.ndarray, resolution: int):
    idx = np.clip(np.floor(wrap(points) * resolution).astype(np.int64), 0, resolution - 1)
    return tuple(idx.T)


def _cell_sample_grids(resolution: int, dim: int, k: int):
    """Yield the full N^dim point grid once per sub-cell sample offset."""
    offs = (np.arange(k) + 0.5) / (k * resolution)
    grids = np.meshgrid(*([np.arange(resolution) / resolution] * dim), indexing="ij")
    cells = np.stack([g.ravel() for g in grids], axis=-1)  # (N^dim, dim)
    for sub in np.stack(np.meshgrid(*([offs] * dim), indexing="ij"), axis=-1).reshape(-1, dim):
        yield cells + sub


def forward_trap_set(F, center, radius: float, resolution: int, horizon: int) -> GridSet:
    """Cells with some sample whose backward orbit avoids the ball: an
    over-approximation of an expanding attractor obtained by deleting the
    basin core of the repeller at ``center`` (fail-open marking)."""
    dim = len(np.asarray(center))
    _check_size(resolution, dim)
    c = np.asarray(center, dtype=float)
    per_cell = np.zeros((resolution,) * dim, dtype=bool)
    for pts in _cell_sample_grids(resolution, dim, 3):
        alive = np.linalg.norm(torus_delta(pts, c), axis=-1) > radius
        bwd = pts
        for _ in range(horizon):
            bwd = F.apply_inverse(bwd)
            alive &= np.linalg.norm(torus_delta(bwd, c), axis=-1) > radius
        per_cell |= alive.reshape((resolution,) * dim)
    gs = GridSet.empty(resolution, dim, kind="attractor", center=tuple(c), radius=radius)
    gs.bits = per_cell
    return gs


# -- components and the singleton/ rest decomposition ------------------------

def connected_components(S: GridSet, adjacency: str = "face") -> np.ndarray:
    """Component labeling with torus wrap-around; 0 labels empty cells.

    adjacency='face' uses the 2*dim neighborhood, 'vertex' the full 3^dim-1.
    """
    if adjacency == "face":
        structure = ndimage.generate_binary_structure(S.dim, 1)
    elif adjacency == "vertex":
        structure = ndimage.generate_binary_structure(S.dim, S.dim)
    else:
        raise ValueError(f"unknown adjacency {adjacency!r}")
    labels, _ = ndimage.label(S.bits, structure=structure)
    labels = _merge_wrap(labels, S.bits, structure)
    return labels


def _merge_wrap(labels: np.ndarray, bits: np.ndarray, structure) -> np.ndarray:
    """Union labels across periodic boundaries."""
    n = labels.max()
    if n == 0:
        return labels
    parent = np.arange(n + 1)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    dim = bits.ndim
    offsets = np.argwhere(structure) - 1
    for off in offsets:
        if np.all(off == 0):
            continue
        rolled = np.roll(labels, tuple(-off), axis=tuple(range(dim)))
        # only pairs straddling a boundary are new information, but unioning
        # all adjacent pairs is harmless and simpler
        mask = (labels > 0) & (rolled > 0)
        if not mask.any():
            continue
        pairs = np.unique(np.stack([labels[mask], rolled[mask]], axis=1), axis=0)
        for a, b in pairs:
            union(int(a), int(b))
    roots = np.array([find(i) for i in range(n + 1)])
    # compact labels deterministically
    uniq = np.unique(roots[1:])
    remap = np.zeros(n + 1, dtype=labels.dtype)
    remap[uniq] = np.arange(1, len(uniq) + 1)
    return remap[roots[labels]]


def component_sizes(labels: np.ndarray) -> np.ndarray:
    """Sizes indexed by label (entry 0 is the unmarked count)."""
    return np.bincount(labels.ravel())


def decompose_lambda01(S: GridSet, adjacency: str = "face") -> tuple[GridSet, GridSet]:
    """Split into the union of singleton components and the rest.

    Exact partition of the bitset: the first part collects cells whose
    connected component (at this resolution) is a single cell.
    """
    labels = connected_components(S, adjacency)
    sizes = component_sizes(labels)
    singleton = np.zeros_like(S.bits)
    mask = labels > 0
    singleton[mask] = sizes[labels[mask]] == 1
    l0 = GridSet(S.resolution, S.dim, singleton, {"kind": "lambda0"})
    l1 = GridSet(S.resolution, S.dim, S.bits & ~singleton, {"kind": "lambda1"})
    return l0, l1


def local_arc_test(F, S: GridSet, x, side: str, arc_len: float,
                   n_samples: int = 64) -> bool:
    """Do all samples of the local stable/unstable arc through x fall in S?

    Grid-scale test of W^{s/u}_loc(x) being contained in the set.  Requires a
    two-dimensional map exposing local manifold arcs.
    """
    if S.dim != 2:
        raise ManifoldUnavailable("local arc test implemented for 2D maps only")
    if side not in ("stable", "unstable"):
        raise ValueError("side must be 'stable' or 'unstable'")
    arc = _local_arc(F, np.asarray(x, dtype=float), side, arc_len, n_samples)
    return bool(np.all(S.contains(arc)))


def _local_arc(F, x, side, arc_len, n_samples):
    if hasattr(F, "local_manifold_arc"):
        return F.local_manifold_arc(x, side, arc_len, n_samples)
    if isinstance(F, ToralAutomorphism):
        direction = F.direction("u" if side == "unstable" else "s")
        ts = np.linspace(-arc_len / 2, arc_len / 2, n_samples)
        return wrap(x + ts[:, None] * direction)
    raise ManifoldUnavailable(f"{type(F).__name__} provides no local manifolds")


def invariance_defect(F, S: GridSet) -> float:
    """Fraction of retained set samples whose image leaves the 1-cell dilation.

    Uses the sample cloud stored by orbit_closure (cell centers are not on the
    underlying set, so mapping them would charge the grid quantization to the
    dynamics).
    """
    samples = S.meta.get("samples")
    if samples is None:
        samples = S.cell_centers()
    dil = S.dilate(1)
    inside = dil.contains(F.apply(samples))
    return 1.0 - float(np.count_nonzero(inside)) / len(inside)
