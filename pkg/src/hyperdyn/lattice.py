"""Loop subgroups of the fundamental group, chain propagation, saturation.

The objects here realize the linear-case machinery behind the main coverage
experiment:

* ``gamma_delta`` builds the subgroup of Z^n generated by delta-adapted loops
  through the basepoint: cells of a grid set at torus distance < delta form a
  graph; every non-tree edge of a spanning tree closes a loop whose lifted
  displacement is a lattice vector.
* ``projection_density`` measures how densely the unstable-coordinate image of
  that subgroup fills a window of the expanding line.
* chains of nearby set points propagate through the linear bracket
  (``propagate_chain``), which in eigencoordinates literally copies
  components, so the chain collapses onto the direct bracket of its endpoints.
* ``bracket_saturate`` closes a grid set under brackets of nearby cells; since
  the bracket of two cell centers at integer offset o is the first center
  shifted by the constant vector P_sc(o/N), one saturation round is a handful
  of boolean rolls of the bitset, which keeps the fixpoint iteration exact and
  order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BasepointMissing, EmptyChain, GraphTooLarge
from .gridsets import GridSet
from .torus import ToralAutomorphism, wrap

MAX_GRAPH_CELLS = 2_000_000


# -- integer lattice algebra -------------------------------------------------

def hermite_normal_form(vectors) -> np.ndarray:
    """Row-style HNF basis of the subgroup of Z^n generated by the rows.

    Exact integer arithmetic (Python ints).  Result rows are nonzero, in
    echelon form with positive pivots, and entries above each pivot reduced to
    [0, pivot); this canonical form makes equality of subgroups a plain array
    comparison.
    """
    rows = [[int(v) for v in row] for row in np.atleast_2d(np.asarray(vectors, dtype=object))
            if any(int(v) for v in row)]
    if not rows:
        return np.zeros((0, np.atleast_2d(np.asarray(vectors)).shape[1]), dtype=np.int64)
    n = len(rows[0])
    basis: list[list[int]] = []
    work = list(rows)
    col = 0
    while col < n and work:
        pivots = [r for r in work if r[col] != 0]
        rest = [r for r in work if r[col] == 0]
        if not pivots:
            col += 1
            continue
        # euclidean reduction on the column
        while len(pivots) > 1:
            pivots.sort(key=lambda r: abs(r[col]))
            p = pivots[0]
            reduced = [p]
            for r in pivots[1:]:
                q = r[col] // p[col]
                new = [a - q * b for a, b in zip(r, p)]
                (reduced if new[col] != 0 else rest).append(new)
            pivots = reduced
            if len(pivots) == 1:
                break
        p = pivots[0]
        if p[col] < 0:
            p = [-a for a in p]
        basis.append(p)
        work = rest
        col += 1
    # reduce entries above pivots, left pivot columns first so that spillover
    # into later columns is cleaned up by the later pivots
    for i in range(len(basis)):
        pcol = next(j for j, v in enumerate(basis[i]) if v != 0)
        pval = basis[i][pcol]
        for k in range(i):
            q = basis[k][pcol] // pval
            if q:
                basis[k] = [a - q * b for a, b in zip(basis[k], basis[i])]
    return np.array(basis, dtype=np.int64)


def lattice_contains(basis: np.ndarray, vector) -> bool:
    """Exact membership of an integer vector in the row-span over Z."""
    v = [int(x) for x in vector]
    for row in basis:
        row = [int(x) for x in row]
        pcol = next((j for j, val in enumerate(row) if val != 0), None)
        if pcol is None:
            continue
        if v[pcol] % row[pcol] != 0:
            return False
        q = v[pcol] // row[pcol]
        v = [a - q * b for a, b in zip(v, row)]
    return not any(v)


@dataclass(frozen=True)
class LatticeSubgroup:
    """Subgroup of Z^n with its generators and canonical HNF basis."""

    generators: np.ndarray
    basis: np.ndarray

    @classmethod
    def from_generators(cls, generators) -> "LatticeSubgroup":
        gens = np.atleast_2d(np.asarray(generators, dtype=np.int64))
        if gens.size == 0:
            gens = gens.reshape(0, 3)
        return cls(generators=gens, basis=hermite_normal_form(gens) if len(gens) else
                   np.zeros((0, gens.shape[1]), dtype=np.int64))

    @property
    def rank(self) -> int:
        return len(self.basis)

    @property
    def dim(self) -> int:
        return self.generators.shape[1] if self.generators.size else self.basis.shape[1]

    def index(self) -> int | None:
        """Index in Z^n for full-rank subgroups, else None (infinite)."""
        if self.rank != self.dim:
            return None
        return abs(int(round(float(np.linalg.det(self.basis.astype(float))))))

    def contains(self, vector) -> bool:
        return lattice_contains(self.basis, vector)

    def contains_subgroup(self, other: "LatticeSubgroup") -> bool:
        return all(self.contains(row) for row in other.basis)

    def to_report(self) -> dict:
        return {
            "generators": self.generators.tolist(),
            "hnf_basis": self.basis.tolist(),
            "rank": self.rank,
            "index": self.index(),
        }


# -- delta-adapted loops ------------------------------------------------------

@dataclass(frozen=True)
class LoopClass:
    """A loop at the basepoint realized by a chain of set cells within delta."""

    basepoint: np.ndarray
    displacement: np.ndarray  # element of Z^n
    witness_cells: np.ndarray  # cell indices along the loop


def _sphere_offsets(dim: int, max_norm: float) -> np.ndarray:
    r = int(np.floor(max_norm))
    rng = np.arange(-r, r + 1)
    grids = np.meshgrid(*([rng] * dim), indexing="ij")
    offs = np.stack([g.ravel() for g in grids], axis=-1)
    norms = np.linalg.norm(offs, axis=1)
    keep = (norms > 0) & (norms < max_norm)
    offs = offs[keep]
    order = np.lexsort(offs.T[::-1])
    return offs[order]


def gamma_delta(S: GridSet, x0, delta: float, max_loops: int = 200_000,
                return_loops: bool = False):
    """Subgroup generated by delta-adapted loops of a grid set at x0.

    Builds the graph on marked cells with edges between cells at torus
    distance < delta (cell centers), takes a BFS spanning tree rooted at x0's
    cell carrying integer lift displacements (in cell units), and reads one
    lattice element off every non-tree edge.  Monotone in delta by
    construction: a larger delta only adds edges.
    """
    n = S.resolution
    x0_cell = tuple(S.cell_of(np.asarray(x0, dtype=float)))
    if not S.bits[x0_cell]:
        raise BasepointMissing(f"basepoint cell {x0_cell} is not in the set")
    if S.popcount() > MAX_GRAPH_CELLS:
        raise GraphTooLarge(f"{S.popcount()} cells exceed the graph bound")
    offsets = _sphere_offsets(S.dim, delta * n)
    shape = S.bits.shape

    # BFS with integer lift bookkeeping: dis[cell] = lifted displacement of the
    # tree path from the root, in cell units
    visited = np.zeros(shape, dtype=bool)
    dis = np.zeros(shape + (S.dim,), dtype=np.int64)
    parent = -np.ones(shape + (1,), dtype=np.int64)  # flat index of parent
    visited[x0_cell] = True
    frontier = np.array([x0_cell], dtype=np.int64)
    windings: list[tuple] = []
    seen = set()
    loops: list[LoopClass] = []
    while len(frontier):
        nxt = []
        for off in offsets:
            nb = np.mod(frontier + off, n)
            marked = S.bits[tuple(nb.T)]
            if not marked.any():
                continue
            fr = frontier[marked]
            nb = nb[marked]
            new = ~visited[tuple(nb.T)]
            if new.any():
                tgt, src = nb[new], fr[new]
                # deduplicate targets discovered twice in this batch
                flat = np.ravel_multi_index(tuple(tgt.T), shape)
                _, first = np.unique(flat, return_index=True)
                tgt, src = tgt[first], src[first]
                tgt_idx = tuple(tgt.T)
                visited[tgt_idx] = True
                dis[tgt_idx] = dis[tuple(src.T)] + off
                parent[tgt_idx + (0,)] = np.ravel_multi_index(tuple(src.T), shape)
                nxt.append(tgt)
            # every edge closes a loop via the tree; tree edges give winding 0,
            # which is skipped, so no bookkeeping of edge types is needed
            w = dis[tuple(fr.T)] + off - dis[tuple(nb.T)]
            assert not np.any(w % n), "loop displacement not a lattice vector"
            w = w // n
            nontrivial = np.flatnonzero(np.any(w != 0, axis=1))
            for k in nontrivial:
                key = tuple(int(v) for v in w[k])
                if key in seen or tuple(-v for v in key) in seen:
                    continue
                seen.add(key)
                windings.append(key)
                if return_loops:
                    loops.append(_reconstruct_loop(parent, shape, n, np.asarray(x0, float),
                                                   fr[k], nb[k], np.array(key)))
                if len(windings) >= max_loops:
                    break
        if len(windings) >= max_loops:
            break
        frontier = np.vstack(nxt) if nxt else np.empty((0, S.dim), dtype=np.int64)

    group = LatticeSubgroup.from_generators(np.array(windings, dtype=np.int64).reshape(-1, S.dim))
    if return_loops:
        return group, loops
    return group


def _tree_path(parent, shape, cell) -> list[tuple]:
    path = [tuple(int(v) for v in cell)]
    while True:
        p = int(parent[path[-1] + (0,)])
        if p < 0:
            break
        path.append(tuple(int(v) for v in np.unravel_index(p, shape)))
    return path


def _reconstruct_loop(parent, shape, n, x0, cell_a, cell_b, winding) -> LoopClass:
    to_a = _tree_path(parent, shape, cell_a)  # cell_a .. root
    to_b = _tree_path(parent, shape, cell_b)
    cells = np.array(list(reversed(to_a)) + to_b, dtype=np.int64)
    return LoopClass(basepoint=np.asarray(x0), displacement=np.asarray(winding, dtype=np.int64),
                     witness_cells=cells)


# -- projection density -------------------------------------------------------

def projection_density(group: LatticeSubgroup, A: ToralAutomorphism,
                       window: float = 1.0, budget: int = 10_000) -> dict:
    """Gap statistics of the unstable coordinates of lattice points mod window.

    Enumerates integer combinations of the HNF basis with coefficients of
    increasing sup-norm until the budget is exhausted, projects them on the
    expanding line, and reports the sorted positions and maximal circular gap.
    Density evidence is the max gap tending to zero with growing budget.
    """
    if group.rank == 0:
        return {"positions": np.array([0.0]), "max_gap": window, "count": 1}
    r = group.rank
    m = 0
    while (2 * (m + 1) + 1) ** r <= budget:
        m += 1
    rng = np.arange(-m, m + 1)
    coeff = np.stack(np.meshgrid(*([rng] * r), indexing="ij"), axis=-1).reshape(-1, r)
    vectors = coeff @ group.basis
    coords = A.proj_unstable(vectors.astype(float)).ravel()
    pos = np.sort(np.mod(coords, window))
    pos = np.unique(pos)
    gaps = np.diff(np.concatenate([pos, [pos[0] + window]]))
    return {"positions": pos, "max_gap": float(gaps.max()), "count": len(pos),
            "budget_used": len(vectors)}


# -- chains and brackets ------------------------------------------------------

@dataclass(frozen=True)
class Chain:
    """Finite sequence of lifted points with its measured relation bound.

    epsilon is the max over consecutive pairs of the larger of the expanding
    coordinate difference and the sup-norm of the contracting ones.
    """

    points: np.ndarray
    epsilon: float

    def __len__(self):
        return len(self.points)


def make_chain(points, A: ToralAutomorphism) -> Chain:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise EmptyChain("a chain needs at least two points")
    return Chain(points=pts, epsilon=chain_epsilon(pts, A))


def chain_epsilon(pts: np.ndarray, A: ToralAutomorphism) -> float:
    diffs = np.diff(pts, axis=0)
    eig = A.to_eigen(diffs)
    e_u = np.max(np.abs(eig[:, list(A.unstable)]), axis=1)
    e_sc = np.max(np.abs(eig[:, list(A.contracting)]), axis=1)
    return float(np.max(np.maximum(e_u, e_sc)))


def propagate_chain(A: ToralAutomorphism, chain: Chain,
                    record_epsilons: bool = False):
    """Shorten the chain by bracketing consecutive points until one remains.

    Each round replaces x_0..x_n by the brackets of consecutive pairs; in
    eigencoordinates a bracket copies components, so each round preserves the
    consecutive displacement bounds exactly and the final point equals the
    direct bracket of the original endpoints.
    """
    pts = chain.points.copy()
    if len(pts) < 2:
        raise EmptyChain("chain too short to propagate")
    epsilons = [chain.epsilon]
    while len(pts) > 1:
        pts = A.bracket(pts[:-1], pts[1:])
        if record_epsilons and len(pts) > 1:
            epsilons.append(chain_epsilon(pts, A))
    result = pts[0]
    if record_epsilons:
        return result, epsilons
    return result


# -- bitset saturation --------------------------------------------------------

def _bracket_cell_shifts(A: ToralAutomorphism, resolution: int, delta_p: float):
    """(offset, bracket-cell shift) pairs for all cell offsets within delta_p.

    For cells c and c + o the bracket of the two centers is the first center
    plus P_sc * o / N, so the bracket cell is c shifted by the constant
    integer vector floor(1/2 + P_sc * o).
    """
    offsets = _sphere_offsets(A.dim, delta_p * resolution)
    proj = A.contracting_projector()
    shifts = np.floor(0.5 + offsets @ proj.T).astype(np.int64)
    return offsets, shifts


def bracket_saturate(A: ToralAutomorphism, S: GridSet, delta_p: float,
                     rounds: int = 64, history: list | None = None) -> GridSet:
    """Smallest grid superset of S closed under brackets of delta_p-close cells.

    Pure bitset computation: one round ORs, for every admissible offset o, the
    pairwise-marked mask rolled by the bracket shift.  Stops at the fixpoint
    or after ``rounds``; appends per-round coverage to ``history`` if given.
    """
    n = S.resolution
    offsets, shifts = _bracket_cell_shifts(A, n, delta_p)
    bits = S.bits.copy()
    axes = tuple(range(S.dim))
    for _ in range(rounds):
        new = bits.copy()
        for off, sh in zip(offsets, shifts):
            pair = bits & np.roll(bits, tuple(-off), axis=axes)
            new |= np.roll(pair, tuple(sh), axis=axes)
        if history is not None:
            history.append(float(np.count_nonzero(new)) / new.size)
        if np.array_equal(new, bits):
            break
        bits = new
    return GridSet(n, S.dim, bits, {"kind": "saturation", "delta_p": delta_p})


def lps_violation_witness(A: ToralAutomorphism, S: GridSet, delta_p: float):
    """First pair of delta_p-close marked cells whose bracket cell is unmarked.

    Returns (x, y, bracket_point) as torus points, or None when the set is
    bracket-closed at this resolution: evidence (not proof) of local product
    structure.
    """
    n = S.resolution
    offsets, shifts = _bracket_cell_shifts(A, n, delta_p)
    axes = tuple(range(S.dim))
    for off, sh in zip(offsets, shifts):
        pair = S.bits & np.roll(S.bits, tuple(-off), axis=axes)
        viol = pair & ~np.roll(S.bits, tuple(-sh), axis=axes)
        if viol.any():
            c = np.argwhere(viol)[0]
            x = (c + 0.5) / n
            y = wrap((c + off + 0.5) / n)
            return x, y, wrap(A.bracket(x, (c + off + 0.5) / n))
    return None


def map_grid_set(A: ToralAutomorphism, S: GridSet) -> GridSet:
    """Image of a grid set at cell-center sampling (for equivariance checks)."""
    out = GridSet.empty(S.resolution, S.dim, kind="mapped")
    if S.popcount():
        out.mark(A.apply(S.cell_centers()))
    return out
