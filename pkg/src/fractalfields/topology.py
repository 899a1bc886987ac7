"""Symbolic cell structure and level graphs for finitely ramified fractals.

A level-m cell is a word over the contraction-map alphabet, a vertex is an
equivalence class of (word, corner) addresses.  Two addresses describe the
same point exactly when they reduce to the same canonical form under two
rewrites: trailing letters equal to the corner are stripped (each map fixes
its own corner), and the level-1 gluing rule is applied to the innermost
letter.  All identification is symbolic; floating point enters only through
the 2-D plot coordinates, which no numerical kernel reads.
"""

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import product

import numpy as np

from .errors import ResourceLimitError

DEFAULT_ADDRESS_BUDGET = 500_000


@dataclass(frozen=True)
class FractalSpec:
    """Defining data of a self-similar fractal with finitely many gluing points.

    identifications lists pairs ((i, a), (j, b)) meaning map i sends corner a
    to the same point as map j sends corner b.  The rule is stored once per
    pair; the symmetric closure is built internally.
    """

    name: str
    n_maps: int
    n_corners: int
    renormalization: Fraction
    identifications: tuple
    boundary_coords: tuple
    contraction: float = 0.5

    def __post_init__(self):
        if not (0 < self.renormalization < 1):
            raise ValueError("renormalization factor must lie in (0, 1)")
        if self.n_maps < 2 or self.n_corners < 2:
            raise ValueError("need at least two maps and two corners")
        seen = set()
        for (i, a), (j, b) in self.identifications:
            for idx, corner in ((i, a), (j, b)):
                if not (1 <= idx <= self.n_maps and 1 <= corner <= self.n_corners):
                    raise ValueError("identification indices out of range")
            if i == j:
                raise ValueError("gluing must join distinct maps")
            if a == i or b == j:
                raise ValueError("gluing may not involve a map's own fixed corner")
            key = frozenset(((i, a), (j, b)))
            if key in seen:
                raise ValueError("duplicate identification")
            seen.add(key)
        if len(self.boundary_coords) != self.n_corners:
            raise ValueError("need one plot coordinate per corner")


def sierpinski_gasket():
    """Three maps contracting toward the corners of a triangle, glued at midpoints."""
    return FractalSpec(
        name="sg",
        n_maps=3,
        n_corners=3,
        renormalization=Fraction(3, 5),
        identifications=(((1, 2), (2, 1)), ((1, 3), (3, 1)), ((2, 3), (3, 2))),
        boundary_coords=((0.0, 0.0), (1.0, 0.0), (0.5, 0.5 * np.sqrt(3.0))),
    )


def unit_interval():
    """Two maps halving [0, 1], glued at the midpoint."""
    return FractalSpec(
        name="interval",
        n_maps=2,
        n_corners=2,
        renormalization=Fraction(1, 2),
        identifications=(((1, 2), (2, 1)),),
        boundary_coords=((0.0, 0.0), (1.0, 0.0)),
    )


SPEC_REGISTRY = {"sg": sierpinski_gasket, "interval": unit_interval}


@lru_cache(maxsize=None)
def _identification_map(spec):
    table = {}
    for (i, a), (j, b) in spec.identifications:
        table[(i, a)] = (j, b)
        table[(j, b)] = (i, a)
    return table


def _reduce(word, corner):
    while word and word[-1] == corner:
        word = word[:-1]
    return word, corner


def canonical_address(spec, word, corner):
    """Smallest equivalent (word, corner) pair under the rewrite closure."""
    table = _identification_map(spec)
    start = _reduce(tuple(word), corner)
    seen = {start}
    stack = [start]
    while stack:
        w, a = stack.pop()
        if not w:
            continue
        alt = table.get((w[-1], a))
        if alt is not None:
            cand = _reduce(w[:-1] + (alt[0],), alt[1])
            if cand not in seen:
                seen.add(cand)
                stack.append(cand)
    return min(seen)


def _point_of(spec, word, corner):
    x, y = spec.boundary_coords[corner - 1]
    c = spec.contraction
    for letter in reversed(word):
        qx, qy = spec.boundary_coords[letter - 1]
        x = c * x + (1.0 - c) * qx
        y = c * y + (1.0 - c) * qy
    return x, y


def _cell_edge_pairs(k):
    # Corners are joined cyclically; for k == 2 the cycle degenerates to one edge.
    if k == 2:
        return ((0, 1),)
    return tuple((i, (i + 1) % k) for i in range(k))


@dataclass(eq=False)
class LevelGraph:
    """Level-m approximation graph.  Treated as immutable once built."""

    spec: FractalSpec
    level: int
    vertices: tuple          # canonical (word, corner) per vertex, sorted
    addresses: tuple         # all full-length (word, corner) addresses per vertex
    coords: np.ndarray       # (n_vertices, 2), plotting only
    cells: tuple             # level-m words in lexicographic order
    cell_vertices: np.ndarray  # (n_cells, n_corners) vertex ids, corner order
    edge_u: np.ndarray
    edge_v: np.ndarray
    edge_cell: np.ndarray

    def __post_init__(self):
        self.index = {addr: i for i, addr in enumerate(self.vertices)}
        for arr in (self.coords, self.cell_vertices, self.edge_u, self.edge_v, self.edge_cell):
            arr.setflags(write=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.edge_u)

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def boundary_ids(self):
        # Canonical boundary addresses ((), a) sort before every word, so the
        # corner vertices always occupy indices 0 .. n_corners-1.
        return tuple(range(self.spec.n_corners))

    def conductance(self):
        return float(self.spec.renormalization) ** (-self.level)


def _check_connected(n_vertices, edge_u, edge_v):
    parent = list(range(n_vertices))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in zip(edge_u, edge_v):
        ru, rv = find(int(u)), find(int(v))
        if ru != rv:
            parent[ru] = rv
    return len({find(i) for i in range(n_vertices)}) == 1


@lru_cache(maxsize=64)
def _build_level_cached(spec, m, budget):
    k = spec.n_corners
    n_addresses = spec.n_maps ** m * k
    if n_addresses > budget:
        raise ResourceLimitError(
            f"level {m} needs {n_addresses} addresses, budget is {budget}"
        )

    words = list(product(range(1, spec.n_maps + 1), repeat=m))
    groups = {}
    for word in words:
        for corner in range(1, k + 1):
            canon = canonical_address(spec, word, corner)
            groups.setdefault(canon, []).append((word, corner))

    canon_sorted = tuple(sorted(groups))
    index = {addr: i for i, addr in enumerate(canon_sorted)}
    addresses = tuple(tuple(groups[c]) for c in canon_sorted)
    coords = np.array([_point_of(spec, w, a) for w, a in canon_sorted], dtype=float)

    cells = tuple(words)
    cell_vertices = np.array(
        [[index[canonical_address(spec, w, a)] for a in range(1, k + 1)] for w in words],
        dtype=np.int64,
    ).reshape(len(words), k)

    pairs = _cell_edge_pairs(k)
    eu, ev, ec = [], [], []
    seen_pairs = set()
    for ci, w in enumerate(cells):
        for s, t in pairs:
            u = int(cell_vertices[ci, s])
            v = int(cell_vertices[ci, t])
            if u == v:
                raise ValueError(f"identification collapses an edge in cell {w}")
            key = (min(u, v), max(u, v))
            if key in seen_pairs:
                raise ValueError(f"edge {key} shared by two cells, spec is not finitely ramified")
            seen_pairs.add(key)
            eu.append(u)
            ev.append(v)
            ec.append(ci)

    edge_u = np.array(eu, dtype=np.int64)
    edge_v = np.array(ev, dtype=np.int64)
    edge_cell = np.array(ec, dtype=np.int64)
    if not _check_connected(len(canon_sorted), edge_u, edge_v):
        raise ValueError("level graph is disconnected, check the identification rule")

    return LevelGraph(
        spec=spec,
        level=m,
        vertices=canon_sorted,
        addresses=addresses,
        coords=coords,
        cells=cells,
        cell_vertices=cell_vertices,
        edge_u=edge_u,
        edge_v=edge_v,
        edge_cell=edge_cell,
    )


def build_level(spec, m, max_addresses=DEFAULT_ADDRESS_BUDGET):
    """Construct the level-m graph.  Budget-checked before any enumeration."""
    if m < 0:
        raise ValueError("level must be nonnegative")
    return _build_level_cached(spec, int(m), int(max_addresses))


def cells_at_level(graph):
    """List of (word, corner-ordered vertex ids) for every level-m cell."""
    return [(w, tuple(int(i) for i in graph.cell_vertices[ci]))
            for ci, w in enumerate(graph.cells)]


@lru_cache(maxsize=64)
def _copy_plan(spec, coarse_level, budget):
    coarse = build_level(spec, coarse_level, budget)
    fine = build_level(spec, coarse_level + 1, budget)
    old_ids = np.array([fine.index[c] for c in coarse.vertices], dtype=np.int64)

    is_old = np.zeros(fine.n_vertices, dtype=bool)
    is_old[old_ids] = True
    coarse_of = {c: i for i, c in enumerate(coarse.vertices)}

    new_ids, src_flat, src_counts = [], [], []
    for vid in range(fine.n_vertices):
        if is_old[vid]:
            continue
        sources = set()
        for word, _ in fine.addresses[vid]:
            for corner in range(1, spec.n_corners + 1):
                canon = canonical_address(spec, word, corner)
                if canon in coarse_of:
                    sources.add(coarse_of[canon])
        new_ids.append(vid)
        ordered = sorted(sources)
        src_flat.extend(ordered)
        src_counts.append(len(ordered))

    return (old_ids,
            np.array(new_ids, dtype=np.int64),
            np.array(src_flat, dtype=np.int64),
            np.array(src_counts, dtype=np.int64))


def refine_values(spec, values, from_level, to_level, mode="copy",
                  max_addresses=DEFAULT_ADDRESS_BUDGET):
    """Transport vertex values from level m to level n >= m.

    Existing vertices keep their values; each new vertex receives the mean of
    the coarse vertices found among the corners of its containing cells.  The
    result is only meant as an initial guess for solvers, never as data.
    """
    if mode != "copy":
        raise ValueError(f"unknown refinement mode {mode!r}")
    if to_level < from_level:
        raise ValueError("cannot refine to a coarser level")
    vals = np.asarray(values, dtype=float)
    for t in range(from_level, to_level):
        old_ids, new_ids, src_flat, src_counts = _copy_plan(spec, t, max_addresses)
        fine = build_level(spec, t + 1, max_addresses)
        out = np.empty(fine.n_vertices, dtype=float)
        out[old_ids] = vals
        if len(new_ids):
            sums = np.add.reduceat(vals[src_flat], np.concatenate(([0], np.cumsum(src_counts)[:-1])))
            out[new_ids] = sums / src_counts
        vals = out
    return vals
