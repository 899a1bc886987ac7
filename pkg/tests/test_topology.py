"""Level graph construction: counts, addresses, identifications, refinement."""

import numpy as np
import pytest

from fractalfields import (ResourceLimitError, build_level, canonical_address,
                           refine_values, sierpinski_gasket, unit_interval)


def test_gasket_counts():
    spec = sierpinski_gasket()
    for m in range(5):
        g = build_level(spec, m)
        assert g.n_cells == 3 ** m
        assert g.n_edges == 3 ** (m + 1)
        # corner identifications: 3 * (3^m + 1) / 2 distinct vertices
        assert g.n_vertices == 3 * (3 ** m + 1) // 2


def test_interval_counts():
    spec = unit_interval()
    for m in range(7):
        g = build_level(spec, m)
        assert g.n_cells == 2 ** m
        assert g.n_edges == 2 ** m
        assert g.n_vertices == 2 ** m + 1


def test_boundary_vertices_come_first():
    spec = sierpinski_gasket()
    g = build_level(spec, 3)
    assert g.boundary_ids == (0, 1, 2)
    for corner in (1, 2, 3):
        vid = g.index[((), corner)]
        assert vid == corner - 1
        assert np.allclose(g.coords[vid], spec.boundary_coords[corner - 1])


def test_canonical_address_closure():
    spec = sierpinski_gasket()
    # identified pairs at depth 1: corner b of cell a meets corner a of cell b
    for a in (1, 2, 3):
        for b in (1, 2, 3):
            if a == b:
                continue
            left = canonical_address(spec, (a,), b)
            right = canonical_address(spec, (b,), a)
            assert left == right
    # idempotent, and plain corners reduce to the empty word
    assert canonical_address(spec, (), 2) == ((), 2)
    assert canonical_address(spec, (1, 1), 1) == ((), 1)


def test_cells_are_triangles_with_distinct_corners():
    g = build_level(sierpinski_gasket(), 3)
    for row in g.cell_vertices:
        assert len(set(int(v) for v in row)) == 3
    # each cell carries exactly k edges, each edge belongs to one cell
    counts = np.bincount(g.edge_cell, minlength=g.n_cells)
    assert np.all(counts == 3)
    for u, v, c in zip(g.edge_u, g.edge_v, g.edge_cell):
        corners = set(int(x) for x in g.cell_vertices[c])
        assert int(u) in corners and int(v) in corners


def test_vertex_index_is_consistent():
    g = build_level(sierpinski_gasket(), 2)
    for i, addr in enumerate(g.vertices):
        assert g.index[addr] == i
    assert list(g.vertices) == sorted(g.vertices)


def test_address_budget_enforced():
    with pytest.raises(ResourceLimitError):
        build_level(sierpinski_gasket(), 6, max_addresses=100)


def test_refine_values_interval_midpoints():
    spec = unit_interval()
    vals = refine_values(spec, [0.0, 1.0], 0, 1)
    g1 = build_level(spec, 1)
    x = g1.coords[:, 0]
    assert np.allclose(vals, np.where(np.isclose(x, 0.5), 0.5, x))

    # two rounds of refinement keep the linear profile exactly
    vals = refine_values(spec, [0.0, 1.0], 0, 3)
    g3 = build_level(spec, 3)
    assert np.allclose(vals, g3.coords[:, 0], atol=1e-15)


def test_refine_values_keeps_old_vertices():
    spec = sierpinski_gasket()
    rng = np.random.default_rng(5)
    g2 = build_level(spec, 2)
    coarse = rng.normal(size=g2.n_vertices)
    fine = refine_values(spec, coarse, 2, 3)
    g3 = build_level(spec, 3)
    for addr, val in zip(g2.vertices, coarse):
        assert fine[g3.index[addr]] == val


def test_refine_values_rejects_bad_arguments():
    spec = unit_interval()
    with pytest.raises(ValueError):
        refine_values(spec, [0.0, 1.0], 1, 0)
    with pytest.raises(ValueError):
        refine_values(spec, [0.0, 1.0], 0, 1, mode="spline")
