"""Discrete 1-forms: finite sums of weighted gradients on a level graph.

A field is a formal sum of terms (weight, base function); the weight is a
scalar per cell, or per edge after multiplication by a vertex function.
Multiplying a field by a vertex function averages that function over the two
corners of each edge, the same convention the weighted energy integrals use,
and the one under which the product rule for gradients is exact at a fixed
level.  The fiber picture realizes each cell's gradient space in the frame
of the harmonic coordinates; the direct-integral check compares that route
against the global tensor expansion without sharing any assembly code.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FractalFieldsError
from .energy import (DiscreteFunction, energy_measure, form_for,
                     harmonic_coordinates, p_energy_from_cells, vertex_weights)


@dataclass(frozen=True)
class Term:
    cell_weights: object     # ndarray per cell, or None once edge-granular
    edge_weights: np.ndarray
    base: DiscreteFunction


class VectorField:
    """Formal sum of weighted gradients at one level."""

    def __init__(self, graph, terms):
        self.graph = graph
        for t in terms:
            if t.base.graph is not graph:
                raise ValueError("all terms must live on the same level graph")
        self.terms = tuple(terms)
        self._signal = None
        self._cell_gram = None

    @classmethod
    def from_cell_terms(cls, graph, weighted_bases):
        terms = []
        for weights, base in weighted_bases:
            w = np.asarray(weights, dtype=float)
            if w.shape != (graph.n_cells,):
                raise ValueError("cell weight vector does not match the cell count")
            terms.append(Term(w, w[graph.edge_cell], base))
        return cls(graph, terms)

    @property
    def cell_granular(self):
        return all(t.cell_weights is not None for t in self.terms)

    def edge_signal(self):
        """Aggregated edge amplitude sum_k w_k(e) (f_k(u) - f_k(v))."""
        if self._signal is None:
            form = form_for(self.graph)
            s = np.zeros(self.graph.n_edges)
            for t in self.terms:
                s += t.edge_weights * form.differences(t.base.values)
            self._signal = s
        return self._signal

    def times_function(self, f):
        """Module action of a vertex function, edge-endpoint averaged."""
        fv = f.values if isinstance(f, DiscreteFunction) else np.asarray(f, float)
        fbar = 0.5 * (fv[self.graph.edge_u] + fv[self.graph.edge_v])
        return VectorField(self.graph,
                           [Term(None, t.edge_weights * fbar, t.base) for t in self.terms])

    def scale_cells(self, sigma):
        """Multiply by a scalar per cell (stays cell-granular when possible)."""
        sig = np.asarray(sigma, dtype=float)
        if sig.shape != (self.graph.n_cells,):
            raise ValueError("scale vector does not match the cell count")
        sig_e = sig[self.graph.edge_cell]
        terms = []
        for t in self.terms:
            cw = None if t.cell_weights is None else t.cell_weights * sig
            terms.append(Term(cw, t.edge_weights * sig_e, t.base))
        return VectorField(self.graph, terms)

    def __add__(self, other):
        if other.graph is not self.graph:
            raise ValueError("level mismatch")
        return VectorField(self.graph, self.terms + other.terms)

    def __neg__(self):
        return VectorField(self.graph,
                           [Term(None if t.cell_weights is None else -t.cell_weights,
                                 -t.edge_weights, t.base) for t in self.terms])

    def __sub__(self, other):
        return self + (-other)

    def __rmul__(self, scalar):
        s = float(scalar)
        return VectorField(self.graph,
                           [Term(None if t.cell_weights is None else s * t.cell_weights,
                                 s * t.edge_weights, t.base) for t in self.terms])


def gradient(f):
    """The gradient field of a vertex function, unit weight on every cell."""
    return VectorField.from_cell_terms(f.graph, [(np.ones(f.graph.n_cells), f)])


def field_inner(v, w):
    """Pairing of two fields.

    For cell-granular fields this is the tensor expansion over term pairs,
    summed once over all cells; mixed or edge-granular fields fall back to the
    aggregated edge signals, which groups the same products differently.
    """
    if v.graph is not w.graph:
        raise ValueError("level mismatch")
    form = form_for(v.graph)
    if v.cell_granular and w.cell_granular:
        acc = 0.0
        for tv in v.terms:
            for tw in w.terms:
                cells = energy_measure(form, tv.base, tw.base)[1].masses
                acc += float(np.dot(tv.cell_weights * tw.cell_weights, cells))
        return acc
    return float(form.conductance * np.dot(v.edge_signal(), w.edge_signal()))


def weighted_energy_measure(v, w=None):
    """Cell measure of a field (sum of squares per cell, hence nonnegative)."""
    graph = v.graph
    form = form_for(graph)
    s = v.edge_signal()
    if w is None:
        masses = form.conductance * np.bincount(graph.edge_cell, weights=s * s,
                                                minlength=graph.n_cells)
        from .energy import CellMeasure
        return CellMeasure(graph, masses, nonneg=True, name="field")
    if w.graph is not graph:
        raise ValueError("level mismatch")
    t = w.edge_signal()
    masses = form.conductance * np.bincount(graph.edge_cell, weights=s * t,
                                            minlength=graph.n_cells)
    from .energy import CellMeasure
    return CellMeasure(graph, masses, nonneg=False, name="field")


def field_norm(v):
    return float(np.sqrt(weighted_energy_measure(v).total()))


# ---------------------------------------------------------------------------
# Divergence


@dataclass(eq=False)
class Divergence:
    """The functional u -> -<v, grad u>, with its assembled vertex vector."""

    graph: object
    vector: np.ndarray

    def __call__(self, u):
        uv = u.values if isinstance(u, DiscreteFunction) else np.asarray(u, float)
        return float(np.dot(self.vector, uv))

    def density(self, measure):
        """Vertex function representing the functional in the lumped L2 inner product."""
        d = vertex_weights(measure)
        if np.any(d <= 0):
            raise ValueError("measure gives a vertex zero weight")
        rho = self.vector / d
        residual = float(np.max(np.abs(d * rho - self.vector)))
        return DiscreteFunction(self.graph, rho), residual


def divergence(v):
    form = form_for(v.graph)
    flux = form.conductance * v.edge_signal()
    vec = np.zeros(v.graph.n_vertices)
    np.add.at(vec, v.graph.edge_u, -flux)
    np.add.at(vec, v.graph.edge_v, flux)
    return Divergence(v.graph, vec)


# ---------------------------------------------------------------------------
# Fiber metric (Kusuoka matrices)


@dataclass(eq=False)
class CellGram:
    """Per-cell Gram matrices of the harmonic coordinates."""

    graph: object
    matrices: np.ndarray     # (n_cells, k, k)


@dataclass(eq=False)
class FiberMetric:
    """Mass-normalized cell Gram matrices, unit trace by construction."""

    graph: object
    matrices: np.ndarray     # (n_cells, k, k)
    masses: np.ndarray       # Kusuoka cell masses
    eigenvalues: np.ndarray  # (n_cells, k), ascending


def kusuoka_matrices(spec, m):
    """Cell Grams of the harmonic coordinates and their normalized fiber metric."""
    from .topology import build_level
    graph = build_level(spec, m)
    form = form_for(graph)
    phis = harmonic_coordinates(spec, m)
    k = len(phis)
    mats = np.empty((graph.n_cells, k, k))
    for i in range(k):
        for j in range(i, k):
            cells = energy_measure(form, phis[i], phis[j])[1].masses
            mats[:, i, j] = cells
            mats[:, j, i] = cells
    masses = np.einsum("cii->c", mats)
    if np.any(masses <= 0):
        raise FractalFieldsError("zero-mass cell in the Kusuoka measure")
    Z = mats / masses[:, None, None]
    eigvals = np.linalg.eigvalsh(Z)
    return CellGram(graph, mats), FiberMetric(graph, Z, masses, eigvals)


def fiber_statistics(spec, levels):
    """Per-level min/median/max of the smaller fiber eigenvalue."""
    rows = []
    for m in levels:
        metric = kusuoka_matrices(spec, m)[1]
        small = metric.eigenvalues[:, 0]
        rows.append((m, float(np.min(small)), float(np.median(small)),
                     float(np.max(small))))
    return rows


# ---------------------------------------------------------------------------
# L_p norms of fields, p-energies


def lp_field_norm(v, measure, p):
    """L_p norm of the per-cell density of a field against a cell measure."""
    if not (p >= 1):
        raise ValueError("p must be at least 1 (or inf)")
    gamma = weighted_energy_measure(v).masses
    m = measure.masses
    bad = (m == 0) & (gamma > 0)
    if np.any(bad):
        if p == 2:
            pass   # the p = 2 norm never divides by the mass
        else:
            warnings.warn("field charges a zero-mass cell, norm is infinite")
            return float("inf")
    if p == 2:
        return float(np.sqrt(np.sum(gamma)))
    if np.isinf(p):
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = np.where(m > 0, gamma / np.where(m > 0, m, 1.0), 0.0)
        return float(np.sqrt(np.max(dens))) if dens.size else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(m > 0, gamma / np.where(m > 0, m, 1.0), 0.0)
    return float(np.sum(np.power(dens, 0.5 * p) * m) ** (1.0 / p))


def p_energy(f, measure, p, g=None):
    """The p-energy of a function, or the Gateaux pairing with a second one.

    The two-argument form weights the cross energy measure with the density
    of the first argument to the power p/2 - 1, which is exactly 1/p times
    the directional derivative of the one-argument form.
    """
    if p < 2:
        raise ValueError("p must be at least 2")
    form = form_for(f.graph)
    gamma = energy_measure(form, f)[1].masses
    m = measure.masses
    if np.any(m <= 0):
        raise ValueError("measure must give every cell positive mass")
    if g is None:
        return p_energy_from_cells(gamma, m, p)
    cross = energy_measure(form, f, g)[1].masses
    dens = gamma / m
    return float(np.sum(np.power(dens, 0.5 * p - 1.0) * cross))


# ---------------------------------------------------------------------------
# Direct integral check


def _frame_coordinates(spec, graph, mats, base):
    """Coefficients of a gradient in the per-cell harmonic frame."""
    form = form_for(graph)
    phis = harmonic_coordinates(spec, graph.level)
    k = len(phis)
    rhs = np.empty((graph.n_cells, k))
    for i in range(k):
        rhs[:, i] = energy_measure(form, phis[i], base)[1].masses
    if k == 1:
        return rhs / mats[:, :, 0]
    if k == 2:
        a = mats[:, 0, 0]
        b = mats[:, 0, 1]
        d = mats[:, 1, 1]
        det = a * d - b * b
        xi = np.empty_like(rhs)
        xi[:, 0] = (d * rhs[:, 0] - b * rhs[:, 1]) / det
        xi[:, 1] = (a * rhs[:, 1] - b * rhs[:, 0]) / det
        return xi
    return np.linalg.solve(mats, rhs[..., None])[..., 0]


def direct_integral_check(v, w):
    """Compare the global pairing with the fiberwise pairing of two fields.

    The global route expands over term pairs and sums cell energy measures;
    the fiberwise route expresses every gradient in the cell's harmonic frame
    and contracts against the cell Gram.  The two agree exactly in exact
    arithmetic; the report carries the floating-point discrepancy.
    """
    if v.graph is not w.graph:
        raise ValueError("level mismatch")
    if not (v.cell_granular and w.cell_granular):
        raise ValueError("the fiberwise route needs cell-granular fields")
    graph = v.graph
    spec = graph.spec

    global_pairing = field_inner(v, w)

    mats = kusuoka_matrices(spec, graph.level)[0].matrices
    k = mats.shape[1]

    def frame_vector(field):
        zeta = np.zeros((graph.n_cells, k))
        for t in field.terms:
            xi = _frame_coordinates(spec, graph, mats, t.base)
            zeta += t.cell_weights[:, None] * xi
        return zeta

    zv = frame_vector(v)
    zw = frame_vector(w)
    fiberwise = float(np.einsum("ci,cij,cj->", zv, mats, zw))

    return {"global": global_pairing,
            "fiberwise": fiberwise,
            "discrepancy": abs(global_pairing - fiberwise)}
