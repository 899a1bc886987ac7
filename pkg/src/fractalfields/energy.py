"""Graph energies, harmonic functions, energy measures and spectra.

The level-m energy is the conductance-weighted sum of squared edge
differences, with conductance r^-m fixed by the fractal's renormalization
factor.  Energy measures live on cells (every edge belongs to exactly one
cell), weighted integrals against vertex functions use edge-endpoint
averages, which is what makes the product-rule identities exact at every
level rather than only in the limit.
"""

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh

from .errors import FractalFieldsError
from .topology import build_level, canonical_address


@dataclass(eq=False)
class DiscreteFunction:
    """Vertex values on a level graph."""

    graph: object
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.graph.n_vertices,):
            raise ValueError("value vector does not match the graph")
        self.values = vals

    @property
    def level(self):
        return self.graph.level

    def __add__(self, other):
        return DiscreteFunction(self.graph, self.values + _vals(other))

    def __sub__(self, other):
        return DiscreteFunction(self.graph, self.values - _vals(other))

    def __mul__(self, other):
        return DiscreteFunction(self.graph, self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return DiscreteFunction(self.graph, -self.values)


def _vals(x):
    return x.values if isinstance(x, DiscreteFunction) else x


class EnergyForm:
    """Bilinear graph energy at a fixed level, with assembled stiffness."""

    def __init__(self, graph):
        self.graph = graph
        self.conductance = graph.conductance()
        n, e = graph.n_vertices, graph.n_edges
        rows = np.concatenate([np.arange(e), np.arange(e)])
        cols = np.concatenate([graph.edge_u, graph.edge_v])
        data = np.concatenate([np.ones(e), -np.ones(e)])
        self.incidence = sp.csr_matrix((data, (rows, cols)), shape=(e, n))
        self.stiffness = (self.conductance * (self.incidence.T @ self.incidence)).tocsr()

    def differences(self, values):
        return values[self.graph.edge_u] - values[self.graph.edge_v]


@lru_cache(maxsize=64)
def _form_cache(graph):
    return EnergyForm(graph)


def form_for(graph):
    """Shared EnergyForm instance for a cached level graph."""
    return _form_cache(graph)


def energy(form, f, g=None):
    """E(f, g) as the conductance-weighted sum of edge difference products."""
    df = form.differences(_vals(f))
    dg = df if g is None else form.differences(_vals(g))
    return float(form.conductance * np.dot(df, dg))


@dataclass(eq=False)
class CellMeasure:
    """Mass per level-m cell.  nonneg marks measures that are sums of squares."""

    graph: object
    masses: np.ndarray
    nonneg: bool
    name: str = ""

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        if m.shape != (self.graph.n_cells,):
            raise ValueError("mass vector does not match the cell count")
        if self.nonneg and np.any(m < 0):
            raise ValueError("negative mass in a measure flagged nonnegative")
        self.masses = m
        self.masses.setflags(write=False)

    def total(self):
        return float(np.sum(self.masses))


def energy_measure(form, f, g=None):
    """Edge-granular and cell-granular energy measure of a pair.

    Returns (edge_masses, CellMeasure).  The cell masses partition the total
    energy because every edge lies in exactly one cell.
    """
    graph = form.graph
    df = form.differences(_vals(f))
    dg = df if g is None else form.differences(_vals(g))
    edge_masses = form.conductance * df * dg
    cell = np.bincount(graph.edge_cell, weights=edge_masses, minlength=graph.n_cells)
    if g is None:
        # Recompute the diagonal as explicit squares so the nonneg flag is exact.
        cell = form.conductance * np.bincount(
            graph.edge_cell, weights=df * df, minlength=graph.n_cells)
        return edge_masses, CellMeasure(graph, cell, nonneg=True, name="energy")
    return edge_masses, CellMeasure(graph, cell, nonneg=False, name="energy")


def integrate_edge_average(form, weight, edge_masses):
    """Integral of a vertex function against an edge-granular measure.

    The weight is averaged over the two edge endpoints; this convention is
    what keeps the product-rule identities exact at a fixed level.
    """
    w = _vals(weight)
    wbar = 0.5 * (w[form.graph.edge_u] + w[form.graph.edge_v])
    return float(np.dot(wbar, edge_masses))


# ---------------------------------------------------------------------------
# Harmonic extension


@lru_cache(maxsize=None)
def _extension_matrix(spec):
    """Interior values of the level-1 energy minimizer, as a matrix on corner data."""
    g1 = build_level(spec, 1)
    form1 = EnergyForm(g1)
    K = form1.stiffness.toarray()
    k = spec.n_corners
    boundary = list(range(k))
    interior = list(range(k, g1.n_vertices))
    if not interior:
        return np.zeros((0, k)), ()
    KII = K[np.ix_(interior, interior)]
    KIB = K[np.ix_(interior, boundary)]
    mat = -np.linalg.solve(KII, KIB)
    interior_canon = tuple(g1.vertices[i] for i in interior)
    return mat, interior_canon


@lru_cache(maxsize=64)
def _extension_plan(spec, m):
    coarse = build_level(spec, m)
    fine = build_level(spec, m + 1)
    mat, interior_canon = _extension_matrix(spec)
    old_ids = np.array([fine.index[c] for c in coarse.vertices], dtype=np.int64)
    new_ids = np.empty((coarse.n_cells, len(interior_canon)), dtype=np.int64)
    for ci, w in enumerate(coarse.cells):
        for j, ((letter,), corner) in enumerate(interior_canon):
            new_ids[ci, j] = fine.index[canonical_address(spec, w + (letter,), corner)]
    flat = new_ids.ravel()
    if len(np.unique(flat)) != flat.size:
        raise FractalFieldsError("interior vertices shared between cells")
    return old_ids, new_ids, mat


def harmonic_extension(f):
    """Extend a level-m function to level m+1 by per-cell energy minimization.

    The local minimizer is solved from the level-1 stiffness once per spec and
    then applied cell by cell, so the energy of the extension equals the
    coarse energy exactly (that is what the renormalization factor encodes).
    """
    graph = f.graph
    spec = graph.spec
    fine = build_level(spec, graph.level + 1)
    old_ids, new_ids, mat = _extension_plan(spec, graph.level)
    out = np.empty(fine.n_vertices, dtype=float)
    out[old_ids] = f.values
    corner_vals = f.values[graph.cell_vertices]          # (n_cells, k)
    if new_ids.size:
        out[new_ids] = corner_vals @ mat.T
    return DiscreteFunction(fine, out)


def extend_to_level(f, to_level):
    """Chain of harmonic extensions up to the requested level."""
    g = f
    while g.graph.level < to_level:
        g = harmonic_extension(g)
    return g


def solve_dirichlet(graph, boundary):
    """Energy minimizer with prescribed values on a nonempty vertex set."""
    if not boundary:
        raise ValueError("empty boundary set, the Dirichlet problem is singular")
    form = form_for(graph)
    K = form.stiffness.tocsc()
    n = graph.n_vertices
    fixed = np.array(sorted(boundary), dtype=np.int64)
    fixed_vals = np.array([boundary[int(i)] for i in fixed], dtype=float)
    free = np.setdiff1d(np.arange(n), fixed)
    u = np.zeros(n)
    u[fixed] = fixed_vals
    if free.size:
        rhs = -K[np.ix_(free, fixed)] @ fixed_vals
        u[free] = spla.spsolve(K[np.ix_(free, free)], rhs)
        resid = np.abs((K @ u)[free])
        scale = form.conductance * max(1.0, float(np.max(np.abs(u))))
        if float(np.max(resid)) > 1e-10 * scale:
            raise FractalFieldsError("Dirichlet solve residual above tolerance")
    return DiscreteFunction(graph, u)


# ---------------------------------------------------------------------------
# Harmonic coordinates and measures


@lru_cache(maxsize=128)
def harmonic_coordinates(spec, m):
    """Energy-orthonormal harmonic coordinates at level m.

    Corner indicator data are projected to zero mean over the corner set and
    Gram-Schmidt orthonormalized in the energy inner product, then extended
    harmonically.  Extension preserves all cross energies, so orthonormality
    holds at every level, not just at level 0.
    """
    g0 = build_level(spec, 0)
    form0 = EnergyForm(g0)
    k = spec.n_corners
    coords = []
    for a in range(k - 1):
        seed = np.zeros(k)
        seed[a] = 1.0
        seed -= seed.mean()
        for prev in coords:
            seed = seed - energy(form0, seed, prev.values) * prev.values
        e = energy(form0, seed, seed)
        if e <= 0:
            raise FractalFieldsError("degenerate corner seed")
        coords.append(DiscreteFunction(g0, seed / np.sqrt(e)))
    return tuple(extend_to_level(phi, m) for phi in coords)


def kusuoka_measure(spec, m):
    """Sum of the energy measures of the harmonic coordinates."""
    graph = build_level(spec, m)
    form = form_for(graph)
    masses = np.zeros(graph.n_cells)
    for phi in harmonic_coordinates(spec, m):
        masses = masses + energy_measure(form, phi)[1].masses
    return CellMeasure(graph, masses, nonneg=True, name="kusuoka")


def general_energy_dominant_measure(form, pool):
    """Weighted sum of normalized energy measures of a finite function pool.

    Member n (1-based) is normalized to unit energy and enters with weight
    2^-n, so each member's energy measure has cell-wise density at most 2^n
    with respect to the result.  Zero-energy members are skipped with a
    warning and do not consume a weight.
    """
    if not pool:
        raise ValueError("empty pool")
    graph = form.graph
    masses = np.zeros(graph.n_cells)
    n = 0
    for idx, psi in enumerate(pool):
        e = energy(form, psi)
        if e < 1e-14:
            warnings.warn(f"pool member {idx} has zero energy, skipped")
            continue
        n += 1
        masses = masses + (0.5 ** n / e) * energy_measure(form, psi)[1].masses
    if n == 0:
        raise ValueError("all pool members have zero energy")
    return CellMeasure(graph, masses, nonneg=True, name="pool")


def self_similar_measure(spec, m, weights):
    """Product measure with one positive weight per contraction map."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (spec.n_maps,):
        raise ValueError("need one weight per map")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must sum to one")
    graph = build_level(spec, m)
    if m == 0:
        masses = np.ones(1)
    else:
        letters = np.array(graph.cells, dtype=np.int64)   # (n_cells, m)
        masses = np.prod(w[letters - 1], axis=1)
    return CellMeasure(graph, masses, nonneg=True,
                       name="self_similar[" + ",".join(f"{x:g}" for x in w) + "]")


def vertex_weights(measure):
    """Lumped vertex weights: each cell spreads its mass equally to its corners."""
    graph = measure.graph
    k = graph.spec.n_corners
    d = np.zeros(graph.n_vertices)
    contrib = np.repeat(measure.masses / k, k)
    np.add.at(d, graph.cell_vertices.ravel(), contrib)
    return d


def lumped_inner(weights, f, g):
    return float(np.sum(weights * _vals(f) * _vals(g)))


# ---------------------------------------------------------------------------
# Spectrum


@dataclass(eq=False)
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray   # columns, orthonormal in the measure inner product
    measure_name: str
    weights: np.ndarray
    method: str
    tol: float


DENSE_EIG_LIMIT = 2000


def laplacian(form, measure):
    """Stiffness matrix and lumped vertex weights of the weighted Laplacian."""
    d = vertex_weights(measure)
    if np.any(d <= 0):
        raise ValueError("measure gives a vertex zero weight, Laplacian undefined")
    return form.stiffness, d


def _fix_signs(vecs):
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        lead = np.argmax(np.abs(col))
        if col[lead] < 0:
            vecs[:, j] = -col
    return vecs


def spectrum(form, measure, k, dense_limit=DENSE_EIG_LIMIT, seed=0, tol=1e-10):
    """Smallest k eigenpairs of the measure-weighted Laplacian.

    Dense solve below dense_limit vertices, shift-invert Lanczos with a
    seeded start vector above it.  Eigenvectors come back measure-orthonormal
    with a deterministic sign convention.
    """
    K, d = laplacian(form, measure)
    n = form.graph.n_vertices
    if not (1 <= k <= n):
        raise ValueError(f"requested {k} eigenpairs of a {n}-vertex operator")
    if n <= dense_limit:
        s = 1.0 / np.sqrt(d)
        A = K.toarray() * s[:, None] * s[None, :]
        A = 0.5 * (A + A.T)
        vals, ys = eigh(A, subset_by_index=[0, k - 1])
        vecs = ys * s[:, None]
        method = "dense"
    else:
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(n)
        vals, vecs = spla.eigsh(K.tocsc(), k=k, M=sp.diags(d).tocsc(),
                                sigma=-1.0, which="LM", v0=v0)
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        method = "shift-invert"
    vecs = _fix_signs(np.ascontiguousarray(vecs))
    return SpectrumResult(eigenvalues=vals, eigenvectors=vecs,
                          measure_name=measure.name, weights=d, method=method, tol=tol)


# ---------------------------------------------------------------------------
# Poincare constants


@dataclass(eq=False)
class PoincareResult:
    p: float
    certified: float
    sampled: float
    lambda_1: float = None
    resistance_diameter: float = None


def p_energy_from_cells(gamma_cells, masses, p):
    """Sum of (cell density)^(p/2) against the measure."""
    if p == 2:
        return float(np.sum(gamma_cells))
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(masses > 0, gamma_cells / np.where(masses > 0, masses, 1.0), 0.0)
    return float(np.sum(np.power(dens, 0.5 * p) * masses))


def resistance_diameter(form):
    """Largest effective resistance between two vertices (dense pseudo-inverse)."""
    K = form.stiffness.toarray()
    G = np.linalg.pinv(K, hermitian=True)
    diag = np.diag(G)
    R = diag[:, None] + diag[None, :] - 2.0 * G
    return float(np.max(R))


def poincare_constant(form, measure, p=2, seed=0, starts=4, iters=150):
    """Best (p = 2) or certified (p > 2) constant c with ||f||_p^p <= c E_p(f).

    Functions are taken with zero mean against the measure.  For p = 2 the
    constant is exactly 1/lambda_1 of the weighted spectrum.  For p > 2 the
    certified upper bound chains the sup bound through the resistance
    diameter with a power-mean inequality; the sampled lower bound comes from
    projected gradient ascent on the Rayleigh-type quotient.
    """
    if p < 2:
        raise ValueError("p must be at least 2")
    graph = form.graph
    d = vertex_weights(measure)
    if p == 2:
        lam1 = float(spectrum(form, measure, 2).eigenvalues[1])
        c = 1.0 / lam1
        return PoincareResult(p=2.0, certified=c, sampled=c, lambda_1=lam1)

    diam = resistance_diameter(form)
    total = measure.total()
    certified = (diam * total) ** (0.5 * p)

    rng = np.random.default_rng(seed)
    dsum = float(d.sum())
    best = 0.0
    c = form.conductance
    for _ in range(starts):
        f = rng.standard_normal(graph.n_vertices)
        f -= np.dot(d, f) / dsum
        f /= max(np.sqrt(np.dot(d, f * f)), 1e-300)
        step = 0.2
        for _ in range(iters):
            df = form.differences(f)
            gamma = c * np.bincount(graph.edge_cell, weights=df * df,
                                    minlength=graph.n_cells)
            ep = p_energy_from_cells(gamma, measure.masses, p)
            nrm = float(np.sum(d * np.abs(f) ** p))
            if ep <= 0 or nrm <= 0:
                break
            best = max(best, nrm / ep)
            with np.errstate(divide="ignore"):
                dens = np.where(measure.masses > 0, gamma / measure.masses, 0.0)
            sigma_e = np.power(dens, 0.5 * p - 1.0)[graph.edge_cell]
            grad_ep = np.zeros_like(f)
            flux = c * sigma_e * df
            np.add.at(grad_ep, graph.edge_u, flux)
            np.add.at(grad_ep, graph.edge_v, -flux)
            grad = (d * np.abs(f) ** (p - 2) * f) / nrm - grad_ep / ep
            grad -= np.dot(d, grad) / dsum
            f = f + step * grad
            f /= max(np.sqrt(np.dot(d, f * f)), 1e-300)
    return PoincareResult(p=float(p), certified=certified, sampled=best,
                          resistance_diameter=diam)
