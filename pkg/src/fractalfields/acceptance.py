"""Invariant suite: the identities and bounds the package is built around.

Each check is a standalone callable returning a CheckResult; run_all executes
them in a fixed order.  The CLI verify command and the release test suite
both drive this module, so a failure shows up identically in either place.
Tolerances are part of the contract and are stated next to each check.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .energy import (DiscreteFunction, energy, energy_measure, extend_to_level,
                     form_for, integrate_edge_average, lumped_inner,
                     poincare_constant, self_similar_measure, spectrum,
                     vertex_weights)
from .fields import (VectorField, direct_integral_check, field_inner,
                     field_norm, fiber_statistics, gradient, kusuoka_matrices,
                     lp_field_norm, weighted_energy_measure)
from .solvers import MonotoneCoefficient, solve_p_laplace, verify_conditions
from .spde import NoiseModel, simulate, uniqueness_probe
from .topology import build_level, sierpinski_gasket, unit_interval


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _random_function(rng, graph, amplitude=0.3):
    return DiscreteFunction(graph, rng.uniform(-amplitude, amplitude,
                                               graph.n_vertices))


def _random_field(rng, graph, terms=2, amplitude=0.5, normalized=True):
    parts = []
    for _ in range(terms):
        base = _random_function(rng, graph, amplitude)
        weights = rng.uniform(-1.0, 1.0, graph.n_cells)
        parts.append((weights, base))
    v = VectorField.from_cell_terms(graph, parts)
    if normalized:
        nrm = field_norm(v)
        if nrm > 0:
            v = (1.0 / nrm) * v
    return v


def check_renormalization():
    """Harmonic extension keeps the renormalized energy constant (rel 1e-12)."""
    spec = sierpinski_gasket()
    rng = np.random.default_rng(101)
    g0 = build_level(spec, 0)
    form0 = form_for(g0)
    worst = 0.0
    for _ in range(50):
        h = _random_function(rng, g0, amplitude=1.0)
        e0 = energy(form0, h)
        for m in range(1, 7):
            gm = build_level(spec, m)
            em = energy(form_for(gm), extend_to_level(h, m))
            worst = max(worst, abs(em - e0) / abs(e0))
    return CheckResult(
        "renormalization-exactness", worst < 1e-12,
        f"max relative energy drift {worst:.3e} over levels 0..6 "
        f"(factor 3/5 per level), 50 boundary data")


def check_carre_du_champ():
    """2 int f dG(g,h) = E(fg,h) + E(fh,g) - E(gh,f), abs 1e-10."""
    graph = build_level(sierpinski_gasket(), 4)
    form = form_for(graph)
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(100):
        f = _random_function(rng, graph)
        g = _random_function(rng, graph)
        h = _random_function(rng, graph)
        edge_masses, _ = energy_measure(form, g, h)
        lhs = 2.0 * integrate_edge_average(form, f, edge_masses)
        rhs = energy(form, f * g, h) + energy(form, f * h, g) - energy(form, g * h, f)
        worst = max(worst, abs(lhs - rhs))
    return CheckResult(
        "carre-du-champ-identity", worst < 1e-10,
        f"max abs deviation {worst:.3e} over 100 triples at level 4")


def check_total_mass():
    """The energy measure of a pair has total mass E(g,h), abs 1e-12."""
    graph = build_level(sierpinski_gasket(), 4)
    form = form_for(graph)
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(100):
        g = _random_function(rng, graph)
        h = _random_function(rng, graph)
        worst = max(worst, abs(energy_measure(form, g, h)[1].total()
                               - energy(form, g, h)))
    return CheckResult(
        "energy-measure-total-mass", worst < 1e-12,
        f"max abs gap {worst:.3e} over 100 pairs at level 4")


def check_gradient_isometry():
    """||grad f||_H^2 equals E(f), abs 1e-12."""
    graph = build_level(sierpinski_gasket(), 4)
    form = form_for(graph)
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(100):
        f = _random_function(rng, graph)
        worst = max(worst, abs(field_inner(gradient(f), gradient(f))
                               - energy(form, f)))
    return CheckResult(
        "gradient-isometry", worst < 1e-12,
        f"max abs gap {worst:.3e} over 100 functions at level 4")


def check_direct_integral():
    """Global vs fiberwise field pairing through independent routes, 1e-10."""
    graph = build_level(sierpinski_gasket(), 4)
    rng = np.random.default_rng(505)
    worst = 0.0
    for _ in range(100):
        v = _random_field(rng, graph)
        w = _random_field(rng, graph)
        worst = max(worst, direct_integral_check(v, w)["discrepancy"])
    return CheckResult(
        "direct-integral-isometry", worst < 1e-10,
        f"max pairing discrepancy {worst:.3e} over 100 unit field pairs "
        f"at level 4")


def check_kusuoka_structure():
    """Unit trace (1e-13), cell martingale (1e-12), eigenvalue collapse."""
    spec = sierpinski_gasket()
    trace_worst = 0.0
    mart_worst = 0.0
    grams = {}
    for n in range(1, 8):
        gram, metric = kusuoka_matrices(spec, n)
        grams[n] = gram
        tr = np.einsum("cii->c", metric.matrices)
        trace_worst = max(trace_worst, float(np.max(np.abs(tr - 1.0))))
    for n in range(1, 7):
        coarse = grams[n]
        fine = grams[n + 1]
        parent = {w: i for i, w in enumerate(coarse.graph.cells)}
        acc = np.zeros_like(coarse.matrices)
        idx = np.array([parent[w[:-1]] for w in fine.graph.cells])
        np.add.at(acc, idx, fine.matrices)
        mart_worst = max(mart_worst, float(np.max(np.abs(acc - coarse.matrices))))
    medians = [row[2] for row in fiber_statistics(spec, range(2, 8))]
    decreasing = all(b < a for a, b in zip(medians, medians[1:]))
    passed = trace_worst < 1e-13 and mart_worst < 1e-12 and decreasing
    return CheckResult(
        "kusuoka-structure", passed,
        f"trace gap {trace_worst:.3e}, martingale gap {mart_worst:.3e}, "
        f"median small eigenvalue {medians[0]:.4f} -> {medians[-1]:.4f} "
        f"{'strictly decreasing' if decreasing else 'NOT decreasing'} "
        f"over levels 2..7")


def check_product_rule():
    """E(f, gu) = int g dG(u,f) + int u dG(f,g), abs 1e-10."""
    graph = build_level(sierpinski_gasket(), 4)
    form = form_for(graph)
    rng = np.random.default_rng(606)
    worst = 0.0
    for _ in range(100):
        f = _random_function(rng, graph)
        g = _random_function(rng, graph)
        u = _random_function(rng, graph)
        lhs = energy(form, f, g * u)
        rhs = (integrate_edge_average(form, g, energy_measure(form, u, f)[0])
               + integrate_edge_average(form, u, energy_measure(form, f, g)[0]))
        worst = max(worst, abs(lhs - rhs))
    return CheckResult(
        "product-rule-functional", worst < 1e-10,
        f"max abs deviation {worst:.3e} over 100 triples at level 4")


def _interval_oracle(graph, measure, fvals, p):
    """Brute-force 1-D reference: integrate the flux equation by shooting.

    On the interval the discrete p-Laplace system with zero Dirichlet ends
    says the edge flux changes by exactly the vertex load across each
    interior vertex.  Fixing the leftmost flux C determines everything;
    the root of the right-endpoint value in C is the solution.
    """
    order = np.argsort(graph.coords[:, 0])
    loads = (vertex_weights(measure) * fvals)[order]
    n_edges = graph.n_vertices - 1
    h = 1.0 / n_edges
    cum = np.concatenate([[0.0], np.cumsum(loads[1:-1])])
    expo = 1.0 / (p - 1.0)

    def right_end(c):
        flux = c + cum
        return h * float(np.sum(np.sign(flux) * np.abs(flux) ** expo))

    span = float(np.max(np.abs(cum))) + 1.0
    c0 = brentq(right_end, -span, span, xtol=1e-15, rtol=8.9e-16)
    du = h * np.sign(c0 + cum) * np.abs(c0 + cum) ** expo
    u_sorted = np.concatenate([[0.0], np.cumsum(du)])
    u = np.empty_like(u_sorted)
    u[order] = u_sorted
    return u


def check_p_laplace_solver():
    """Linear agreement, 1-D oracle, homogeneity, uniqueness of the solver."""
    rng = np.random.default_rng(707)
    sg = sierpinski_gasket()
    graph = build_level(sg, 3)
    measure = self_similar_measure(sg, 3, np.full(3, 1.0 / 3.0))
    d = vertex_weights(measure)
    form = form_for(graph)
    fvals = rng.uniform(-1.0, 1.0, graph.n_vertices)
    fvals -= np.dot(d, fvals) / d.sum()
    f = DiscreteFunction(graph, fvals)

    u2, _ = solve_p_laplace(f, 2, measure, tol=1e-12)
    dcol = sp.csc_matrix(d.reshape(-1, 1))
    kkt = sp.bmat([[form.stiffness, dcol], [dcol.T, None]], format="csc")
    ref = spla.spsolve(kkt, np.concatenate([-d * fvals, [0.0]]))[:graph.n_vertices]
    gap_linear = float(np.max(np.abs(u2.values - ref)))

    interval = unit_interval()
    gi = build_level(interval, 8)
    mi = self_similar_measure(interval, 8, np.array([0.5, 0.5]))
    x = gi.coords[:, 0]
    datum = np.sin(2.0 * np.pi * x) + 0.25 * np.cos(3.0 * np.pi * x)
    u3, _ = solve_p_laplace(DiscreteFunction(gi, datum), 3, mi,
                            constraint="dirichlet", tol=1e-11)
    oracle = _interval_oracle(gi, mi, datum, 3)
    gap_oracle = float(np.max(np.abs(u3.values - oracle)))

    lam = 4.0
    base, _ = solve_p_laplace(f, 3, measure, tol=1e-12)
    scaled, _ = solve_p_laplace(lam * f, 3, measure, tol=1e-12)
    pred = lam ** 0.5 * base.values
    gap_homog = (float(np.max(np.abs(scaled.values - pred)))
                 / max(float(np.max(np.abs(pred))), 1e-300))

    sols = []
    for _ in range(5):
        x0 = rng.uniform(-1.0, 1.0, graph.n_vertices)
        sols.append(solve_p_laplace(f, 3, measure, tol=1e-12, x0=x0)[0].values)
    gap_unique = max(float(np.max(np.abs(a - b)))
                     for i, a in enumerate(sols) for b in sols[i + 1:])

    passed = (gap_linear < 1e-10 and gap_oracle < 1e-5
              and gap_homog < 1e-7 and gap_unique < 1e-7)
    return CheckResult(
        "p-laplace-solver", passed,
        f"linear gap {gap_linear:.3e}, 1-D oracle sup {gap_oracle:.3e}, "
        f"homogeneity {gap_homog:.3e}, 5-init spread {gap_unique:.3e}")


def check_coefficient_conditions():
    """Structure probes accept the p-Laplace family, reject a sign flip."""
    sg = sierpinski_gasket()
    measure = self_similar_measure(sg, 3, np.full(3, 1.0 / 3.0))
    r2 = verify_conditions(MonotoneCoefficient.p_laplace(2), measure,
                           probes=200, seed=7)
    r4 = verify_conditions(MonotoneCoefficient.p_laplace(4), measure,
                           probes=200, seed=7)
    flipped = MonotoneCoefficient.from_scale(
        lambda dens: -np.ones_like(dens), p=2.0, name="sign-flip")
    rbad = verify_conditions(flipped, measure, probes=50, seed=7)
    passed = r2.ok and r4.ok and not rbad.monotonicity["passed"]
    return CheckResult(
        "coefficient-conditions", passed,
        f"p=2 ok={r2.ok}, p=4 ok={r4.ok} "
        f"(c0={r4.growth['c0']:.3f}, worst mono {r4.monotonicity['worst_normalized']:.1e}), "
        f"sign-flip rejected={not rbad.monotonicity['passed']}, 200 probes")


def check_spde_integrator():
    """Linear decay order, pathwise contraction, bit-reproducibility."""
    sg = sierpinski_gasket()
    m2 = self_similar_measure(sg, 2, np.full(3, 1.0 / 3.0))
    form2 = form_for(m2.graph)
    d2 = vertex_weights(m2)
    spec2 = spectrum(form2, m2, 2)
    lam1 = float(spec2.eigenvalues[1])
    e1 = DiscreteFunction(m2.graph, spec2.eigenvectors[:, 1])
    ident = MonotoneCoefficient.identity()

    T = max(0.04, np.ceil(2.0 / lam1 / 0.01) * 0.01)
    dts = np.array([1e-2, 5e-3, 2.5e-3, 1.25e-3])
    errs = []
    for dt in dts:
        res = simulate(ident, e1, None, T, dt, m2, tol=1e-13)
        ref = np.exp(-lam1 * T) * e1.values
        diff = res.snapshots[-1] - ref
        errs.append(np.sqrt(lumped_inner(d2, diff, diff)))
    errs = np.array(errs)
    slope = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
    order_ok = 0.85 <= slope <= 1.15 and np.all(np.diff(errs[::-1]) > 0)

    m3 = self_similar_measure(sg, 3, np.full(3, 1.0 / 3.0))
    growths = {}
    for p in (2, 4):
        noise = NoiseModel.from_spectrum(m3, seed=11, n_modes=5)
        rep = uniqueness_probe(MonotoneCoefficient.p_laplace(p), noise, m3,
                               T=0.3, dt=0.01, trials=2, seed=5, tol=1e-12)
        growths[p] = rep.max_growth
    contract_ok = all(g <= 1.0 + 1e-10 for g in growths.values())

    noise = NoiseModel.from_spectrum(m3, seed=23, n_modes=5)
    u0 = DiscreteFunction(m3.graph, np.zeros(m3.graph.n_vertices))
    ra = simulate(ident, u0, noise, 0.2, 0.01, m3, tol=1e-12)
    rb = simulate(ident, u0, noise, 0.2, 0.01, m3, tol=1e-12)
    repro_ok = (np.array_equal(ra.snapshots, rb.snapshots)
                and np.array_equal(ra.l2_norms, rb.l2_norms))

    passed = order_ok and contract_ok and repro_ok
    return CheckResult(
        "spde-integrator", passed,
        f"decay order {slope:.3f} (want 1 +- 0.15), max growth factors "
        f"p2={growths[2]:.12f} p4={growths[4]:.12f}, "
        f"bit-reproducible={repro_ok}")


def check_poincare():
    """c_P lambda_1 = 1 at p = 2; sampled p = 4 ratios below the certificate."""
    sg = sierpinski_gasket()
    measure = self_similar_measure(sg, 3, np.full(3, 1.0 / 3.0))
    graph = measure.graph
    form = form_for(graph)
    d = vertex_weights(measure)

    pc2 = poincare_constant(form, measure, p=2)
    gap2 = abs(pc2.certified * pc2.lambda_1 - 1.0)

    pc4 = poincare_constant(form, measure, p=4, seed=3)
    rng = np.random.default_rng(808)
    worst_ratio = 0.0
    for _ in range(100):
        fvals = rng.uniform(-1.0, 1.0, graph.n_vertices)
        fvals -= np.dot(d, fvals) / d.sum()
        f = DiscreteFunction(graph, fvals)
        gamma = energy_measure(form, f)[1].masses
        dens = gamma / measure.masses
        ep = float(np.sum(dens ** 2 * measure.masses))
        nrm = float(np.sum(d * fvals ** 4))
        worst_ratio = max(worst_ratio, nrm / ep)
    bounded = worst_ratio <= pc4.certified and pc4.sampled <= pc4.certified
    passed = gap2 < 1e-12 and bounded
    return CheckResult(
        "poincare-constants", passed,
        f"|c_P*lambda_1 - 1| = {gap2:.3e}; p=4 sampled ratio "
        f"{worst_ratio:.3e} vs certified {pc4.certified:.3e} over 100 trials")


def check_field_hoelder():
    """|int dG(v,w)| <= ||v||_p ||w||_q over random fields and exponents."""
    graph = build_level(sierpinski_gasket(), 3)
    measure = self_similar_measure(sierpinski_gasket(), 3, np.full(3, 1.0 / 3.0))
    rng = np.random.default_rng(909)
    worst = -np.inf
    violated = False
    for trial in range(100):
        p = 2.0 if trial % 10 == 0 else float(10.0 ** rng.uniform(np.log10(1.1), np.log10(6.0)))
        q = p / (p - 1.0)
        v = _random_field(rng, graph, normalized=False)
        w = _random_field(rng, graph, normalized=False)
        lhs = abs(weighted_energy_measure(v, w).total())
        rhs = lp_field_norm(v, measure, p) * lp_field_norm(w, measure, q)
        slackful = rhs * (1.0 + 1e-12)
        if lhs > slackful:
            violated = True
        if rhs > 0:
            worst = max(worst, lhs / rhs)
    return CheckResult(
        "field-hoelder", not violated,
        f"max ratio |pairing| / (||v||_p ||w||_q) = {worst:.6f} "
        f"over 100 trials, slack 1e-12")


CHECKS = (
    check_renormalization,
    check_carre_du_champ,
    check_total_mass,
    check_gradient_isometry,
    check_direct_integral,
    check_kusuoka_structure,
    check_product_rule,
    check_p_laplace_solver,
    check_coefficient_conditions,
    check_spde_integrator,
    check_poincare,
    check_field_hoelder,
)


def run_all():
    return [check() for check in CHECKS]
