"""Monotone divergence-form solvers, structure probes, nondivergence Picard."""

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from fractalfields import (DiscreteFunction, IncompatibleDataError,
                           MonotoneCoefficient, SolverConvergenceError,
                           form_for, gradient, self_similar_measure,
                           sierpinski_gasket, solve_divergence_form,
                           solve_nondivergence, solve_p_laplace, unit_interval,
                           verify_conditions, vertex_weights,
                           weighted_energy_measure)

SG = sierpinski_gasket()
IV = unit_interval()


def zero_mean_datum(measure, seed, amplitude=1.0):
    rng = np.random.default_rng(seed)
    d = vertex_weights(measure)
    vals = amplitude * rng.uniform(-1.0, 1.0, measure.graph.n_vertices)
    vals -= np.dot(d, vals) / d.sum()
    return DiscreteFunction(measure.graph, vals)


def test_p2_matches_saddle_point_solve():
    m = self_similar_measure(IV, 6, np.array([0.5, 0.5]))
    f = zero_mean_datum(m, 0)
    u, report = solve_p_laplace(f, 2, m, tol=1e-12)
    assert report.converged

    form = form_for(m.graph)
    d = vertex_weights(m)
    dcol = sp.csc_matrix(d.reshape(-1, 1))
    kkt = sp.bmat([[form.stiffness, dcol], [dcol.T, None]], format="csc")
    ref = spla.spsolve(kkt, np.concatenate([-d * f.values, [0.0]]))
    assert np.max(np.abs(u.values - ref[:m.graph.n_vertices])) < 1e-10


def test_solution_scales_with_coefficient():
    # sigma = 2 halves the p=2 solution exactly
    m = self_similar_measure(SG, 2, np.full(3, 1.0 / 3.0))
    f = zero_mean_datum(m, 8)
    twice = MonotoneCoefficient.from_scale(
        lambda dens: 2.0 * np.ones_like(dens), name="double")
    u2, _ = solve_p_laplace(f, 2, m, tol=1e-12)
    uc, rep = solve_divergence_form(twice, f, m, tol=1e-12)
    assert rep.converged
    assert np.max(np.abs(uc.values - 0.5 * u2.values)) < 1e-10


def test_p4_homogeneity_and_restart_agreement():
    m = self_similar_measure(SG, 2, np.full(3, 1.0 / 3.0))
    f = zero_mean_datum(m, 1, amplitude=0.5)
    base, rep = solve_p_laplace(f, 4, m, tol=1e-12)
    assert rep.converged and rep.residual < 1e-12

    lam = 8.0
    scaled, _ = solve_p_laplace(lam * f, 4, m, tol=1e-12)
    pred = lam ** (1.0 / 3.0) * base.values
    assert np.max(np.abs(scaled.values - pred)) < 1e-7 * np.max(np.abs(pred))

    rng = np.random.default_rng(2)
    for _ in range(3):
        again, _ = solve_p_laplace(f, 4, m, tol=1e-12,
                                   x0=rng.uniform(-1.0, 1.0, m.graph.n_vertices))
        assert np.max(np.abs(again.values - base.values)) < 1e-8


def test_weak_form_residual_of_solution():
    # <sigma grad u, grad phi> + <f, phi>_d = 0 for all phi, checked on a basis
    m = self_similar_measure(SG, 2, np.full(3, 1.0 / 3.0))
    f = zero_mean_datum(m, 12, amplitude=0.3)
    u, _ = solve_p_laplace(f, 3, m, tol=1e-12)
    d = vertex_weights(m)
    gu = gradient(u)
    dens = weighted_energy_measure(gu).masses / m.masses
    sigma = dens ** 0.5
    worst = 0.0
    for j in range(m.graph.n_vertices):
        phi = np.zeros(m.graph.n_vertices)
        phi[j] = 1.0
        pairing = float(np.dot(sigma, weighted_energy_measure(
            gu, gradient(DiscreteFunction(m.graph, phi))).masses))
        worst = max(worst, abs(pairing + d[j] * f.values[j]))
    assert worst < 1e-9


def test_dirichlet_tuple_constraint():
    m = self_similar_measure(SG, 2, np.full(3, 1.0 / 3.0))
    rng = np.random.default_rng(3)
    f = DiscreteFunction(m.graph, rng.uniform(-1.0, 1.0, m.graph.n_vertices))
    fixed = (0, 1, 2, 7)
    u, rep = solve_p_laplace(f, 3, m, constraint=("dirichlet", fixed), tol=1e-11)
    assert rep.converged
    assert np.all(u.values[list(fixed)] == 0.0)


def test_incompatible_data_is_refused():
    m = self_similar_measure(SG, 2, np.full(3, 1.0 / 3.0))
    bad = DiscreteFunction(m.graph, np.ones(m.graph.n_vertices))
    with pytest.raises(IncompatibleDataError):
        solve_p_laplace(bad, 2, m)
    f = zero_mean_datum(m, 4)
    with pytest.raises(IncompatibleDataError):
        solve_divergence_form(MonotoneCoefficient.p_laplace(2), f, m,
                              constraint=None)


def test_convergence_failure_carries_report():
    m = self_similar_measure(SG, 2, np.full(3, 1.0 / 3.0))
    f = zero_mean_datum(m, 5)
    with pytest.raises(SolverConvergenceError) as info:
        solve_p_laplace(f, 4, m, tol=1e-13, max_iter=2)
    assert info.value.report is not None
    assert info.value.report.iterations <= 2
    assert not info.value.report.converged


def test_coefficient_factory_validation():
    with pytest.raises(ValueError):
        MonotoneCoefficient.p_laplace(1.5)
    ident = MonotoneCoefficient.p_laplace(2)
    assert ident.linear
    quart = MonotoneCoefficient.p_laplace(4)
    dens = np.array([0.25, 1.0, 4.0])
    assert np.allclose(quart.scale(dens), dens)
    assert np.allclose(quart.dscale(dens), np.ones_like(dens))
    assert np.allclose(quart.potential(dens), dens ** 2 / 4.0)


def test_verify_conditions_flags_bad_coefficients():
    m = self_similar_measure(IV, 4, np.array([0.5, 0.5]))
    good = verify_conditions(MonotoneCoefficient.p_laplace(2), m, probes=60,
                             seed=1)
    assert good.ok

    flipped = MonotoneCoefficient.from_scale(
        lambda dens: -np.ones_like(dens), name="sign-flip")
    bad = verify_conditions(flipped, m, probes=40, seed=1)
    assert not bad.monotonicity["passed"]
    assert not bad.ok

    m_sg = self_similar_measure(SG, 2, np.full(3, 1.0 / 3.0))
    parity = MonotoneCoefficient.from_scale(
        lambda dens: 1.0 + 0.5 * (np.floor(1e6 * dens) % 2), name="parity")
    osc = verify_conditions(parity, m_sg, probes=60, seed=3)
    assert not osc.hemicontinuity["passed"]


def test_nondivergence_constant_drift():
    m = self_similar_measure(SG, 2, np.full(3, 1.0 / 3.0))
    u, rep = solve_nondivergence(lambda dens: np.full_like(dens, 2.0), 5.0, m,
                                 tol=1e-12)
    # constants solve (K + rho M) u = -2 M 1 exactly: u = -2/rho
    assert np.max(np.abs(u.values + 0.4)) < 1e-12
    assert rep.converged
    assert rep.extras["cap_satisfied"] in (True, None)
    if rep.extras["apriori_cap"] is not None:
        assert rep.extras["graph_norm"] <= rep.extras["apriori_cap"] + 1e-12


def test_nondivergence_nonlinear_drift_converges():
    m = self_similar_measure(SG, 2, np.full(3, 1.0 / 3.0))
    u, rep = solve_nondivergence(lambda dens: 0.2 * dens + 0.1, 4.0, m,
                                 tol=1e-11)
    assert rep.converged and rep.residual < 1e-11
    assert np.all(np.isfinite(u.values))


def test_nondivergence_guards():
    m = self_similar_measure(SG, 2, np.full(3, 1.0 / 3.0))
    with pytest.raises(ValueError):
        solve_nondivergence(lambda dens: dens, 0.0, m)
    with pytest.raises(SolverConvergenceError):
        solve_nondivergence(lambda dens: np.full_like(dens, 2.0), 5.0, m,
                            tol=1e-12, max_iter=1)
