"""Counter-based noise, implicit Euler paths, moments, contraction probe."""

import numpy as np
import pytest

from fractalfields import (DiscreteFunction, IncompatibleDataError,
                           MonotoneCoefficient, NoiseModel, build_level,
                           form_for, lumped_inner, moment_stats,
                           self_similar_measure, sierpinski_gasket, simulate,
                           uniqueness_probe, vertex_weights)
from fractalfields.solvers import _solve_monotone

SG = sierpinski_gasket()
MEASURE = self_similar_measure(SG, 2, np.full(3, 1.0 / 3.0))
GRAPH = MEASURE.graph
IDENT = MonotoneCoefficient.p_laplace(2)


def make_noise(seed=42, n_modes=8):
    return NoiseModel.from_spectrum(MEASURE, seed, n_modes=n_modes)


def test_increments_are_reproducible_and_path_dependent():
    noise = make_noise()
    a = noise.increment(0, 5, 0.01)
    b = noise.increment(0, 5, 0.01)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, noise.increment(1, 5, 0.01))
    assert not np.array_equal(a, noise.increment(0, 6, 0.01))
    # a fresh model with the same seed reproduces the draws bit for bit
    again = make_noise()
    assert np.array_equal(a, again.increment(0, 5, 0.01))


def test_truncation_keeps_leading_mode_draws():
    noise = make_noise(n_modes=10)
    short = noise.truncate(5)
    d = vertex_weights(MEASURE)
    inc_full = noise.increment(3, 7, 0.01)
    inc_short = short.increment(3, 7, 0.01)
    # both increments share the coefficients of the first five modes, so the
    # difference is M-orthogonal to them
    lead = noise.modes[:, :5]
    gap = lead.T @ (d * (inc_full - inc_short))
    assert np.max(np.abs(gap)) < 1e-12
    tailcomp = noise.modes[:, 5:10].T @ (d * inc_short)
    assert np.max(np.abs(tailcomp)) < 1e-12


def test_covariance_decay_and_scaling():
    noise = make_noise()
    assert np.all(noise.eigenvalues > 0)
    assert np.allclose(noise.q, noise.eigenvalues ** -2.0)
    assert noise.tail_bound == 0.0

    quad = noise.scaled(4.0)
    assert np.allclose(quad.q, 4.0 * noise.q)
    assert np.array_equal(quad.increment(0, 0, 0.01),
                          2.0 * noise.increment(0, 0, 0.01))

    null = NoiseModel.null(GRAPH)
    assert np.array_equal(null.increment(0, 0, 0.01),
                          np.zeros(GRAPH.n_vertices))

    with pytest.raises(ValueError):
        noise.truncate(9)
    with pytest.raises(ValueError):
        noise.scaled(-1.0)
    with pytest.raises(ValueError):
        NoiseModel.from_spectrum(MEASURE, 0, n_modes=4,
                                 weights=np.array([1.0, -1.0, 1.0, 1.0]))


def test_mode_clipping_warns():
    with pytest.warns(UserWarning):
        NoiseModel.from_spectrum(MEASURE, 0, n_modes=50)


def test_zero_noise_norm_decays():
    rng = np.random.default_rng(9)
    u0 = DiscreteFunction(GRAPH, rng.uniform(-1.0, 1.0, GRAPH.n_vertices))
    for p in (2, 4):
        res = simulate(MonotoneCoefficient.p_laplace(p), u0, None, 0.1, 0.01,
                       MEASURE, tol=1e-12)
        assert np.all(np.diff(res.l2_norms) <= 1e-14)
        assert np.all(np.diff(res.p_energies) <= 1e-12)


def test_snapshot_bookkeeping():
    u0 = DiscreteFunction(GRAPH, np.zeros(GRAPH.n_vertices))
    res = simulate(IDENT, u0, make_noise(), 0.05, 0.01, MEASURE, stride=3,
                   tol=1e-11)
    assert list(res.snapshot_steps) == [0, 3, 5]
    assert res.l2_norms.shape == (6,)
    assert res.snapshots.shape == (3, GRAPH.n_vertices)
    assert np.allclose(res.times, [0.0, 0.03, 0.05])
    # logged norms match the stored snapshots
    d = vertex_weights(MEASURE)
    final = res.snapshots[-1]
    assert abs(res.l2_norms[-1] - np.sqrt(lumped_inner(d, final, final))) < 1e-14


def test_grid_and_data_guards():
    u0 = DiscreteFunction(GRAPH, np.zeros(GRAPH.n_vertices))
    with pytest.raises(ValueError):
        simulate(IDENT, u0, None, 0.05, 0.012, MEASURE)
    with pytest.raises(ValueError):
        simulate(IDENT, u0, None, -1.0, 0.01, MEASURE)
    other = self_similar_measure(SG, 3, np.full(3, 1.0 / 3.0))
    with pytest.raises(IncompatibleDataError):
        simulate(IDENT, u0, make_noise(), 0.05, 0.01, other)
    with pytest.raises(IncompatibleDataError):
        simulate(IDENT, DiscreteFunction(other.graph,
                                         np.zeros(other.graph.n_vertices)),
                 None, 0.05, 0.01, MEASURE)
    with pytest.raises(ValueError):
        moment_stats(IDENT, u0, make_noise(), 0.05, 0.01, MEASURE, paths=1)


def test_step_resolve_is_independent_of_initial_guess():
    noise = make_noise()
    rng = np.random.default_rng(13)
    u = rng.uniform(-0.5, 0.5, GRAPH.n_vertices)
    dt = 0.01
    target = u + noise.increment(0, 0, dt)
    form = form_for(GRAPH)
    quart = MonotoneCoefficient.p_laplace(4)
    load = np.zeros(GRAPH.n_vertices)
    a, _ = _solve_monotone(form, MEASURE, quart, load, alpha=1.0 / dt,
                           target=target, x0=target, tol=1e-12)
    b, _ = _solve_monotone(form, MEASURE, quart, load, alpha=1.0 / dt,
                           target=target, x0=np.zeros(GRAPH.n_vertices),
                           tol=1e-12)
    assert np.max(np.abs(a.values - b.values)) < 1e-8


def test_moment_stats_match_scalar_ou_recursions():
    # with the identity coefficient each noise mode is an independent scalar
    # AR(1): c_{k+1} = (c_k + xi_k) / (1 + lambda dt), so the second moment of
    # the state is a known function of (lambda_j, q_j, dt, K)
    noise = make_noise()
    u0 = DiscreteFunction(GRAPH, np.zeros(GRAPH.n_vertices))
    T, dt = 0.4, 0.004
    table = moment_stats(IDENT, u0, noise, T, dt, MEASURE, paths=150,
                         stride=25, tol=1e-11)
    lam, q = noise.eigenvalues, noise.q
    K = round(T / dt)
    shrink = 1.0 / (1.0 + lam * dt)
    exact = (q * dt / ((1.0 + lam * dt) ** 2 - 1.0)
             * (1.0 - shrink ** (2 * K))).sum()
    mc = table.mean_sq_norm[-1]
    assert abs(mc - exact) / exact < 0.15
    assert abs(mc - exact) < 4.0 * table.se_sq_norm[-1]
    assert table.times[-1] == pytest.approx(T)


def test_covariance_scaling_quadruples_second_moments():
    noise = make_noise()
    u0 = DiscreteFunction(GRAPH, np.zeros(GRAPH.n_vertices))
    base = moment_stats(IDENT, u0, noise, 0.2, 0.005, MEASURE, paths=10,
                        stride=40, tol=1e-11)
    quad = moment_stats(IDENT, u0, noise.scaled(4.0), 0.2, 0.005, MEASURE,
                        paths=10, stride=40, tol=1e-11)
    # same counter-based draws, linear dynamics: the ratio is exact
    ratio = quad.mean_sq_norm[-1] / base.mean_sq_norm[-1]
    assert abs(ratio - 4.0) < 1e-9


def test_truncation_doubling_stays_under_tail_bound():
    noise = make_noise(n_modes=8)
    half = noise.truncate(4)
    u0 = DiscreteFunction(GRAPH, np.zeros(GRAPH.n_vertices))
    m_full = moment_stats(IDENT, u0, noise, 0.2, 0.005, MEASURE, paths=40,
                          stride=40, tol=1e-11)
    m_half = moment_stats(IDENT, u0, half, 0.2, 0.005, MEASURE, paths=40,
                          stride=40, tol=1e-11)
    diff = abs(m_full.mean_sq_norm[-1] - m_half.mean_sq_norm[-1])
    assert half.tail_bound > 0
    assert diff < half.tail_bound


def test_uniqueness_probe_contracts_for_monotone_coefficients():
    noise = make_noise(n_modes=5)
    rep = uniqueness_probe(MonotoneCoefficient.p_laplace(4), noise, MEASURE,
                           T=0.1, dt=0.01, trials=2, seed=3, tol=1e-12)
    assert not rep.flagged
    assert rep.max_growth <= 1.0 + 1e-10
    assert rep.per_trial_max.shape == (2,)
    assert rep.tolerance == 1e-10
    assert np.all(rep.final_gaps >= 0)


def test_paths_are_bit_reproducible():
    noise = make_noise(n_modes=5)
    u0 = DiscreteFunction(GRAPH, np.zeros(GRAPH.n_vertices))
    ra = simulate(IDENT, u0, noise, 0.05, 0.01, MEASURE, tol=1e-11)
    rb = simulate(IDENT, u0, noise, 0.05, 0.01, MEASURE, tol=1e-11)
    assert np.array_equal(ra.snapshots, rb.snapshots)
    assert np.array_equal(ra.l2_norms, rb.l2_norms)
    assert np.array_equal(ra.step_residuals, rb.step_residuals)
