"""Implicit-Euler integrator for  du = div a(grad u) dt + sqrt(Q) dW.

Noise is truncated cylindrical: increments live in the span of the first J
generalized Laplacian eigenfunctions, which are orthonormal in the lumped
measure inner product, with diagonal covariance weights q_j.  Each time step
solves the strictly monotone system

    M u_{k+1} + dt A(u_{k+1}) = M (u_k + dW_k)

through the quasilinear solver with quadratic shift alpha = 1/dt, so the step
is unconditionally solvable for any monotone coefficient and any dt > 0.

Gaussians come from a counter-based generator (Philox keyed by the model
seed, counter [0, 0, step, path]) through Box-Muller.  Mode j always reads
raw outputs 2j and 2j+1 of that counter block, so enlarging the truncation J
extends existing paths without reshuffling the modes already drawn.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .energy import (form_for, lumped_inner, p_energy_from_cells, spectrum,
                     vertex_weights)
from .errors import IncompatibleDataError, SolverConvergenceError
from .solvers import _cell_gamma, _solve_monotone, _step_preconditioner

_INV_2_64 = 1.0 / 2.0 ** 64


def _gaussians(seed, path, step, count):
    """count standard normals at a fixed (path, step) counter position."""
    if count == 0:
        return np.zeros(0)
    bitgen = np.random.Philox(key=seed,
                              counter=np.array([0, 0, step, path], dtype=np.uint64))
    raw = bitgen.random_raw(2 * count)
    u1 = (raw[0::2] + 0.5) * _INV_2_64
    u2 = (raw[1::2] + 0.5) * _INV_2_64
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@dataclass(eq=False)
class NoiseModel:
    """Diagonal-covariance noise in a measure-orthonormal eigenbasis.

    modes holds all computed eigenfunctions column-wise; only the first
    ``truncation`` of them are active.  tail_bound sums the covariance
    weights of computed-but-inactive modes, a declared surrogate for the
    trace tail beyond the truncation.
    """

    graph: object
    eigenvalues: np.ndarray
    modes: np.ndarray
    q: np.ndarray
    truncation: int
    seed: int

    @classmethod
    def from_spectrum(cls, measure, seed, n_modes=20, decay=2.0, weights=None,
                      extra=0):
        """Build the eigenbasis from the (form, measure) spectrum.

        The constant eigenfunction (eigenvalue 0) carries no spatial noise
        and is dropped; covariance defaults to q_j = lambda_j^(-decay).
        extra > 0 computes additional modes kept inactive, purely to make
        tail_bound informative.
        """
        graph = measure.graph
        form = form_for(graph)
        want = n_modes + extra
        k = min(want + 1, graph.n_vertices)
        if k - 1 < want:
            warnings.warn(f"only {k - 1} noise modes available at level "
                          f"{graph.level}; truncation reduced")
        result = spectrum(form, measure, k=k, seed=seed)
        lam = result.eigenvalues[1:]
        modes = result.eigenvectors[:, 1:]
        if weights is None:
            q = np.power(lam, -decay)
        else:
            q = np.asarray(weights, dtype=float)
            if q.shape != lam.shape:
                raise ValueError(f"need {lam.size} covariance weights, "
                                 f"got {q.size}")
            if np.any(q < 0):
                raise ValueError("covariance weights must be nonnegative")
        return cls(graph=graph, eigenvalues=lam, modes=modes, q=q,
                   truncation=min(n_modes, lam.size), seed=seed)

    @classmethod
    def null(cls, graph, seed=0):
        """Zero noise: deterministic evolution under the same stepping code."""
        n = graph.n_vertices
        return cls(graph=graph, eigenvalues=np.zeros(0),
                   modes=np.zeros((n, 0)), q=np.zeros(0), truncation=0,
                   seed=seed)

    def truncate(self, j):
        """Same basis and seed, different active truncation (j <= computed)."""
        if not 0 <= j <= self.eigenvalues.size:
            raise ValueError(f"truncation {j} outside computed range")
        return NoiseModel(graph=self.graph, eigenvalues=self.eigenvalues,
                          modes=self.modes, q=self.q, truncation=j,
                          seed=self.seed)

    def scaled(self, factor):
        if factor < 0:
            raise ValueError("covariance scale must be nonnegative")
        return NoiseModel(graph=self.graph, eigenvalues=self.eigenvalues,
                          modes=self.modes, q=self.q * factor,
                          truncation=self.truncation, seed=self.seed)

    @property
    def tail_bound(self):
        return float(np.sum(self.q[self.truncation:]))

    def increment(self, path, step, dt):
        j = self.truncation
        z = _gaussians(self.seed, path, step, j)
        if j == 0:
            return np.zeros(self.graph.n_vertices)
        return self.modes[:, :j] @ (np.sqrt(self.q[:j] * dt) * z)


@dataclass
class PathResult:
    times: np.ndarray
    snapshots: np.ndarray
    snapshot_steps: np.ndarray
    l2_norms: np.ndarray
    p_energies: np.ndarray
    step_iterations: np.ndarray
    step_residuals: np.ndarray
    dt: float
    T: float
    path_index: int
    stride: int
    seed: int
    extras: dict = field(default_factory=dict)


def _check_grid(T, dt):
    if dt <= 0 or T <= 0:
        raise ValueError("T and dt must be positive")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T = {T} is not an integer multiple of dt = {dt}")
    return n_steps


def simulate(coeff, u0, noise, T, dt, measure, path_index=0, stride=1,
             tol=1e-10, max_iter=100):
    """Integrate one path; returns the thinned trajectory plus per-step logs.

    Snapshots keep every stride-th state including the initial one and the
    final one; the L2 norm and p-energy are logged at every step regardless.
    A failed inner solve aborts with the step index in the message.
    """
    graph = measure.graph
    if noise is None:
        noise = NoiseModel.null(graph)
    if noise.graph is not graph:
        raise IncompatibleDataError("noise model built on a different graph")
    form = form_for(graph)
    d = vertex_weights(measure)
    n_steps = _check_grid(T, dt)
    alpha = 1.0 / dt

    u = np.asarray(u0.values if hasattr(u0, "values") else u0, dtype=float).copy()
    if u.shape != (graph.n_vertices,):
        raise IncompatibleDataError("initial state does not match the graph")

    def monitor(vec):
        gamma, _ = _cell_gamma(form, vec)
        l2 = float(np.sqrt(lumped_inner(d, vec, vec)))
        ep = p_energy_from_cells(gamma, measure.masses, coeff.p)
        return l2, ep

    zero_load = np.zeros(graph.n_vertices)
    snaps = [u.copy()]
    snap_steps = [0]
    l2s = np.empty(n_steps + 1)
    eps = np.empty(n_steps + 1)
    l2s[0], eps[0] = monitor(u)
    iters = np.empty(n_steps, dtype=np.int64)
    resids = np.empty(n_steps)

    precond = _step_preconditioner(form, measure, alpha)
    for k in range(n_steps):
        target = u + noise.increment(path_index, k, dt)
        sol, report = _solve_monotone(form, measure, coeff, zero_load,
                                      alpha=alpha, target=target, x0=target,
                                      tol=tol, max_iter=max_iter,
                                      method_label="spde-step",
                                      precond=precond)
        if not report.converged:
            raise SolverConvergenceError(
                f"inner solve failed at step {k} (t = {k * dt:.6g}): "
                f"residual {report.residual:.3e}", report)
        u = sol.values
        iters[k] = report.iterations
        resids[k] = report.residual
        l2s[k + 1], eps[k + 1] = monitor(u)
        if (k + 1) % stride == 0 or k + 1 == n_steps:
            if snap_steps[-1] != k + 1:
                snaps.append(u.copy())
                snap_steps.append(k + 1)

    snap_steps = np.array(snap_steps, dtype=np.int64)
    return PathResult(
        times=snap_steps * dt,
        snapshots=np.array(snaps),
        snapshot_steps=snap_steps,
        l2_norms=l2s,
        p_energies=eps,
        step_iterations=iters,
        step_residuals=resids,
        dt=dt, T=T, path_index=path_index, stride=stride, seed=noise.seed,
    )


@dataclass
class UniquenessReport:
    trials: int
    max_growth: float
    per_trial_max: np.ndarray
    final_gaps: np.ndarray
    flagged: bool
    tolerance: float = 1e-10


def uniqueness_probe(coeff, noise, measure, T, dt, trials=3, seed=0,
                     amplitude=1.0, tol=1e-12):
    """Drive pairs of initializations through identical noise.

    The per-step growth factor compares the measure-norm of the difference
    after and before each step; monotone coefficients contract it, so any
    factor above 1 + 1e-10 is flagged.  Step solves run at a tight inner
    tolerance so the diagnostic measures the scheme, not solver slack.
    """
    graph = measure.graph
    if noise is None:
        noise = NoiseModel.null(graph)
    form = form_for(graph)
    d = vertex_weights(measure)
    n_steps = _check_grid(T, dt)
    alpha = 1.0 / dt
    zero_load = np.zeros(graph.n_vertices)
    rng = np.random.default_rng(seed)

    precond = _step_preconditioner(form, measure, alpha)

    def step(u, target):
        sol, report = _solve_monotone(form, measure, coeff, zero_load,
                                      alpha=alpha, target=target, x0=target,
                                      tol=tol, max_iter=200,
                                      method_label="spde-step",
                                      precond=precond)
        if not report.converged:
            raise SolverConvergenceError(
                f"uniqueness probe inner solve failed: residual "
                f"{report.residual:.3e}", report)
        return sol.values

    per_trial = np.empty(trials)
    gaps = np.empty(trials)
    for t in range(trials):
        ua = amplitude * rng.uniform(-1.0, 1.0, graph.n_vertices)
        ub = amplitude * rng.uniform(-1.0, 1.0, graph.n_vertices)
        worst = 0.0
        for k in range(n_steps):
            dw = noise.increment(t, k, dt)
            diff = ua - ub
            before = np.sqrt(lumped_inner(d, diff, diff))
            ua = step(ua, ua + dw)
            ub = step(ub, ub + dw)
            diff = ua - ub
            after = np.sqrt(lumped_inner(d, diff, diff))
            if before > 0:
                worst = max(worst, after / before)
        per_trial[t] = worst
        diff = ua - ub
        gaps[t] = np.sqrt(lumped_inner(d, diff, diff))

    max_growth = float(per_trial.max())
    return UniquenessReport(trials=trials, max_growth=max_growth,
                            per_trial_max=per_trial, final_gaps=gaps,
                            flagged=bool(max_growth > 1.0 + 1e-10))


@dataclass
class MomentTable:
    times: np.ndarray
    mean_sq_norm: np.ndarray
    se_sq_norm: np.ndarray
    mean_p_energy: np.ndarray
    se_p_energy: np.ndarray
    paths: int


def moment_stats(coeff, u0, noise, T, dt, measure, paths, stride=1,
                 tol=1e-10):
    """Monte Carlo moments of the squared L2 norm and the p-energy.

    Paths differ only in the path index fed to the counter-based generator,
    so the estimate is reproducible and embarrassingly parallel in principle;
    here paths run sequentially.
    """
    if paths < 2:
        raise ValueError("need at least 2 paths for standard errors")
    sq = None
    en = None
    times = None
    for p in range(paths):
        res = simulate(coeff, u0, noise, T, dt, measure, path_index=p,
                       stride=stride, tol=tol)
        keep = res.snapshot_steps
        if sq is None:
            times = res.times
            sq = np.empty((paths, keep.size))
            en = np.empty((paths, keep.size))
        sq[p] = res.l2_norms[keep] ** 2
        en[p] = res.p_energies[keep]
    return MomentTable(
        times=times,
        mean_sq_norm=sq.mean(axis=0),
        se_sq_norm=sq.std(axis=0, ddof=1) / np.sqrt(paths),
        mean_p_energy=en.mean(axis=0),
        se_p_energy=en.std(axis=0, ddof=1) / np.sqrt(paths),
        paths=paths,
    )
