"""Command-line entry point.

Every subcommand resolves one configuration (defaults, optional JSON file,
flag overrides, in that order), writes the resolved document next to its
outputs, and stamps the short config hash into every file it emits.  Output
lands under the directory named by the config, relative to the
FRACTALFIELDS_OUT environment variable when that is set.

Exit codes: 0 success, 2 configuration or data problem, 3 solver
non-convergence, 4 invariant failure.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import acceptance, io, plots
from .config import load_config_file, resolve_config, write_resolved
from .energy import (DiscreteFunction, form_for, harmonic_coordinates,
                     kusuoka_measure, self_similar_measure, spectrum,
                     vertex_weights)
from .errors import (ConfigError, IncompatibleDataError, ResourceLimitError,
                     SolverConvergenceError)
from .fields import fiber_statistics, kusuoka_matrices, p_energy
from .solvers import MonotoneCoefficient, solve_p_laplace
from .spde import NoiseModel, moment_stats, simulate, uniqueness_probe
from .topology import SPEC_REGISTRY, build_level


def _common_flags(sub):
    sub.add_argument("--config", help="JSON configuration file")
    sub.add_argument("--fractal", choices=sorted(SPEC_REGISTRY))
    sub.add_argument("--level", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out", help="output directory (config key 'output')")
    sub.add_argument("--no-plot", action="store_true",
                     help="skip PNG rendering")


def _resolve(args, extra=None):
    document = load_config_file(args.config) if args.config else {}
    overrides = dict(extra or {})
    if args.fractal is not None:
        overrides["fractal"] = args.fractal
    if args.level is not None:
        overrides["level"] = args.level
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output"] = args.out
    if args.no_plot:
        overrides["plots"] = False
    cfg = resolve_config(document, overrides)
    return cfg, document


def _outdir(cfg, command):
    root = os.environ.get("FRACTALFIELDS_OUT", ".")
    out = Path(root) / cfg["output"]
    out.mkdir(parents=True, exist_ok=True)
    digest = write_resolved(cfg, out / f"{command}.config.json")
    return out, digest


def _graph(cfg):
    spec = SPEC_REGISTRY[cfg["fractal"]]()
    return spec, build_level(spec, cfg["level"])


def _measure(cfg, spec, level=None):
    level = cfg["level"] if level is None else level
    block = cfg["measure"]
    if block["kind"] == "kusuoka":
        return kusuoka_measure(spec, level)
    weights = block["weights"]
    if weights is None:
        weights = np.full(spec.n_maps, 1.0 / spec.n_maps)
    return self_similar_measure(spec, level, weights)


def _datum(cfg, block, graph, measure):
    kind = block["kind"]
    amp = block["amplitude"]
    if kind == "zero":
        return DiscreteFunction(graph, np.zeros(graph.n_vertices))
    if kind == "eigenmode":
        mode = block["mode"]
        result = spectrum(form_for(graph), measure, mode + 1,
                          seed=cfg["seed"])
        return DiscreteFunction(graph, amp * result.eigenvectors[:, mode])
    rng = np.random.default_rng(cfg["seed"])
    d = vertex_weights(measure)
    vals = rng.uniform(-1.0, 1.0, graph.n_vertices)
    vals -= np.dot(d, vals) / d.sum()
    return DiscreteFunction(graph, amp * vals)


def _require_explicit_seed(args, document, why):
    if args.seed is None and "seed" not in document:
        raise ConfigError(f"{why} needs an explicit --seed "
                          "(wall-clock seeding is not supported)")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_build(args):
    cfg, _ = _resolve(args)
    spec, graph = _graph(cfg)
    out, digest = _outdir(cfg, "build")
    io.write_graph_json(out / "graph.json", graph, digest)
    if cfg["plots"]:
        plots.plot_graph(graph, out / "graph.png")
    print(f"{spec.name} level {cfg['level']}: {graph.n_vertices} vertices, "
          f"{graph.n_edges} edges, {graph.n_cells} cells -> {out}")
    return 0


def cmd_spectrum(args):
    extra = {}
    if args.k is not None:
        extra["spectrum"] = {"k": args.k}
    cfg, _ = _resolve(args, extra)
    spec, graph = _graph(cfg)
    measure = _measure(cfg, spec)
    out, digest = _outdir(cfg, "spectrum")
    result = spectrum(form_for(graph), measure, cfg["spectrum"]["k"],
                      seed=cfg["seed"])
    io.write_spectrum_csv(out / "spectrum.csv", result, digest)
    io.write_modes_csv(out / "modes.csv", graph, result, digest)
    io.write_json(out / "spectrum.json",
                  {"eigenvalues": result.eigenvalues,
                   "measure": result.measure_name,
                   "method": result.method}, digest)
    if cfg["plots"]:
        plots.plot_spectrum(result.eigenvalues, out / "spectrum.png",
                            title=f"{spec.name} m={cfg['level']} ({result.measure_name})")
        if result.eigenvalues.size > 1:
            plots.plot_function(graph, result.eigenvectors[:, 1],
                                out / "mode1.png", title="first nonconstant mode")
    print(f"eigenvalues: {np.array2string(result.eigenvalues, precision=6)}")
    return 0


def cmd_measure(args):
    cfg, _ = _resolve(args)
    spec, graph = _graph(cfg)
    measure = _measure(cfg, spec)
    out, digest = _outdir(cfg, "measure")
    io.write_measure_csv(out / "measure.csv", graph, measure, digest)
    if cfg["plots"]:
        plots.plot_cell_values(graph, measure.masses, out / "measure.png",
                               title=measure.name, log=True)
    print(f"{measure.name}: {graph.n_cells} cells, total mass "
          f"{measure.total():.12g} -> {out}")
    return 0


def cmd_kusuoka(args):
    cfg, _ = _resolve(args)
    spec, graph = _graph(cfg)
    out, digest = _outdir(cfg, "kusuoka")
    gram, metric = kusuoka_matrices(spec, cfg["level"])
    io.write_kusuoka_csv(out / "kusuoka.csv", graph, gram, metric, digest)
    levels = range(1, cfg["level"] + 1)
    stats = fiber_statistics(spec, levels)
    io.write_series_csv(out / "fiber_stats.csv",
                        [("level", [r[0] for r in stats]),
                         ("min_small_eig", [r[1] for r in stats]),
                         ("median_small_eig", [r[2] for r in stats]),
                         ("max_small_eig", [r[3] for r in stats])],
                        digest)
    if cfg["plots"]:
        plots.plot_cell_values(graph, metric.eigenvalues[:, 0],
                               out / "small_eigenvalue.png",
                               title="smaller fiber eigenvalue")
        plots.plot_series(out / "fiber_stats.png",
                          [r[0] for r in stats],
                          [("min", [r[1] for r in stats]),
                           ("median", [r[2] for r in stats]),
                           ("max", [r[3] for r in stats])],
                          xlabel="level", ylabel="smaller eigenvalue",
                          logy=True, title="fiber eigenvalue collapse")
    med = stats[-1][2] if stats else float("nan")
    print(f"kusuoka level {cfg['level']}: median smaller eigenvalue {med:.3e}")
    return 0


def cmd_penergy(args):
    extra = {"penergy": {}}
    if args.p is not None:
        extra["penergy"]["p"] = args.p
    if args.min_level is not None:
        extra["penergy"]["min_level"] = args.min_level
    if args.max_level is not None:
        extra["penergy"]["max_level"] = args.max_level
    cfg, _ = _resolve(args, extra)
    spec = SPEC_REGISTRY[cfg["fractal"]]()
    block = cfg["penergy"]
    p = block["p"]
    rows = []
    prev = None
    for m in range(block["min_level"], block["max_level"] + 1):
        measure = _measure(cfg, spec, level=m)
        phi = harmonic_coordinates(spec, m)[0]
        value = p_energy(phi, measure, p)
        ratio = float("nan") if prev is None else value / prev
        rows.append((m, p, value, ratio))
        prev = value
    out, digest = _outdir(cfg, "penergy")
    io.write_penergy_csv(out / "penergy.csv", rows, digest)
    if cfg["plots"]:
        plots.plot_series(out / "penergy.png",
                          [r[0] for r in rows],
                          [(f"E_p, p={p:g}", [r[2] for r in rows])],
                          xlabel="level", ylabel="p-energy", logy=True)
    for m, _, value, ratio in rows:
        print(f"level {m}: E_p = {value:.9e}  ratio {ratio:.6f}")
    return 0


def cmd_solve(args):
    extra = {"problem": {}}
    if args.p is not None:
        extra["problem"]["p"] = args.p
    if args.constraint is not None:
        extra["problem"]["constraint"] = args.constraint
    if args.datum is not None:
        extra["problem"]["datum"] = {"kind": args.datum}
    cfg, document = _resolve(args, extra)
    if cfg["problem"]["datum"]["kind"] == "random":
        _require_explicit_seed(args, document, "a random datum")
    spec, graph = _graph(cfg)
    measure = _measure(cfg, spec)
    f = _datum(cfg, cfg["problem"]["datum"], graph, measure)
    u, report = solve_p_laplace(f, cfg["problem"]["p"], measure,
                                constraint=cfg["problem"]["constraint"],
                                tol=cfg["tolerances"]["solver"])
    out, digest = _outdir(cfg, "solve")
    io.write_function_csv(out / "solution.csv", graph, u.values, digest,
                          name="u")
    io.write_function_csv(out / "datum.csv", graph, f.values, digest, name="f")
    io.write_json(out / "solve_report.json", report, digest)
    io.write_table(out / "history.csv",
                   [("iteration", [h[0] for h in report.history], "int"),
                    ("phase", [h[1] for h in report.history], "str"),
                    ("step", [h[2] for h in report.history], "float"),
                    ("residual", [h[3] for h in report.history], "float"),
                    ("objective", [h[4] for h in report.history], "float")],
                   {"config": digest})
    if cfg["plots"]:
        plots.plot_function(graph, u.values, out / "solution.png",
                            title=f"p = {cfg['problem']['p']:g} solution")
        plots.plot_history(report.history, out / "history.png")
    print(f"converged in {report.iterations} iterations, residual "
          f"{report.residual:.3e}, energy {report.energy:.9e}")
    return 0


def cmd_spde(args):
    extra = {"spde": {}}
    for key, val in (("T", args.T), ("dt", args.dt), ("n_modes", args.n_modes),
                     ("paths", args.paths), ("stride", args.stride),
                     ("trials", args.trials)):
        if val is not None:
            extra["spde"][key] = val
    if args.p is not None:
        extra["problem"] = {"p": args.p}
    cfg, document = _resolve(args, extra)
    _require_explicit_seed(args, document, "the spde command")
    spec, graph = _graph(cfg)
    measure = _measure(cfg, spec)
    block = cfg["spde"]
    coeff = MonotoneCoefficient.p_laplace(cfg["problem"]["p"])
    noise = NoiseModel.from_spectrum(measure, cfg["seed"],
                                     n_modes=block["n_modes"],
                                     decay=block["decay"])
    if block["q_scale"] != 1.0:
        noise = noise.scaled(block["q_scale"])
    u0 = _datum(cfg, block["initial"], graph, measure)
    out, digest = _outdir(cfg, "spde")
    io.write_json(out / "noise.json",
                  {"truncation": noise.truncation,
                   "eigenvalues": noise.eigenvalues,
                   "q": noise.q,
                   "tail_bound": noise.tail_bound,
                   "seed": noise.seed}, digest)
    tol = cfg["tolerances"]["spde_step"]

    if args.probe_uniqueness:
        rep = uniqueness_probe(coeff, noise, measure, block["T"], block["dt"],
                               trials=block["trials"], seed=cfg["seed"],
                               tol=min(tol, 1e-12))
        io.write_json(out / "uniqueness.json", rep, digest)
        print(f"max growth factor {rep.max_growth:.12f} over "
              f"{rep.trials} trials "
              f"({'FLAGGED' if rep.flagged else 'contractive'})")
        return 4 if rep.flagged else 0

    if block["paths"] == 1:
        res = simulate(coeff, u0, noise, block["T"], block["dt"], measure,
                       stride=block["stride"], tol=tol)
        steps = np.arange(res.l2_norms.size)
        io.write_series_csv(out / "path.csv",
                            [("step", steps),
                             ("time", steps * res.dt),
                             ("l2_norm", res.l2_norms),
                             ("p_energy", res.p_energies)],
                            digest, meta={"seed": cfg["seed"]})
        io.write_snapshots_csv(out / "snapshots.csv", graph, res, digest)
        if cfg["plots"]:
            plots.plot_series(out / "path.png", steps * res.dt,
                              [("L2 norm", res.l2_norms)],
                              xlabel="t", ylabel="L2 norm")
            plots.plot_function(graph, res.snapshots[-1], out / "final.png",
                                title=f"state at T = {block['T']:g}")
        print(f"{res.snapshot_steps.size} snapshots, final L2 norm "
              f"{res.l2_norms[-1]:.6e}")
    else:
        table = moment_stats(coeff, u0, noise, block["T"], block["dt"],
                             measure, paths=block["paths"],
                             stride=block["stride"], tol=tol)
        io.write_series_csv(out / "stats.csv",
                            [("time", table.times),
                             ("mean_sq_norm", table.mean_sq_norm),
                             ("se_sq_norm", table.se_sq_norm),
                             ("mean_p_energy", table.mean_p_energy),
                             ("se_p_energy", table.se_p_energy)],
                            digest, meta={"paths": table.paths,
                                          "seed": cfg["seed"]})
        if cfg["plots"]:
            plots.plot_series(out / "stats.png", table.times,
                              [("mean squared norm", table.mean_sq_norm)],
                              xlabel="t", ylabel="E ||u||^2")
        print(f"{table.paths} paths, stationary mean squared norm "
              f"{table.mean_sq_norm[-1]:.6e} "
              f"(se {table.se_sq_norm[-1]:.2e})")
    return 0


def cmd_verify(args):
    cfg, _ = _resolve(args)
    out, digest = _outdir(cfg, "verify")
    results = acceptance.run_all()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    io.write_json(out / "verify.json",
                  {"all_passed": all(r.passed for r in results),
                   "results": results}, digest)
    if all(r.passed for r in results):
        print(f"all {len(results)} checks passed")
        return 0
    failed = [r.name for r in results if not r.passed]
    print(f"FAILED: {', '.join(failed)}")
    return 4


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fractalfields",
        description="Energy forms, gradient fields, and monotone PDE/SPDE "
                    "solvers on finitely ramified fractals.")
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("build", help="construct a level graph")
    _common_flags(sub)
    sub.set_defaults(func=cmd_build)

    sub = subs.add_parser("spectrum", help="weighted Laplacian eigenpairs")
    _common_flags(sub)
    sub.add_argument("--k", type=int, help="number of eigenpairs")
    sub.set_defaults(func=cmd_spectrum)

    sub = subs.add_parser("measure", help="tabulate a cell measure")
    _common_flags(sub)
    sub.set_defaults(func=cmd_measure)

    sub = subs.add_parser("kusuoka", help="fiber metric and eigen-statistics")
    _common_flags(sub)
    sub.set_defaults(func=cmd_kusuoka)

    sub = subs.add_parser("penergy", help="p-energy table over levels")
    _common_flags(sub)
    sub.add_argument("--p", type=float)
    sub.add_argument("--min-level", type=int)
    sub.add_argument("--max-level", type=int)
    sub.set_defaults(func=cmd_penergy)

    sub = subs.add_parser("solve", help="stationary p-Laplace problem")
    _common_flags(sub)
    sub.add_argument("--p", type=float)
    sub.add_argument("--constraint", choices=["zero-mean", "dirichlet"])
    sub.add_argument("--datum", choices=["eigenmode", "random", "zero"])
    sub.set_defaults(func=cmd_solve)

    sub = subs.add_parser("spde", help="stochastic evolution paths and stats")
    _common_flags(sub)
    sub.add_argument("--p", type=float)
    sub.add_argument("--T", type=float)
    sub.add_argument("--dt", type=float)
    sub.add_argument("--n-modes", type=int)
    sub.add_argument("--paths", type=int)
    sub.add_argument("--stride", type=int)
    sub.add_argument("--trials", type=int)
    sub.add_argument("--probe-uniqueness", action="store_true",
                     help="run the contraction diagnostic instead of a path")
    sub.set_defaults(func=cmd_spde)

    sub = subs.add_parser("verify", help="run the full invariant suite")
    _common_flags(sub)
    sub.set_defaults(func=cmd_verify)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (IncompatibleDataError, ResourceLimitError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except SolverConvergenceError as err:
        print(f"solver failed: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
