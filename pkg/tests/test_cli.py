"""End-to-end CLI runs: files, headers, hashes, exit codes."""

import json

import numpy as np
import pytest

from fractalfields import (DiscreteFunction, form_for, self_similar_measure,
                           sierpinski_gasket, solve_p_laplace, spectrum,
                           vertex_weights)
from fractalfields.cli import main
from fractalfields.config import read_resolved
from fractalfields.io import read_function_csv, read_json, read_table


@pytest.fixture
def outroot(tmp_path, monkeypatch):
    monkeypatch.setenv("FRACTALFIELDS_OUT", str(tmp_path))
    return tmp_path


def test_build_writes_graph_and_plot(outroot):
    rc = main(["build", "--fractal", "sg", "--level", "2", "--out", "b"])
    assert rc == 0
    doc = read_json(outroot / "b" / "graph.json")
    assert doc["n_vertices"] == 15
    assert doc["n_edges"] == 27
    assert (outroot / "b" / "graph.png").exists()
    _, digest = read_resolved(outroot / "b" / "build.config.json")
    assert doc["config"] == digest


def test_no_plot_suppresses_pngs(outroot):
    rc = main(["build", "--fractal", "sg", "--level", "1", "--out", "np",
               "--no-plot"])
    assert rc == 0
    assert not list((outroot / "np").glob("*.png"))


def test_spectrum_matches_library_call(outroot):
    rc = main(["spectrum", "--fractal", "sg", "--level", "3", "--k", "5",
               "--out", "sp", "--no-plot"])
    assert rc == 0
    meta, names, cols = read_table(outroot / "sp" / "spectrum.csv")
    got = np.asarray(cols[names.index("eigenvalue")], dtype=float)
    assert len(got) == 5

    m = self_similar_measure(sierpinski_gasket(), 3, np.full(3, 1.0 / 3.0))
    ref = spectrum(form_for(m.graph), m, 5, seed=0)
    assert np.array_equal(got, ref.eigenvalues)

    _, digest = read_resolved(outroot / "sp" / "spectrum.config.json")
    assert meta["config"] == digest


def test_solve_output_round_trips_bit_exact(outroot):
    rc = main(["solve", "--fractal", "sg", "--level", "2", "--p", "3",
               "--out", "so", "--no-plot"])
    assert rc == 0
    meta, addresses, vals = read_function_csv(outroot / "so" / "solution.csv")

    cfg, digest = read_resolved(outroot / "so" / "solve.config.json")
    assert meta["config"] == digest
    m = self_similar_measure(sierpinski_gasket(), 2, np.full(3, 1.0 / 3.0))
    f_meta, _, f_vals = read_function_csv(outroot / "so" / "datum.csv")
    u, _ = solve_p_laplace(DiscreteFunction(m.graph, f_vals), 3, m,
                           tol=cfg["tolerances"]["solver"])
    assert np.array_equal(u.values, vals)
    assert addresses == list(m.graph.vertices)

    report = read_json(outroot / "so" / "solve_report.json")
    assert report["converged"] is True
    assert report["config"] == digest


def test_measure_kusuoka_penergy_outputs(outroot):
    assert main(["measure", "--fractal", "sg", "--level", "2", "--out", "me",
                 "--no-plot"]) == 0
    meta, names, cols = read_table(outroot / "me" / "measure.csv")
    masses = np.asarray(cols[names.index("mass")], dtype=float)
    assert abs(masses.sum() - 1.0) < 1e-12

    assert main(["kusuoka", "--fractal", "sg", "--level", "2", "--out", "ku",
                 "--no-plot"]) == 0
    _, knames, kcols = read_table(outroot / "ku" / "fiber_stats.csv")
    meds = np.asarray(kcols[knames.index("median_small_eig")], dtype=float)
    assert np.all(np.diff(meds) < 0)

    assert main(["penergy", "--fractal", "sg", "--min-level", "1",
                 "--max-level", "3", "--p", "4", "--out", "pe",
                 "--no-plot"]) == 0
    _, pnames, pcols = read_table(outroot / "pe" / "penergy.csv")
    ratios = np.asarray(pcols[pnames.index("ratio")], dtype=float)[1:]
    # successive p-energy ratios of a fixed harmonic function are constant
    assert np.allclose(ratios, ratios[0], rtol=1e-10)


def test_spde_path_and_stats_outputs(outroot):
    rc = main(["spde", "--fractal", "sg", "--level", "2", "--T", "0.05",
               "--dt", "0.01", "--seed", "7", "--n-modes", "5", "--out", "sd",
               "--no-plot"])
    assert rc == 0
    noise = read_json(outroot / "sd" / "noise.json")
    assert noise["truncation"] == 5
    assert len(noise["eigenvalues"]) == 5
    _, names, cols = read_table(outroot / "sd" / "path.csv")
    l2 = np.asarray(cols[names.index("l2_norm")], dtype=float)
    assert l2.shape == (6,)

    rc = main(["spde", "--fractal", "sg", "--level", "2", "--T", "0.05",
               "--dt", "0.01", "--seed", "7", "--n-modes", "5", "--paths", "3",
               "--out", "sm", "--no-plot"])
    assert rc == 0
    _, snames, scols = read_table(outroot / "sm" / "stats.csv")
    assert "mean_sq_norm" in snames and "se_sq_norm" in snames

    rc = main(["spde", "--fractal", "sg", "--level", "2", "--T", "0.05",
               "--dt", "0.01", "--seed", "7", "--n-modes", "5",
               "--probe-uniqueness", "--out", "su", "--no-plot"])
    assert rc == 0
    rep = read_json(outroot / "su" / "uniqueness.json")
    assert rep["flagged"] is False
    assert rep["max_growth"] <= 1.0 + 1e-10


def test_identical_runs_are_bit_identical(tmp_path, monkeypatch):
    # the output root is ambient (not hashed), so two runs of one config
    # into different roots must agree byte for byte
    argv = ["spde", "--fractal", "sg", "--level", "2", "--T", "0.03",
            "--dt", "0.01", "--seed", "11", "--n-modes", "4", "--no-plot",
            "--out", "run"]
    monkeypatch.setenv("FRACTALFIELDS_OUT", str(tmp_path / "first"))
    assert main(argv) == 0
    monkeypatch.setenv("FRACTALFIELDS_OUT", str(tmp_path / "second"))
    assert main(argv) == 0
    for name in ("snapshots.csv", "path.csv", "spde.config.json"):
        a = (tmp_path / "first" / "run" / name).read_bytes()
        assert a == (tmp_path / "second" / "run" / name).read_bytes()


def test_solve_renders_figures(outroot):
    rc = main(["solve", "--fractal", "sg", "--level", "2", "--p", "3",
               "--out", "fig"])
    assert rc == 0
    for name in ("solution.png", "history.png"):
        target = outroot / "fig" / name
        assert target.exists() and target.stat().st_size > 0


def test_stochastic_commands_require_a_seed(outroot):
    rc = main(["spde", "--fractal", "sg", "--level", "2", "--T", "0.05",
               "--dt", "0.01", "--out", "sx", "--no-plot"])
    assert rc == 2
    rc = main(["solve", "--fractal", "sg", "--level", "2", "--datum", "random",
               "--out", "sr", "--no-plot"])
    assert rc == 2
    # a seed inside the config document is as good as the flag
    cfg = outroot / "seeded.json"
    cfg.write_text(json.dumps({"seed": 3}))
    rc = main(["solve", "--config", str(cfg), "--fractal", "sg", "--level",
               "2", "--datum", "random", "--out", "sy", "--no-plot"])
    assert rc == 0


def test_config_error_paths_exit_2(outroot):
    bad = outroot / "bad.json"
    bad.write_text(json.dumps({"solver": "cg"}))
    assert main(["build", "--config", str(bad), "--out", "e1"]) == 2
    missing = outroot / "nope.json"
    assert main(["build", "--config", str(missing), "--out", "e2"]) == 2
    notjson = outroot / "broken.json"
    notjson.write_text("{]")
    assert main(["build", "--config", str(notjson), "--out", "e3"]) == 2


def test_nonconvergence_exits_3(outroot):
    cfg = outroot / "hopeless.json"
    cfg.write_text(json.dumps({"tolerances": {"solver": 1e-30}}))
    rc = main(["solve", "--config", str(cfg), "--fractal", "sg", "--level",
               "2", "--p", "4", "--out", "x3", "--no-plot"])
    assert rc == 3


def test_verify_prints_one_line_per_check(outroot, capsys):
    rc = main(["verify", "--out", "ver", "--no-plot"])
    out = capsys.readouterr().out
    assert rc == 0
    lines = [ln for ln in out.splitlines() if ln.startswith(("PASS", "FAIL"))]
    assert len(lines) == 12
    assert all(ln.startswith("PASS") for ln in lines)
    doc = read_json(outroot / "ver" / "verify.json")
    assert doc["all_passed"] is True
    assert len(doc["results"]) == 12
