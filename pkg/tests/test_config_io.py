"""Configuration resolution, hashing, and delimited/JSON round trips."""

import json

import numpy as np
import pytest

from fractalfields import ConfigError, build_level, resolve_config, sierpinski_gasket
from fractalfields.config import (DEFAULTS, config_hash, read_resolved,
                                  write_resolved)
from fractalfields.io import (format_address, format_float, format_word,
                              parse_address, parse_word, read_function_csv,
                              read_json, read_measure_csv, read_table,
                              write_function_csv, write_json, write_measure_csv,
                              write_table)
from fractalfields import self_similar_measure


def test_defaults_resolve_and_are_stable():
    cfg = resolve_config()
    assert cfg == DEFAULTS
    assert cfg is not DEFAULTS   # caller owns a copy
    assert cfg["fractal"] == "sg"
    assert cfg["spde"]["decay"] == 2.0


def test_layering_order():
    doc = {"level": 5, "problem": {"p": 3.0}}
    cfg = resolve_config(doc, {"level": 2})
    assert cfg["level"] == 2             # overrides beat the document
    assert cfg["problem"]["p"] == 3.0    # document beats defaults
    assert cfg["problem"]["constraint"] == "zero-mean"


def test_unknown_keys_are_rejected_with_a_path():
    with pytest.raises(ConfigError, match="bogus"):
        resolve_config({"bogus": 1})
    with pytest.raises(ConfigError, match="spde"):
        resolve_config({"spde": {"Q": 1.0}})
    with pytest.raises(ConfigError, match="config key"):
        resolve_config({"level": "three"})
    with pytest.raises(ConfigError):
        resolve_config({"penergy": {"min_level": 5, "max_level": 2}})
    with pytest.raises(ConfigError):
        resolve_config("not a dict")


def test_config_hash_ignores_key_order():
    a = resolve_config({"level": 4, "seed": 9})
    b = resolve_config({"seed": 9, "level": 4})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(resolve_config({"level": 4}))
    assert len(config_hash(a)) == 12


def test_resolved_round_trip_and_tamper_detection(tmp_path):
    cfg = resolve_config({"level": 4})
    path = tmp_path / "run.config.json"
    digest = write_resolved(cfg, path)
    doc, actual = read_resolved(path)
    assert actual == digest
    assert doc == cfg

    raw = json.loads(path.read_text())
    raw["level"] = 5
    path.write_text(json.dumps(raw))
    with pytest.raises(ConfigError, match="hash mismatch"):
        read_resolved(path)


def test_address_and_word_formats():
    cases = [((), 1), ((3,), 2), ((1, 2, 3), 1)]
    for addr in cases:
        assert parse_address(format_address(addr)) == addr
    assert format_address(((), 2)) == "-:2"
    assert format_word(()) == "-"
    assert parse_word("123") == (1, 2, 3)
    assert parse_word(format_word((2, 1, 2))) == (2, 1, 2)


def test_seventeen_digit_floats_round_trip_exactly():
    rng = np.random.default_rng(0)
    vals = np.concatenate([
        rng.standard_normal(50),
        rng.standard_normal(10) * 1e-300,
        rng.standard_normal(10) * 1e300,
        np.array([0.0, -0.0, 0.1, 1.0 / 3.0]),
    ])
    again = np.array([float(format_float(x)) for x in vals])
    assert np.array_equal(vals, again)


def test_table_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    ints = rng.integers(-10 ** 12, 10 ** 12, size=40)
    floats = rng.standard_normal(40) * 10.0 ** rng.integers(-200, 200, size=40)
    labels = [f"w{i}" for i in range(40)]
    path = tmp_path / "table.csv"
    write_table(path, [("idx", ints, "int"),
                       ("value", floats, "float"),
                       ("label", labels, "str")],
                {"config": "abc123", "note": "round trip"})
    meta, names, cols = read_table(path)
    assert meta["config"] == "abc123"
    assert meta["note"] == "round trip"
    assert names == ["idx", "value", "label"]
    assert np.array_equal(np.asarray(cols[0], dtype=np.int64), ints)
    assert np.array_equal(np.asarray(cols[1], dtype=float), floats)
    assert list(cols[2]) == labels


def test_function_csv_round_trip(tmp_path):
    spec = sierpinski_gasket()
    g = build_level(spec, 2)
    rng = np.random.default_rng(2)
    vals = rng.standard_normal(g.n_vertices)
    path = tmp_path / "fn.csv"
    write_function_csv(path, g, vals, "deadbeef0123", name="u")
    meta, addresses, got = read_function_csv(path)
    assert meta["config"] == "deadbeef0123"
    assert meta["level"] == "2"
    assert addresses == list(g.vertices)
    assert np.array_equal(got, vals)


def test_measure_csv_round_trip(tmp_path):
    spec = sierpinski_gasket()
    m = self_similar_measure(spec, 3, np.array([0.2, 0.3, 0.5]))
    path = tmp_path / "measure.csv"
    write_measure_csv(path, m.graph, m, "cafebabe0000")
    meta, words, masses = read_measure_csv(path)
    assert words == list(m.graph.cells)
    assert np.array_equal(masses, m.masses)
    assert meta["measure"].startswith("self_similar")


def test_json_payloads_carry_the_config_hash(tmp_path):
    path = tmp_path / "out.json"
    payload = {"values": np.arange(4.0), "nested": {"flag": True}}
    write_json(path, payload, "0123456789ab")
    doc = read_json(path)
    assert doc["config"] == "0123456789ab"
    assert doc["values"] == [0.0, 1.0, 2.0, 3.0]
    assert doc["nested"] == {"flag": True}
