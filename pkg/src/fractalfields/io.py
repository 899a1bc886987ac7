"""Flat-file serialization: hash-stamped CSV tables and JSON reports.

Every file starts with comment lines of the form ``# key=value``; the
``config`` key carries the short hash of the run configuration.  Floats are
written with 17 significant digits so a read-back reproduces the double
exactly; integer and address columns round-trip bit-exact.  Addresses
serialize as ``word:corner`` with ``-`` standing for the empty word.
"""

import dataclasses
import json

import numpy as np

from .errors import IncompatibleDataError


def format_float(x):
    return f"{float(x):.17g}"


def format_address(address):
    word, corner = address
    text = "".join(str(letter) for letter in word) if word else "-"
    return f"{text}:{corner}"


def parse_address(text):
    word_text, corner = text.rsplit(":", 1)
    word = () if word_text == "-" else tuple(int(ch) for ch in word_text)
    return word, int(corner)


def format_word(word):
    return "".join(str(letter) for letter in word) if word else "-"


def parse_word(text):
    return () if text == "-" else tuple(int(ch) for ch in text)


# ---------------------------------------------------------------------------
# Generic table layer


def write_table(path, columns, meta=None):
    """columns: list of (name, values, kind) with kind in int/float/str."""
    lines = []
    for key, value in (meta or {}).items():
        lines.append(f"# {key}={value}")
    names = [name for name, _, _ in columns]
    lines.append(",".join(names))
    length = len(columns[0][1])
    casts = []
    for name, values, kind in columns:
        if len(values) != length:
            raise ValueError(f"column {name} has mismatched length")
        if kind == "int":
            casts.append(lambda v: str(int(v)))
        elif kind == "float":
            casts.append(format_float)
        elif kind == "str":
            casts.append(str)
        else:
            raise ValueError(f"unknown column kind {kind!r}")
    for i in range(length):
        lines.append(",".join(cast(col[1][i]) for cast, col in zip(casts, columns)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_table(path):
    """Returns (meta, names, columns) with per-column dtype sniffing."""
    meta = {}
    names = None
    raw = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    meta[key.strip()] = value.strip()
                continue
            if names is None:
                names = line.split(",")
            else:
                raw.append(line.split(","))
    if names is None:
        raise IncompatibleDataError(f"{path} has no header row")
    cols = []
    for j, _ in enumerate(names):
        texts = [row[j] for row in raw]
        cols.append(_sniff(texts))
    return meta, names, cols


def _sniff(texts):
    try:
        return np.array([int(t) for t in texts], dtype=np.int64)
    except ValueError:
        pass
    try:
        return np.array([float(t) for t in texts], dtype=float)
    except ValueError:
        return np.array(texts, dtype=object)


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def write_json(path, payload, config_hash=None):
    doc = _jsonable(payload)
    if config_hash is not None and isinstance(doc, dict):
        doc = {"config": config_hash, **doc}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Specific artifacts


def write_graph_json(path, graph, config_hash=None):
    payload = {
        "fractal": graph.spec.name,
        "level": graph.level,
        "n_vertices": graph.n_vertices,
        "n_edges": graph.n_edges,
        "n_cells": graph.n_cells,
        "conductance": graph.conductance(),
        "vertices": [
            {"id": i, "address": format_address(addr),
             "x": graph.coords[i, 0], "y": graph.coords[i, 1]}
            for i, addr in enumerate(graph.vertices)
        ],
        "cells": [
            {"word": format_word(word), "corners": [int(v) for v in verts]}
            for word, verts in zip(graph.cells, graph.cell_vertices)
        ],
        "edges": [
            {"u": int(u), "v": int(v), "cell": int(c)}
            for u, v, c in zip(graph.edge_u, graph.edge_v, graph.edge_cell)
        ],
    }
    write_json(path, payload, config_hash)


def write_function_csv(path, graph, values, config_hash, name="value"):
    columns = [
        ("vertex", np.arange(graph.n_vertices), "int"),
        ("address", [format_address(a) for a in graph.vertices], "str"),
        ("x", graph.coords[:, 0], "float"),
        ("y", graph.coords[:, 1], "float"),
        (name, np.asarray(values, dtype=float), "float"),
    ]
    write_table(path, columns, {"config": config_hash,
                                "fractal": graph.spec.name,
                                "level": graph.level})


def read_function_csv(path):
    meta, names, cols = read_table(path)
    addresses = [parse_address(t) for t in cols[names.index("address")]]
    return meta, addresses, np.asarray(cols[-1], dtype=float)


def write_measure_csv(path, graph, measure, config_hash):
    columns = [
        ("cell", np.arange(graph.n_cells), "int"),
        ("word", [format_word(w) for w in graph.cells], "str"),
        ("mass", measure.masses, "float"),
    ]
    write_table(path, columns, {"config": config_hash,
                                "measure": measure.name,
                                "fractal": graph.spec.name,
                                "level": graph.level,
                                "total": format_float(measure.total())})


def read_measure_csv(path):
    meta, names, cols = read_table(path)
    # the word column sniffs as integers for single-digit letters
    words = [parse_word(str(t)) for t in cols[names.index("word")]]
    return meta, words, np.asarray(cols[names.index("mass")], dtype=float)


def write_spectrum_csv(path, result, config_hash):
    k = result.eigenvalues.size
    columns = [
        ("index", np.arange(k), "int"),
        ("eigenvalue", result.eigenvalues, "float"),
    ]
    write_table(path, columns, {"config": config_hash,
                                "measure": result.measure_name,
                                "method": result.method})


def write_modes_csv(path, graph, result, config_hash):
    columns = [("vertex", np.arange(graph.n_vertices), "int")]
    for j in range(result.eigenvalues.size):
        columns.append((f"mode{j}", result.eigenvectors[:, j], "float"))
    write_table(path, columns, {"config": config_hash,
                                "measure": result.measure_name})


def write_kusuoka_csv(path, graph, gram, metric, config_hash):
    dim = gram.matrices.shape[1]
    columns = [
        ("cell", np.arange(graph.n_cells), "int"),
        ("word", [format_word(w) for w in graph.cells], "str"),
        ("mass", metric.masses, "float"),
    ]
    for i in range(dim):
        for j in range(dim):
            columns.append((f"z{i}{j}", metric.matrices[:, i, j], "float"))
    for i in range(dim):
        columns.append((f"eig{i}", metric.eigenvalues[:, i], "float"))
    write_table(path, columns, {"config": config_hash,
                                "fractal": graph.spec.name,
                                "level": graph.level})


def write_penergy_csv(path, rows, config_hash):
    """rows: (level, p, energy, ratio_to_previous)."""
    columns = [
        ("level", [r[0] for r in rows], "int"),
        ("p", [r[1] for r in rows], "float"),
        ("p_energy", [r[2] for r in rows], "float"),
        ("ratio", [r[3] for r in rows], "float"),
    ]
    write_table(path, columns, {"config": config_hash})


def write_series_csv(path, named_columns, config_hash, meta=None):
    """named_columns: list of (name, float array)."""
    columns = [(name, np.asarray(vals, dtype=float), "float")
               for name, vals in named_columns]
    info = {"config": config_hash}
    info.update(meta or {})
    write_table(path, columns, info)


def write_snapshots_csv(path, graph, result, config_hash):
    columns = [
        ("step", result.snapshot_steps, "int"),
        ("time", result.times, "float"),
    ]
    for v in range(graph.n_vertices):
        columns.append((f"v{v}", result.snapshots[:, v], "float"))
    write_table(path, columns, {"config": config_hash,
                                "path_index": result.path_index,
                                "dt": format_float(result.dt),
                                "seed": result.seed})
