"""File-based matplotlib rendering for graphs, functions, and run series.

Everything renders through the Agg backend straight to PNG next to the
delimited output, one figure per file.  Gasket-type graphs draw as triangle
meshes (cells are exactly the triangles), interval graphs as line plots.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402

_DPI = 150


def _save(fig, path):
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)


def plot_graph(graph, path):
    fig, ax = plt.subplots(figsize=(5.5, 5))
    segs = np.stack([graph.coords[graph.edge_u], graph.coords[graph.edge_v]], axis=1)
    ax.add_collection(LineCollection(segs, colors="0.55", linewidths=0.7))
    ax.scatter(graph.coords[:, 0], graph.coords[:, 1], s=8, c="C0", zorder=3)
    bnd = list(graph.boundary_ids)
    ax.scatter(graph.coords[bnd, 0], graph.coords[bnd, 1], s=30, c="C3", zorder=4)
    ax.set_aspect("equal")
    ax.set_title(f"{graph.spec.name}, level {graph.level}")
    ax.set_axis_off()
    _save(fig, path)


def plot_function(graph, values, path, title=""):
    values = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 5))
    if graph.spec.n_corners == 2:
        order = np.argsort(graph.coords[:, 0])
        ax.plot(graph.coords[order, 0], values[order], "-", lw=1.2)
        ax.set_xlabel("x")
    else:
        tri = ax.tripcolor(graph.coords[:, 0], graph.coords[:, 1],
                           graph.cell_vertices, values, shading="gouraud",
                           cmap="viridis")
        fig.colorbar(tri, ax=ax, shrink=0.85)
        ax.set_aspect("equal")
        ax.set_axis_off()
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_cell_values(graph, cell_values, path, title="", log=False):
    vals = np.asarray(cell_values, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 5))
    if graph.spec.n_corners == 2:
        x = graph.coords[graph.cell_vertices].mean(axis=1)[:, 0]
        order = np.argsort(x)
        ax.step(x[order], vals[order], where="mid")
        if log:
            ax.set_yscale("log")
        ax.set_xlabel("cell midpoint")
    else:
        shown = np.log10(np.maximum(vals, 1e-300)) if log else vals
        tri = ax.tripcolor(graph.coords[:, 0], graph.coords[:, 1],
                           graph.cell_vertices, facecolors=shown,
                           cmap="magma")
        fig.colorbar(tri, ax=ax, shrink=0.85,
                     label="log10" if log else None)
        ax.set_aspect("equal")
        ax.set_axis_off()
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_spectrum(eigenvalues, path, title="spectrum"):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.step(np.arange(len(eigenvalues)), eigenvalues, where="post", marker=".")
    ax.set_xlabel("index")
    ax.set_ylabel("eigenvalue")
    ax.set_title(title)
    _save(fig, path)


def plot_series(path, x, named_series, xlabel="", ylabel="", logy=False,
                title=""):
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in named_series:
        ax.plot(x, values, label=name, lw=1.2)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(named_series) > 1:
        ax.legend(frameon=False)
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_history(history, path, title="solver history"):
    fig, ax = plt.subplots(figsize=(6, 4))
    if history:
        its = [row[0] for row in history]
        res = [row[3] for row in history]
        ax.semilogy(its, res, ".-")
    ax.set_xlabel("iteration")
    ax.set_ylabel("dual residual")
    ax.set_title(title)
    _save(fig, path)
