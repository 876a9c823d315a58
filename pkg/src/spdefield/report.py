"""Figure rendering for CLI artifacts.

Every plot goes straight to a file through the Agg backend so headless runs
work; sizes, dpi and color maps are pinned so reruns of the same job write
the same bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import matplotlib.tri as mtri
import numpy as np

__all__ = [
    "mesh_figure",
    "field_figure",
    "curve_figure",
    "samples_figure",
    "mean_sd_figure",
]

DPI = 110


def _triangulation(mesh):
    return mtri.Triangulation(
        mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles
    )


def _save(fig, path):
    fig.savefig(path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)


def mesh_figure(mesh, path, title="mesh"):
    """Triangulation wireframe colored by per-triangle minimum angle."""
    fig, ax = plt.subplots(figsize=(7, 6))
    tri = _triangulation(mesh)
    angles = mesh.min_angles_deg()
    tpc = ax.tripcolor(
        tri, facecolors=angles, cmap="viridis", vmin=0.0, vmax=60.0,
        edgecolors="k", linewidth=0.2,
    )
    fig.colorbar(tpc, ax=ax, label="min angle (deg)")
    ax.set_aspect("equal")
    ax.set_title(f"{title}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles")
    _save(fig, path)


def field_figure(mesh, values, path, title="field"):
    """Vertex field on the mesh via Gouraud-shaded triangles."""
    fig, ax = plt.subplots(figsize=(7, 6))
    tri = _triangulation(mesh)
    tpc = ax.tripcolor(tri, np.asarray(values, dtype=np.float64),
                       shading="gouraud", cmap="RdBu_r")
    fig.colorbar(tpc, ax=ax)
    ax.set_aspect("equal")
    ax.set_title(title)
    _save(fig, path)


def mean_sd_figure(mesh, mean, sd, path, title="posterior"):
    fig, axes = plt.subplots(1, 2, figsize=(12, 5))
    tri = _triangulation(mesh)
    for ax, values, label, cmap in (
        (axes[0], mean, "mean", "RdBu_r"),
        (axes[1], sd, "sd", "viridis"),
    ):
        tpc = ax.tripcolor(tri, np.asarray(values, dtype=np.float64),
                           shading="gouraud", cmap=cmap)
        fig.colorbar(tpc, ax=ax)
        ax.set_aspect("equal")
        ax.set_title(f"{title} {label}")
    _save(fig, path)


def samples_figure(draws, path, title="samples"):
    """Fallback view when no geometry is available: node profiles of the
    first few draws plus the pooled histogram."""
    draws = np.atleast_2d(draws)
    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    for row in draws[:5]:
        axes[0].plot(row, linewidth=0.8)
    axes[0].set_xlabel("node")
    axes[0].set_title(title)
    axes[1].hist(draws.ravel(), bins=40, color="steelblue")
    axes[1].set_title("pooled values")
    _save(fig, path)


def curve_figure(x, curves, path, title="", xlabel="", ylabel=""):
    """Labeled line plots on shared x, e.g. binned error curves."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, y in curves.items():
        ax.plot(x, y, marker="o", markersize=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(curves) > 1:
        ax.legend()
    ax.grid(True, alpha=0.3)
    _save(fig, path)
