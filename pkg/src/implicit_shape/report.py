"""Static figures of a run, rendered to files with the Agg backend."""

from __future__ import annotations

import glob
import os
import re

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .level_geom import read_curve  # noqa: E402
from .optimizer import read_history  # noqa: E402

CURVE_RE = re.compile(r"curve_k(\d{4})_c(\d+)\.txt$")


def collect_curves(output_dir):
    """{k: [points of each component]} from the curve files of a run."""
    curves = {}
    for path in sorted(glob.glob(os.path.join(output_dir, "curve_k*_c*.txt"))):
        m = CURVE_RE.search(path)
        if m is None:
            continue
        _, pts, _ = read_curve(path)
        curves.setdefault(int(m.group(1)), []).append(pts)
    return curves


def plot_domains(curves, path, rect=(-1, 1, -1, 1), reference=None, n_show=4):
    """Zero sets of the first, some intermediate and the last iterates."""
    ks = sorted(curves)
    if not ks:
        return None
    picks = sorted(set(ks[int(round(i))] for i in np.linspace(0, len(ks) - 1,
                                                               min(n_show, len(ks)))))
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    colors = plt.cm.viridis(np.linspace(0, 0.9, len(picks)))
    for k, c in zip(picks, colors):
        for i, pts in enumerate(curves[k]):
            closed = np.vstack([pts, pts[:1]])
            ax.plot(closed[:, 0], closed[:, 1], color=c, lw=1.2,
                    label=f"k={k}" if i == 0 else None)
    if reference is not None:
        cx, cy, r = reference
        t = np.linspace(0, 2 * np.pi, 400)
        ax.plot(cx + r * np.cos(t), cy + r * np.sin(t), "k--", lw=0.8, label="reference")
    ax.set_xlim(rect[0], rect[1])
    ax.set_ylim(rect[2], rect[3])
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title("zero level sets of g")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_history(history_csv, path):
    rows = read_history(history_csv)
    if not rows:
        return None
    k = [r["k"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(k, [r["J"] for r in rows], "o-", label="J")
    ax.semilogy(k, [r["t1"] for r in rows], "s-", label="t1")
    ax.semilogy(k, [r["t2"] for r in rows], "^-", label="t2")
    ax.set_xlabel("iteration k")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_field(space, values, path, title="", levels=30):
    """Filled contours of a P3 field at the mesh vertices, zero level in black."""
    mesh = space.mesh
    z = np.asarray(values)[space.vertex_nodes]
    fig, ax = plt.subplots(figsize=(5.5, 4.8))
    tc = ax.tricontourf(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles, z,
                        levels=levels, cmap="RdBu_r")
    ax.tricontour(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles, z,
                  levels=[0.0], colors="k", linewidths=1.0)
    fig.colorbar(tc, ax=ax)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_run(output_dir, space=None, G=None, Y=None, rect=(-1, 1, -1, 1), reference=None):
    """Write domains.png, history.png and, given the fields, the final g / y plots."""
    out = []
    p = plot_domains(collect_curves(output_dir), os.path.join(output_dir, "domains.png"),
                     rect, reference)
    if p:
        out.append(p)
    hist = os.path.join(output_dir, "history.csv")
    if os.path.exists(hist):
        out.append(plot_history(hist, os.path.join(output_dir, "history.png")))
    if space is not None and G is not None:
        out.append(plot_field(space, G, os.path.join(output_dir, "g_final.png"), "final g"))
    if space is not None and Y is not None:
        out.append(plot_field(space, Y, os.path.join(output_dir, "y_final.png"), "final y"))
    return out
