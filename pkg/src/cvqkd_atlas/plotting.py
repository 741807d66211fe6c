"""Static SVG renderings of boundary meshes: fixed-T slices and T-xi heatmaps."""

from __future__ import annotations

import io
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from .boundary import BoundaryMesh  # noqa: E402
from .surface import PolySurface, evaluate_surface  # noqa: E402

PLOT_KINDS = ("slice", "heatmap")
_MARKERS = ("x", "o", None, "s", "^", "d")
_COLORS = ("tab:red", "gold", "tab:blue", "tab:green", "tab:purple", "tab:brown")


def _svg_bytes(fig) -> bytes:
    buf = io.BytesIO()
    # fixed hash salt and no date: identical inputs give identical bytes
    with plt.rc_context({"svg.hashsalt": "cvqkd-atlas", "svg.fonttype": "path"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def slice_figure(
    meshes: Sequence[BoundaryMesh],
    T_values: Sequence[float] = (0.5, 0.75, 1.0),
    surfaces: Sequence[PolySurface] = (),
):
    """alpha_min against xi at the mesh rows nearest to each requested T.

    One curve per (mesh, T); absent cells break the curve.  Surfaces, if
    given, are drawn dashed over their fit region at the same T values.
    """
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for mi, mesh in enumerate(meshes):
        color = _COLORS[mi % len(_COLORS)]
        for ti, T in enumerate(T_values):
            i, _ = mesh.nearest_index(T, 0.0)
            ax.plot(
                mesh.grid.xi_axis,
                mesh.alpha_min[i],
                color=color,
                marker=_MARKERS[ti % len(_MARKERS)],
                markersize=4,
                linewidth=1.2,
                label=f"{mesh.protocol}, T={mesh.grid.T_axis[i]:.3g}",
            )
    for si, s in enumerate(surfaces):
        xi_lo, xi_hi = s.region.xi_bounds
        xi_hi = min(xi_hi, 0.5)
        xs = np.linspace(xi_lo, xi_hi, 200)
        for T in T_values:
            ax.plot(
                xs,
                evaluate_surface(s, np.full_like(xs, T), xs),
                linestyle="--",
                color=_COLORS[si % len(_COLORS)],
                linewidth=0.8,
                label=f"{s.protocol} fit, T={T:.3g}",
            )
    ax.set_xlabel("excess noise xi (SNU)")
    ax.set_ylabel("boundary alpha (SNU)")
    ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return fig


def heatmap_figure(meshes: Sequence[BoundaryMesh]):
    """alpha_min over the T-xi plane; cut-off cells shaded grey, failed cells black."""
    n = len(meshes)
    fig, axes = plt.subplots(1, n, figsize=(5.0 * n, 4.4), squeeze=False)
    cmap = plt.get_cmap("viridis")
    for ax, mesh in zip(axes[0], meshes):
        xi = np.asarray(mesh.grid.xi_axis)
        T = np.asarray(mesh.grid.T_axis)
        shade = np.where(mesh.present, np.nan, np.where(mesh.failed, 1.0, 0.0))
        ax.pcolormesh(xi, T, shade, cmap=ListedColormap(["0.8", "black"]), vmin=0, vmax=1, shading="nearest")
        im = ax.pcolormesh(
            xi,
            T,
            np.ma.masked_invalid(mesh.alpha_min),
            cmap=cmap,
            vmin=mesh.grid.alpha_axis[0],
            vmax=mesh.grid.alpha_axis[-1],
            shading="nearest",
        )
        ax.set_title(f"{mesh.protocol} (grey: no positive key)", fontsize=9)
        ax.set_xlabel("excess noise xi (SNU)")
        ax.set_ylabel("transmittance T")
        fig.colorbar(im, ax=ax, label="boundary alpha (SNU)")
    fig.tight_layout()
    return fig


def render_svg(kind: str, meshes: Sequence[BoundaryMesh], T_values=(0.5, 0.75, 1.0), surfaces=()) -> bytes:
    if kind == "slice":
        return _svg_bytes(slice_figure(meshes, T_values, surfaces))
    if kind == "heatmap":
        return _svg_bytes(heatmap_figure(meshes))
    raise ValueError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")
