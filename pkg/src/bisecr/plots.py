"""Figure rendering for the report outputs (written next to the CSVs)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dataio import DensityRaster
from .sampler import PosteriorSamples
from .simulate import CoverageReport
from .types import TrapArray


def save_density_figure(raster: DensityRaster, traps: TrapArray | None,
                        path) -> None:
    """Grey-scale pixel map of expected activity-centre counts, traps overlaid."""
    fig, ax = plt.subplots(figsize=(6, 6 * raster.ny / max(raster.nx, 1)))
    extent = (raster.x0, raster.x0 + raster.nx * raster.cell,
              raster.y0, raster.y0 + raster.ny * raster.cell)
    im = ax.imshow(raster.values, origin="lower", extent=extent,
                   cmap="Greys", interpolation="nearest")
    if traps is not None:
        ax.plot(traps.coords[:, 0], traps.coords[:, 1], "^",
                markersize=3, color="tab:red", linestyle="none")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.colorbar(im, ax=ax, label="expected activity centres per pixel")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_trace_figure(samples: PosteriorSamples, path) -> None:
    """Small-multiple trace plots of every tracked quantity."""
    cols = samples.param_dict()
    n = len(cols)
    ncols = 2
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(9, 2.0 * nrows),
                             sharex=True, squeeze=False)
    for ax, (name, values) in zip(axes.ravel(), cols.items()):
        ax.plot(values, lw=0.4)
        ax.set_ylabel(name)
    for ax in axes.ravel()[n:]:
        ax.set_visible(False)
    axes[-1, 0].set_xlabel("kept iteration")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_coverage_figure(report: CoverageReport, path) -> None:
    """Bar chart of per-parameter 95% interval coverage."""
    names = list(report.coverage)
    values = [report.coverage[n] for n in names]
    fig, ax = plt.subplots(figsize=(1.0 + 0.8 * len(names), 3.5))
    ax.bar(np.arange(len(names)), values, color="0.6")
    ax.axhline(0.95, color="tab:red", lw=1, linestyle="--", label="nominal 0.95")
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("coverage")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
