"""Grid-fill vs. point-retention sweep over raster widths."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .raster import rasterize
from .types import PointCloud, SensorSpec

DEFAULT_WIDTHS = (256, 512, 768, 1024, 1280, 1536, 1792, 1920, 2048, 2560, 3072, 4096)


@dataclass(frozen=True)
class OccupancyRow:
    width: int
    occupied: int
    grids: int
    winners: int
    points: int

    @property
    def grid_fill(self) -> float:
        return self.occupied / self.grids

    @property
    def point_retention(self) -> float:
        return self.winners / self.points if self.points else 0.0


def occupancy_counts(cloud: PointCloud, spec: SensorSpec) -> OccupancyRow:
    img = rasterize(cloud, spec)
    occupied = img.projection.occupied
    return OccupancyRow(spec.width, occupied, spec.height * spec.width, occupied, len(cloud))


def occupancy_point(cloud: PointCloud, spec: SensorSpec) -> tuple:
    """``(grid_fill, point_retention)``; out-of-view points are not retained."""
    row = occupancy_counts(cloud, spec)
    return row.grid_fill, row.point_retention


def merge_rows(rows: Sequence[OccupancyRow]) -> OccupancyRow:
    """Pool counts of several scans at one width."""
    return OccupancyRow(
        rows[0].width,
        sum(r.occupied for r in rows),
        sum(r.grids for r in rows),
        sum(r.winners for r in rows),
        sum(r.points for r in rows),
    )


def occupancy_curve(cloud: PointCloud, height: int, fov: tuple,
                    widths: Sequence[int]) -> list:
    """One :class:`OccupancyRow` per width; ``fov`` is ``(fov_up, fov_down)`` in degrees."""
    widths = list(widths)
    if not widths:
        raise ValueError("widths must be non-empty")
    if any(b <= a for a, b in zip(widths, widths[1:])):
        raise ValueError("widths must be strictly ascending")
    return [occupancy_counts(cloud, SensorSpec(fov[0], fov[1], height, w)) for w in widths]


def find_crossover(table: Sequence[OccupancyRow]) -> Optional[tuple]:
    """First consecutive width pair over which ``grid_fill - point_retention`` changes sign.

    A row where the difference is exactly zero counts as a sign change with
    its neighbour. Returns ``None`` if the curves never meet.
    """
    diffs = [np.sign(r.grid_fill - r.point_retention) for r in table]
    for i in range(len(table) - 1):
        a, b = diffs[i], diffs[i + 1]
        if a != b or a == 0:
            return table[i].width, table[i + 1].width
    return None


def format_table(table: Sequence[OccupancyRow]) -> str:
    lines = ["width,grid_fill,point_retention,occupied,points"]
    for r in table:
        lines.append(f"{r.width},{r.grid_fill:.6f},{r.point_retention:.6f},{r.occupied},{r.points}")
    return "\n".join(lines) + "\n"


def format_plot_data(table: Sequence[OccupancyRow]) -> str:
    """Whitespace-separated columns: width, grid fill (%), point retention (%)."""
    lines = ["# width grid_fill_pct point_retention_pct"]
    for r in table:
        lines.append(f"{r.width} {100 * r.grid_fill:.4f} {100 * r.point_retention:.4f}")
    return "\n".join(lines) + "\n"
