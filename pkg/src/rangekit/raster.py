"""Spherical range-view projection and its inverse.

Projection of a point with depth d onto an H x W raster::

    u = 0.5 * (1 - atan2(y, x) / pi) * W
    v = (1 - (asin(z / d) + fov_down) / (fov_up + fov_down)) * H

Columns are ``floor(u) mod W``; rows are ``floor(v)`` and a point is in view
only when ``0 <= floor(v) < H`` (checked before any clamping). When several
points share a grid the nearest one wins and the rest are *displaced*.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import IGNORE_LABEL, NO_INDEX, Point, PointCloud, Projection, RangeImage, SensorSpec

# Choices the projection formula leaves open; named so tests can refer to them.
QUANTIZE = "floor"
COLLISION_WINNER = "nearest"


class UndefinedAngleError(ValueError):
    pass


def _xyz(p) -> tuple:
    if isinstance(p, Point):
        return p.x, p.y, p.z
    x, y, z = np.asarray(p, dtype=np.float64)[:3]
    return float(x), float(y), float(z)


def depth(p) -> float:
    x, y, z = _xyz(p)
    return math.sqrt(x * x + y * y + z * z)


def azimuth(p) -> float:
    """Azimuth in (-pi, pi]."""
    x, y, _ = _xyz(p)
    if x == 0.0 and y == 0.0:
        raise UndefinedAngleError("azimuth undefined on the z axis")
    theta = math.atan2(y, x)
    return math.pi if theta == -math.pi else theta


def inclination(p) -> float:
    x, y, z = _xyz(p)
    if x == 0.0 and y == 0.0:
        raise UndefinedAngleError("inclination undefined on the z axis")
    return math.atan(z / math.hypot(x, y))


def azimuths(xyz: np.ndarray) -> np.ndarray:
    """Vectorized azimuth in (-pi, pi]; ``atan2(0, 0) = 0`` on the z axis."""
    theta = np.arctan2(xyz[:, 1], xyz[:, 0])
    return np.where(theta == -np.pi, np.pi, theta)


def depths(xyz: np.ndarray) -> np.ndarray:
    return np.sqrt((xyz * xyz).sum(axis=1))


@dataclass(frozen=True)
class ProjectionResult:
    u: float
    v: float
    col: int
    row: int
    in_fov: bool


def column_fraction(xyz: np.ndarray) -> np.ndarray:
    """``0.5 * (1 - theta / pi)`` in [0, 1]; multiplying by W gives u.

    Kept separate so that u for 2W is exactly twice u for W.
    """
    return 0.5 * (1.0 - azimuths(xyz) / np.pi)


def row_coordinate(xyz: np.ndarray, spec: SensorSpec, d: np.ndarray | None = None) -> np.ndarray:
    if d is None:
        d = depths(xyz)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.clip(xyz[:, 2] / d, -1.0, 1.0)
    return (1.0 - (np.arcsin(ratio) + spec.fov_down_rad) / spec.fov_rad) * spec.height


def project_points(xyz: np.ndarray, spec: SensorSpec):
    """Vectorized projection. Returns ``(u, v, cols, rows, in_fov, defined)``.

    ``defined`` is False only at the origin, where u and v are NaN and
    cols/rows are ``NO_INDEX``.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    d = depths(xyz)
    defined = d > 0
    u = column_fraction(xyz) * spec.width
    v = row_coordinate(xyz, spec, d)
    u = np.where(defined, u, np.nan)
    v = np.where(defined, v, np.nan)
    cols = np.full(len(xyz), NO_INDEX, dtype=np.int64)
    rows = np.full(len(xyz), NO_INDEX, dtype=np.int64)
    cols[defined] = np.floor(u[defined]).astype(np.int64) % spec.width
    rows[defined] = np.floor(v[defined]).astype(np.int64)
    in_fov = defined & (rows >= 0) & (rows < spec.height)
    return u, v, cols, rows, in_fov, defined


def project_point(p, spec: SensorSpec) -> ProjectionResult:
    x, y, z = _xyz(p)
    if x == 0.0 and y == 0.0 and z == 0.0:
        raise UndefinedAngleError("projection undefined at the origin")
    # same array arithmetic as project_points, without the batch bookkeeping
    xyz = np.array([[x, y, z]])
    u = float(column_fraction(xyz)[0] * spec.width)
    v = float(row_coordinate(xyz, spec, depths(xyz))[0])
    row = math.floor(v)
    return ProjectionResult(u, v, math.floor(u) % spec.width, row, 0 <= row < spec.height)


def build_range_image(cloud: PointCloud, spec: SensorSpec, rows, cols, in_fov) -> RangeImage:
    """Assign in-view points to grids (nearest wins) and form the six channels.

    ``rows``/``cols`` are precomputed grid coordinates for every point, which
    lets view rasterization reuse this with its own column mapping.
    """
    h, w = spec.height, spec.width
    n = len(cloud)
    d = depths(cloud.xyz)
    idx = np.flatnonzero(in_fov)
    # nearest first; equal depths resolved by point index
    order = idx[np.lexsort((idx, d[idx]))]
    flat = rows[order] * w + cols[order]
    _, first = np.unique(flat, return_index=True)
    winners = order[first]
    lost = np.ones(len(order), dtype=bool)
    lost[first] = False
    displaced = np.sort(order[lost])

    grid_to_point = np.full(h * w, NO_INDEX, dtype=np.int64)
    grid_to_point[flat[first]] = winners
    grid_to_point = grid_to_point.reshape(h, w)

    channels = np.zeros((6, h, w))
    r, c = rows[winners], cols[winners]
    channels[0:3, r, c] = cloud.xyz[winners].T
    channels[3, r, c] = d[winners]
    channels[4, r, c] = cloud.intensity[winners]
    channels[5, r, c] = 1.0

    label_grid = None
    if cloud.labels is not None:
        label_grid = np.full((h, w), IGNORE_LABEL, dtype=np.int64)
        label_grid[r, c] = cloud.labels[winners]

    projection = Projection(rows, cols, in_fov, grid_to_point, displaced)
    assert len(displaced) + len(winners) + (n - int(in_fov.sum())) == n
    return RangeImage(channels, spec, label_grid, projection)


def rasterize(cloud: PointCloud, spec: SensorSpec) -> RangeImage:
    """Rasterize ``cloud``; origin points are counted out of view."""
    _, _, cols, rows, in_fov, _ = project_points(cloud.xyz, spec)
    return build_range_image(cloud, spec, rows, cols, in_fov)


def grid_lookup(projection: Projection, height: int) -> tuple:
    """Per-point (row, col) for inverse transfer: rows clamped into the raster."""
    rows = np.clip(projection.rows, 0, height - 1)
    defined = projection.cols != NO_INDEX
    return rows, projection.cols, defined


def unproject(img: RangeImage, grid_labels, cloud: PointCloud | None = None,
              fill: int = IGNORE_LABEL) -> np.ndarray:
    """Transfer grid labels back to every point of the rasterized cloud.

    Each point takes the label of the grid it projects into, with the row
    clamped to the raster; winners, displaced and out-of-view points alike.
    Points without a projection (the origin) receive ``fill``.
    """
    grid_labels = np.asarray(grid_labels)
    if grid_labels.shape != img.shape:
        raise ValueError(f"grid labels shape {grid_labels.shape} != raster {img.shape}")
    if img.projection is None:
        raise ValueError("range image carries no point bookkeeping")
    proj = img.projection
    if cloud is not None and len(cloud) != proj.n_points:
        raise ValueError(f"cloud has {len(cloud)} points, raster was built from {proj.n_points}")
    rows, cols, defined = grid_lookup(proj, img.shape[0])
    out = np.full(proj.n_points, fill, dtype=np.int64)
    out[defined] = grid_labels[rows[defined], cols[defined]]
    return out
