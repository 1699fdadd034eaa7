"""Azimuth partition of a scan into Z views, per-view rasters and stitching.

Bins are half-open ``[-pi + k * 2pi/Z, -pi + (k + 1) * 2pi/Z)`` with
``theta = pi`` folded into the last view. Inside a view the column coordinate
is the full-circle one at width ``Z * W_train`` shifted so the view's window
starts at column 0; orientation is unchanged (larger azimuth, smaller u).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .raster import azimuths, build_range_image, column_fraction, depths, row_coordinate, unproject
from .types import IGNORE_LABEL, NO_INDEX, PointCloud, RangeImage, SensorSpec

BIN_ORIGIN = -math.pi


@dataclass(frozen=True, eq=False)
class ViewPartition:
    z: int
    assignments: np.ndarray  # view id per point, NO_INDEX where azimuth is undefined

    @property
    def span(self) -> float:
        return 2 * math.pi / self.z

    @property
    def origin(self) -> float:
        return BIN_ORIGIN

    def window(self, view_id: int) -> tuple:
        return BIN_ORIGIN + view_id * self.span, BIN_ORIGIN + (view_id + 1) * self.span

    def indices(self, view_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == view_id)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments[self.assignments >= 0], minlength=self.z)


@dataclass(frozen=True, eq=False)
class ViewRaster:
    view_id: int
    image: RangeImage
    window: tuple
    point_indices: np.ndarray  # global indices of the view's points, in image order


def partition(cloud: PointCloud, z: int) -> ViewPartition:
    if z < 1:
        raise ValueError(f"view count must be >= 1, got {z}")
    theta = azimuths(cloud.xyz)
    views = np.floor((theta + math.pi) / (2 * math.pi / z)).astype(np.int64)
    views = np.clip(views, 0, z - 1)
    views[depths(cloud.xyz) == 0] = NO_INDEX
    return ViewPartition(z, views)


def rasterize_view(cloud: PointCloud, part: ViewPartition, view_id: int,
                   spec: SensorSpec, width_train: int) -> ViewRaster:
    """Rasterize one view's points onto an ``H x width_train`` grid.

    ``spec.width`` is ignored; the view raster always has ``width_train`` columns.
    """
    if not 0 <= view_id < part.z:
        raise ValueError(f"view id {view_id} outside [0, {part.z})")
    idx = part.indices(view_id)
    sub = cloud.subset(idx)
    view_spec = spec.with_width(width_train)
    u_full = column_fraction(sub.xyz) * (part.z * width_train)
    cols = np.floor(u_full).astype(np.int64)
    if part.z == 1:
        cols %= width_train
    else:
        cols = np.clip(cols - (part.z - 1 - view_id) * width_train, 0, width_train - 1)
    rows = np.floor(row_coordinate(sub.xyz, view_spec)).astype(np.int64)
    in_fov = (rows >= 0) & (rows < view_spec.height)
    image = build_range_image(sub, view_spec, rows, cols, in_fov)
    return ViewRaster(view_id, image, part.window(view_id), idx)


def split_by_view(labels: np.ndarray, part: ViewPartition) -> list:
    labels = np.asarray(labels)
    return [labels[part.indices(k)] for k in range(part.z)]


def stitch(view_predictions: Sequence[np.ndarray], part: ViewPartition,
           fill: int = IGNORE_LABEL) -> np.ndarray:
    """Scatter per-view predictions back to scan order; unassigned points get ``fill``."""
    if len(view_predictions) != part.z:
        raise ValueError(f"expected {part.z} view predictions, got {len(view_predictions)}")
    out = np.full(len(part.assignments), fill, dtype=np.int64)
    for k, pred in enumerate(view_predictions):
        idx = part.indices(k)
        pred = np.asarray(pred)
        if len(pred) != len(idx):
            raise ValueError(f"view {k}: {len(pred)} predictions for {len(idx)} points")
        out[idx] = pred
    return out


def infer_all_views(cloud: PointCloud, z: int, spec: SensorSpec, width_train: int,
                    grid_predictor: Callable[[ViewRaster], np.ndarray]) -> np.ndarray:
    part = partition(cloud, z)
    preds = []
    for k in range(z):
        view = rasterize_view(cloud, part, k, spec, width_train)
        grid = grid_predictor(view)
        preds.append(unproject(view.image, grid))
    return stitch(preds, part)


def view_manifest(part: ViewPartition, n_points: int, width_full: int, width_train: int,
                  files: Sequence[str]) -> str:
    lines = [
        f"views = {part.z}",
        f"bin_origin = {BIN_ORIGIN!r}",
        f"bin_span = {part.span!r}",
        "view_order = " + ",".join(str(k) for k in range(part.z)),
        f"points = {n_points}",
        f"width_full = {width_full}",
        f"width_train = {width_train}",
        "view_sizes = " + ",".join(str(int(s)) for s in part.sizes()),
        "view_files = " + ",".join(files),
    ]
    return "\n".join(lines) + "\n"
