"""Sub-cloud re-rasterization and k-NN label smoothing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .raster import depths, grid_lookup, rasterize, unproject
from .types import IGNORE_LABEL, PointCloud, RangeImage, SensorSpec

DEFAULT_NUM_SUB = 3


@dataclass(frozen=True)
class KnnParams:
    k: int = 5
    window: int = 5
    range_cutoff: float = 1.0

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 1, got {self.window}")
        if not 1 <= self.k <= self.window ** 2:
            raise ValueError(f"k must lie in [1, window^2], got {self.k}")
        if self.range_cutoff < 0:
            raise ValueError("range cutoff must be >= 0")


def subcloud_indices(n: int, num_sub: int) -> list:
    if num_sub < 1:
        raise ValueError(f"num_sub must be >= 1, got {num_sub}")
    return [np.arange(j, n, num_sub) for j in range(num_sub)]


def subcloud_split(cloud: PointCloud, num_sub: int) -> list:
    """Sub-cloud j holds points j, j + num_sub, j + 2 num_sub, ..."""
    return [cloud.subset(idx) for idx in subcloud_indices(len(cloud), num_sub)]


def subcloud_stitch(predictions: Sequence[np.ndarray], num_sub: int, n: int) -> np.ndarray:
    if len(predictions) != num_sub:
        raise ValueError(f"expected {num_sub} sub-cloud predictions, got {len(predictions)}")
    out = np.zeros(n, dtype=np.int64)
    for j, (idx, pred) in enumerate(zip(subcloud_indices(n, num_sub), predictions)):
        pred = np.asarray(pred)
        if len(pred) != len(idx):
            raise ValueError(f"sub-cloud {j}: {len(pred)} predictions for {len(idx)} points")
        out[j::num_sub] = pred
    return out


def knn_smooth(img: RangeImage, grid_labels, cloud: PointCloud, k: int = 5, window: int = 5,
               range_cutoff: float = 1.0, fill: int = IGNORE_LABEL) -> np.ndarray:
    """Vote each point's label among nearby occupied grids.

    Candidates are the occupied grids in a ``window x window`` neighbourhood
    of the point's grid (columns wrap, rows do not). The ``k`` candidates with
    the smallest absolute depth difference are kept, those further than
    ``range_cutoff`` dropped, and the most frequent label wins; ties go to the
    label with the smaller depth difference, then the smaller id. Points with
    no surviving candidate fall back to :func:`unproject`.
    """
    params = KnnParams(k, window, range_cutoff)
    grid_labels = np.asarray(grid_labels)
    fallback = unproject(img, grid_labels, cloud, fill)
    h, w = img.shape
    rows, cols, defined = grid_lookup(img.projection, h)
    pts = np.flatnonzero(defined)
    if len(pts) == 0:
        return fallback

    half = params.window // 2
    offs = np.arange(-half, half + 1)
    dr = np.repeat(offs, params.window)
    dc = np.tile(offs, params.window)
    nr = rows[pts, None] + dr[None, :]
    nc = (cols[pts, None] + dc[None, :]) % w
    inside = (nr >= 0) & (nr < h)
    nr = np.clip(nr, 0, h - 1)
    occupied = inside & (img.existence[nr, nc] > 0)
    delta = np.abs(img.depth[nr, nc] - depths(cloud.xyz)[pts, None])
    delta = np.where(occupied, delta, np.inf)
    labels = grid_labels[nr, nc]

    # k nearest by depth difference; stable so equal deltas keep window order
    order = np.argsort(delta, axis=1, kind="stable")[:, : params.k]
    delta = np.take_along_axis(delta, order, axis=1)
    labels = np.take_along_axis(labels, order, axis=1)
    valid = delta <= params.range_cutoff

    same = (labels[:, :, None] == labels[:, None, :]) & valid[:, None, :]
    counts = np.where(valid, same.sum(axis=2), -1)
    best_delta = np.where(same, delta[:, None, :], np.inf).min(axis=2)
    best_delta = np.where(valid, best_delta, np.inf)

    m, kk = labels.shape
    row_id = np.repeat(np.arange(m), kk)
    ranking = np.lexsort((labels.ravel(), best_delta.ravel(), -counts.ravel(), row_id))
    first = ranking.reshape(m, kk)[:, 0]
    voted = labels.ravel()[first]
    has_vote = valid.any(axis=1)

    out = fallback.copy()
    out[pts[has_vote]] = voted[has_vote]
    return out


def range_post(cloud: PointCloud, spec: SensorSpec, num_sub: int,
               grid_predictor: Callable[[RangeImage], np.ndarray],
               knn_params: Optional[KnnParams] = KnnParams()) -> np.ndarray:
    """Split into stride sub-clouds, rasterize and predict each, smooth, stitch back.

    ``knn_params=None`` skips smoothing and transfers labels with :func:`unproject`.
    """
    preds = []
    for sub in subcloud_split(cloud, num_sub):
        img = rasterize(sub, spec)
        grid = np.asarray(grid_predictor(img))
        if knn_params is None:
            preds.append(unproject(img, grid, sub))
        else:
            preds.append(knn_smooth(img, grid, sub, knn_params.k, knn_params.window,
                                    knn_params.range_cutoff))
    return subcloud_stitch(preds, num_sub, len(cloud))
