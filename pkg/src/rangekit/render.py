"""Correct/incorrect error maps as 8-bit RGB arrays and binary PPM files."""

from __future__ import annotations

import numpy as np

from .raster import depths
from .types import IGNORE_LABEL, PointCloud, RangeImage

GRAY = (128, 128, 128)
RED = (200, 30, 30)
BLACK = (0, 0, 0)


def bev_pixels(xyz: np.ndarray, extent_m: float, px: int):
    """Top-down pixel (row, col) per point for a square ``extent_m`` window centred on the sensor.

    +x points right, +y points up. Returns ``(rows, cols, inside)``.
    """
    if extent_m <= 0:
        raise ValueError("extent must be positive")
    half = extent_m / 2.0
    cols = np.floor((xyz[:, 0] + half) / extent_m * px).astype(np.int64)
    rows = np.floor((half - xyz[:, 1]) / extent_m * px).astype(np.int64)
    inside = (rows >= 0) & (rows < px) & (cols >= 0) & (cols < px)
    return rows, cols, inside


def error_map_bev(cloud: PointCloud, pred, gt, extent_m: float = 50.0, px: int = 512,
                  ignore: int = IGNORE_LABEL) -> np.ndarray:
    """``(px, px, 3)`` uint8 image; the point nearest the sensor decides each pixel."""
    pred = np.asarray(pred).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    if not len(pred) == len(gt) == len(cloud):
        raise ValueError(f"lengths differ: cloud {len(cloud)}, pred {len(pred)}, gt {len(gt)}")
    img = np.zeros((px, px, 3), dtype=np.uint8)
    rows, cols, inside = bev_pixels(cloud.xyz, extent_m, px)
    keep = np.flatnonzero(inside & (gt != ignore))
    if len(keep) == 0:
        return img
    d = depths(cloud.xyz)[keep]
    order = keep[np.lexsort((keep, d))]
    flat = rows[order] * px + cols[order]
    _, first = np.unique(flat, return_index=True)
    win = order[first]
    colors = np.where((pred[win] == gt[win])[:, None], GRAY, RED).astype(np.uint8)
    img[rows[win], cols[win]] = colors
    return img


def error_map_range(img: RangeImage, grid_pred, grid_gt, ignore: int = IGNORE_LABEL) -> np.ndarray:
    """``(H, W, 3)`` uint8 image: black where empty (or ignored), gray correct, red wrong."""
    grid_pred = np.asarray(grid_pred)
    grid_gt = np.asarray(grid_gt)
    if grid_pred.shape != img.shape or grid_gt.shape != img.shape:
        raise ValueError(f"grid shapes {grid_pred.shape}, {grid_gt.shape} != raster {img.shape}")
    out = np.zeros(img.shape + (3,), dtype=np.uint8)
    shown = img.occupied_mask & (grid_gt != ignore)
    correct = grid_pred == grid_gt
    out[shown & correct] = GRAY
    out[shown & ~correct] = RED
    return out


def to_ppm(image: np.ndarray) -> bytes:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    h, w, _ = image.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + image.tobytes()


def write_ppm(path, image: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(to_ppm(image))


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P6" or parts[3] != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(parts[1]), int(parts[2])
    data = raw[len(raw) - 3 * w * h:]
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)


def count_color(image: np.ndarray, color) -> int:
    return int((image == np.asarray(color, dtype=np.uint8)).all(axis=2).sum())
