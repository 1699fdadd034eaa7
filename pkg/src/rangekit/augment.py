"""Point-level ("common") and grid-level range-view augmentations.

Every stochastic op takes an explicit ``numpy.random.Generator``; identical
seeds give bit-identical outputs. Grid ops move channels and label grids
together and never blend values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .io import FormatError, read_kv
from .types import IGNORE_LABEL, PointCloud, RangeImage

# Rare SemanticKITTI training ids pasted by default: bicycle .. motorcyclist.
DEFAULT_TAIL_CLASSES = (2, 3, 4, 5, 6, 7, 8)


@dataclass(frozen=True)
class AugmentConfig:
    jitter: float = 0.3
    scale: float = 0.05
    drop: float = 0.1
    k_mix: tuple = (2, 3, 4, 5, 6)
    k_union: float = 0.5
    tail_classes: tuple = DEFAULT_TAIL_CLASSES
    shift_range: tuple = (0.25, 0.75)
    # mix, union, paste, shift
    range_probs: tuple = (0.9, 0.2, 0.9, 1.0)
    # scaling, rotation, jittering, flipping, dropping
    common_probs: tuple = (1.0, 1.0, 1.0, 1.0, 0.9)

    def __post_init__(self):
        for name in ("k_mix", "tail_classes", "shift_range", "range_probs", "common_probs"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        rates = {"scale": self.scale, "drop": self.drop, "k_union": self.k_union}
        rates.update({f"range_probs[{i}]": p for i, p in enumerate(self.range_probs)})
        rates.update({f"common_probs[{i}]": p for i, p in enumerate(self.common_probs)})
        for name, value in rates.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} = {value} outside [0, 1]")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        if len(self.range_probs) != 4 or len(self.common_probs) != 5:
            raise ValueError("range_probs needs 4 entries, common_probs 5")
        lo, hi = self.shift_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"shift range {self.shift_range} must satisfy 0 <= low <= high <= 1")
        if not self.k_mix or min(self.k_mix) < 1:
            raise ValueError("k_mix entries must be >= 1")

    def describe(self) -> dict:
        return {
            "jitter": self.jitter,
            "scale": self.scale,
            "drop": self.drop,
            "k_mix": ",".join(map(str, self.k_mix)),
            "k_union": self.k_union,
            "tail_classes": ",".join(map(str, self.tail_classes)),
            "shift_range": ",".join(map(str, self.shift_range)),
            "range_probs": ",".join(map(str, self.range_probs)),
            "common_probs": ",".join(map(str, self.common_probs)),
        }


_FLOAT_KEYS = ("jitter", "scale", "drop", "k_union")
_TUPLE_KEYS = {
    "k_mix": int,
    "tail_classes": int,
    "shift_range": float,
    "range_probs": float,
    "common_probs": float,
}


def augment_config_from_kv(kv: dict, source="<config>") -> AugmentConfig:
    kwargs = {}
    try:
        for key, value in kv.items():
            if key in _FLOAT_KEYS:
                kwargs[key] = float(value)
            elif key in _TUPLE_KEYS:
                cast = _TUPLE_KEYS[key]
                kwargs[key] = tuple(cast(v) for v in value.replace(",", " ").split())
            else:
                raise FormatError(f"{source}: unknown key '{key}'")
        return AugmentConfig(**kwargs)
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{source}: {exc}") from None


def read_augment_config(path) -> AugmentConfig:
    return augment_config_from_kv(read_kv(path), path)


# -- point-level ---------------------------------------------------------


def random_scaling(cloud: PointCloud, r_s: float, rng: np.random.Generator) -> PointCloud:
    """Scale x and y by a factor in [1, 1 + r_s], inverted half of the time."""
    s = rng.uniform(1.0, 1.0 + r_s)
    if rng.random() < 0.5:
        s = 1.0 / s
    return scale_xy(cloud, s)


def scale_xy(cloud: PointCloud, s: float) -> PointCloud:
    xyz = cloud.xyz.copy()
    xyz[:, 0] *= s
    xyz[:, 1] *= s
    return cloud.replace(xyz=xyz)


def global_rotation(cloud: PointCloud, rng: np.random.Generator) -> PointCloud:
    angle = np.deg2rad(rng.random() * 360.0)
    return rotate_xy(cloud, angle)


def rotate_xy(cloud: PointCloud, angle: float) -> PointCloud:
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, s], [-s, c]])
    xyz = cloud.xyz.copy()
    xyz[:, :2] = xyz[:, :2] @ rot
    return cloud.replace(xyz=xyz)


def random_jittering(cloud: PointCloud, r_j: float, rng: np.random.Generator) -> PointCloud:
    """Translate the whole cloud by one clipped normal offset (one draw per axis)."""
    offset = np.clip(rng.normal(0.0, r_j, 3), -3 * r_j, 3 * r_j)
    return cloud.replace(xyz=cloud.xyz + offset)


FLIP_NONE, FLIP_X, FLIP_Y, FLIP_XY = range(4)


def flip(cloud: PointCloud, flip_type: int) -> PointCloud:
    xyz = cloud.xyz.copy()
    if flip_type == FLIP_X:
        xyz[:, 0] = -xyz[:, 0]
    elif flip_type == FLIP_Y:
        xyz[:, 1] = -xyz[:, 1]
    elif flip_type == FLIP_XY:
        xyz[:, :2] = -xyz[:, :2]
    return cloud.replace(xyz=xyz)


def random_flipping(cloud: PointCloud, rng: np.random.Generator) -> PointCloud:
    return flip(cloud, int(rng.choice(4, 1)[0]))


def random_dropping(cloud: PointCloud, r_d: float, rng: np.random.Generator) -> PointCloud:
    """Remove up to ``floor(N * r_d)`` points; labels follow, order is kept."""
    if not 0.0 <= r_d < 1.0:
        raise ValueError(f"drop rate {r_d} outside [0, 1)")
    n = len(cloud)
    limit = int(n * r_d)
    if limit == 0:
        return cloud
    count = rng.integers(0, limit)
    to_drop = np.unique(rng.integers(0, n - 1, size=count))
    keep = np.ones(n, dtype=bool)
    keep[to_drop] = False
    return cloud.subset(keep)


def common_aug(cloud: PointCloud, config: AugmentConfig, rng: np.random.Generator) -> PointCloud:
    p_scale, p_rot, p_jit, p_flip, p_drop = config.common_probs
    if rng.random() < p_scale:
        cloud = random_scaling(cloud, config.scale, rng)
    if rng.random() < p_rot:
        cloud = global_rotation(cloud, rng)
    if rng.random() < p_jit:
        cloud = random_jittering(cloud, config.jitter, rng)
    if rng.random() < p_flip:
        cloud = random_flipping(cloud, rng)
    if rng.random() < p_drop:
        cloud = random_dropping(cloud, config.drop, rng)
    return cloud


# -- grid-level ----------------------------------------------------------


def _check_pair(a: RangeImage, b: RangeImage) -> None:
    if a.spec != b.spec:
        raise ValueError(f"range images differ in sensor spec: {a.spec} vs {b.spec}")


def _labels_or_ignore(img: RangeImage) -> np.ndarray:
    if img.label_grid is not None:
        return img.label_grid
    return np.full(img.shape, IGNORE_LABEL, dtype=np.int64)


def _copy_grids(a: RangeImage, b: RangeImage, mask: np.ndarray) -> RangeImage:
    """``a`` with the grids in ``mask`` replaced by ``b``'s."""
    channels = np.where(mask[None], b.channels, a.channels)
    labels = None
    if a.label_grid is not None or b.label_grid is not None:
        labels = np.where(mask, _labels_or_ignore(b), _labels_or_ignore(a))
    return a.with_grids(channels, labels)


def mix_bands(height: int, k_mix: int) -> list:
    """Row ranges of ``k_mix`` contiguous bands; remainder rows go to the first bands."""
    base, extra = divmod(height, k_mix)
    bands, start = [], 0
    for i in range(k_mix):
        stop = start + base + (1 if i < extra else 0)
        bands.append((start, stop))
        start = stop
    return bands


def range_mix(a: RangeImage, b: RangeImage, k_mix: Union[int, Sequence[int]],
              rng: np.random.Generator | None = None) -> RangeImage:
    """Swap alternate inclination bands: even bands from ``a``, odd from ``b``.

    ``k_mix`` may be a list of candidates, in which case one is drawn from ``rng``.
    """
    _check_pair(a, b)
    if not isinstance(k_mix, (int, np.integer)):
        if rng is None:
            raise ValueError("a random generator is required to sample k_mix")
        k_mix = int(rng.choice(list(k_mix)))
    if k_mix < 1:
        raise ValueError("k_mix must be >= 1")
    rows = np.zeros(a.shape[0], dtype=bool)
    for i, (start, stop) in enumerate(mix_bands(a.shape[0], k_mix)):
        rows[start:stop] = i % 2 == 1
    mask = np.broadcast_to(rows[:, None], a.shape)
    return _copy_grids(a, b, mask)


def union_count(n_eligible: int, k_union: float) -> int:
    # guard against products like 0.5 * n landing a hair above an integer
    return min(n_eligible, math.ceil(k_union * n_eligible - 1e-9))


def range_union(a: RangeImage, b: RangeImage, k_union: float,
                rng: np.random.Generator) -> RangeImage:
    """Fill a random ``ceil(k_union * n)`` subset of the n grids empty in ``a`` and occupied in ``b``."""
    _check_pair(a, b)
    if not 0.0 <= k_union <= 1.0:
        raise ValueError(f"k_union {k_union} outside [0, 1]")
    eligible = np.flatnonzero(~a.occupied_mask & b.occupied_mask)
    count = union_count(len(eligible), k_union)
    mask = np.zeros(a.shape, dtype=bool)
    if count:
        chosen = rng.choice(eligible, size=count, replace=False)
        mask.flat[chosen] = True
    return _copy_grids(a, b, mask)


def range_paste(a: RangeImage, b: RangeImage, tail_classes: Sequence[int]) -> RangeImage:
    _check_pair(a, b)
    if b.label_grid is None:
        raise ValueError("range_paste needs labels on the source raster")
    mask = np.isin(b.label_grid, list(tail_classes))
    return _copy_grids(a, b, mask)


def range_shift(a: RangeImage, k_shift: int) -> RangeImage:
    """Circular azimuth shift: output column j is input column (j + k_shift) mod W."""
    w = a.shape[1]
    if not 0 <= k_shift <= w:
        raise ValueError(f"k_shift {k_shift} outside [0, {w}]")
    channels = np.roll(a.channels, -k_shift, axis=2)
    labels = None if a.label_grid is None else np.roll(a.label_grid, -k_shift, axis=1)
    return a.with_grids(channels, labels)


def sample_shift(width: int, shift_range: tuple, rng: np.random.Generator) -> int:
    lo, hi = int(shift_range[0] * width), int(shift_range[1] * width)
    return int(rng.integers(lo, hi, endpoint=True))


def apply_range_combo(a: RangeImage, sampler_for_b: Union[RangeImage, Callable[[], RangeImage]],
                      config: AugmentConfig, rng: np.random.Generator) -> RangeImage:
    """Mix, paste, union, then shift; each op fires with its configured probability.

    The second raster is requested from ``sampler_for_b`` at most once, and
    only if an op that needs it fires.
    """
    p_mix, p_union, p_paste, p_shift = config.range_probs
    b_cache = []

    def other() -> RangeImage:
        if not b_cache:
            b_cache.append(sampler_for_b() if callable(sampler_for_b) else sampler_for_b)
        return b_cache[0]

    if rng.random() < p_mix:
        a = range_mix(a, other(), config.k_mix, rng)
    if rng.random() < p_paste:
        a = range_paste(a, other(), config.tail_classes)
    if rng.random() < p_union:
        a = range_union(a, other(), config.k_union, rng)
    if rng.random() < p_shift:
        a = range_shift(a, sample_shift(a.shape[1], config.shift_range, rng))
    return a
