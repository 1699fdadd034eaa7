"""Domain types shared across the toolkit.

Arrays handed to the constructors are copied and frozen (``writeable=False``)
so instances can be shared between threads without defensive copies.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

IGNORE_LABEL = 0

# Array-level encoding of the two sentinels below.
NO_INDEX = -1

CHANNEL_NAMES = ("x", "y", "z", "depth", "intensity", "existence")


class Sentinel(enum.Enum):
    OUT_OF_FOV = "out_of_fov"
    EMPTY = "empty"


OUT_OF_FOV = Sentinel.OUT_OF_FOV
EMPTY = Sentinel.EMPTY


def _frozen(arr, dtype=None) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


class Point(NamedTuple):
    x: float
    y: float
    z: float
    intensity: float = 0.0
    existence: int = 1


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered LiDAR points.

    ``xyz`` is (N, 3); ``intensity`` and ``existence`` are (N,). ``labels`` and
    ``instances`` are optional per-point ids. The constructor only coerces
    dtypes; use :func:`validate` to check invariants, so malformed clouds can
    still be represented and reported.
    """

    xyz: np.ndarray
    intensity: Optional[np.ndarray] = None
    existence: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    instances: Optional[np.ndarray] = None

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        n = len(xyz)
        intensity = np.zeros(n) if self.intensity is None else self.intensity
        existence = np.ones(n, dtype=np.uint8) if self.existence is None else self.existence
        object.__setattr__(self, "xyz", _frozen(xyz))
        object.__setattr__(self, "intensity", _frozen(intensity, np.float64).reshape(-1))
        object.__setattr__(self, "existence", _frozen(existence, np.uint8).reshape(-1))
        if self.labels is not None:
            object.__setattr__(self, "labels", _frozen(self.labels, np.int64).reshape(-1))
        if self.instances is not None:
            object.__setattr__(self, "instances", _frozen(self.instances, np.int64).reshape(-1))

    @classmethod
    def from_points(cls, points: Sequence[Point], labels=None, instances=None) -> "PointCloud":
        arr = np.array([tuple(p) for p in points], dtype=np.float64).reshape(-1, 5)
        return cls(arr[:, :3], arr[:, 3], arr[:, 4].astype(np.uint8), labels, instances)

    def __len__(self) -> int:
        return len(self.xyz)

    @property
    def n(self) -> int:
        return len(self.xyz)

    def point(self, i: int) -> Point:
        x, y, z = self.xyz[i]
        return Point(float(x), float(y), float(z), float(self.intensity[i]), int(self.existence[i]))

    def subset(self, idx) -> "PointCloud":
        """Cloud restricted to ``idx`` (index array or boolean mask), labels in lockstep."""
        idx = np.asarray(idx)
        return PointCloud(
            self.xyz[idx],
            self.intensity[idx],
            self.existence[idx],
            None if self.labels is None else self.labels[idx],
            None if self.instances is None else self.instances[idx],
        )

    def replace(self, **changes) -> "PointCloud":
        fields = dict(
            xyz=self.xyz,
            intensity=self.intensity,
            existence=self.existence,
            labels=self.labels,
            instances=self.instances,
        )
        fields.update(changes)
        return PointCloud(**fields)


@dataclass(frozen=True)
class Validation:
    ok: bool
    reason: Optional[str] = None
    index: Optional[int] = None

    def __bool__(self) -> bool:
        return self.ok


def validate(cloud: PointCloud) -> Validation:
    """Return the first violated invariant of ``cloud``, or ok."""
    n = len(cloud)
    for name in ("intensity", "existence", "labels", "instances"):
        arr = getattr(cloud, name)
        if arr is not None and len(arr) != n:
            return Validation(False, f"{name} length {len(arr)} != {n}", None)
    bad = np.flatnonzero(~np.isfinite(cloud.xyz).all(axis=1))
    if len(bad):
        return Validation(False, "non-finite coordinate", int(bad[0]))
    bad = np.flatnonzero((cloud.existence != 0) & (cloud.existence != 1))
    if len(bad):
        return Validation(False, "existence not in {0, 1}", int(bad[0]))
    return Validation(True)


@dataclass(frozen=True)
class SensorSpec:
    """Vertical field of view (positive magnitudes in degrees) and raster size."""

    fov_up: float
    fov_down: float
    height: int
    width: int
    fov_up_rad: float = field(init=False, repr=False)
    fov_down_rad: float = field(init=False, repr=False)
    fov_rad: float = field(init=False, repr=False)

    def __post_init__(self):
        if not (math.isfinite(self.fov_up) and math.isfinite(self.fov_down)):
            raise ValueError("field of view must be finite")
        if self.fov_up + self.fov_down <= 0:
            raise ValueError(f"fov_up + fov_down must be > 0, got {self.fov_up + self.fov_down}")
        if int(self.height) != self.height or self.height < 1:
            raise ValueError(f"height must be a positive integer, got {self.height}")
        if int(self.width) != self.width or self.width < 1:
            raise ValueError(f"width must be a positive integer, got {self.width}")
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "width", int(self.width))
        up = math.radians(abs(self.fov_up))
        down = math.radians(abs(self.fov_down))
        object.__setattr__(self, "fov_up_rad", up)
        object.__setattr__(self, "fov_down_rad", down)
        object.__setattr__(self, "fov_rad", up + down)

    def with_width(self, width: int) -> "SensorSpec":
        return SensorSpec(self.fov_up, self.fov_down, self.height, width)


SEMANTIC_KITTI_SENSOR = SensorSpec(3.0, 25.0, 64, 2048)
NUSCENES_SENSOR = SensorSpec(10.0, 30.0, 32, 1920)


@dataclass(frozen=True, eq=False)
class Projection:
    """Point <-> grid bookkeeping of one rasterization.

    ``rows``/``cols`` hold every point's quantized grid coordinate before the
    field-of-view check (``rows`` unclamped, ``cols`` already wrapped). Points
    with no defined projection (the origin) carry ``NO_INDEX`` in both.
    """

    rows: np.ndarray
    cols: np.ndarray
    in_fov: np.ndarray
    grid_to_point: np.ndarray
    displaced: np.ndarray

    def __post_init__(self):
        for name in ("rows", "cols", "grid_to_point", "displaced"):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.int64))
        object.__setattr__(self, "in_fov", _frozen(self.in_fov, bool))

    @property
    def n_points(self) -> int:
        return len(self.rows)

    @property
    def out_of_fov(self) -> np.ndarray:
        return np.flatnonzero(~self.in_fov)

    @property
    def occupied(self) -> int:
        return int((self.grid_to_point != NO_INDEX).sum())

    @property
    def winners(self) -> np.ndarray:
        g = self.grid_to_point.ravel()
        return np.sort(g[g != NO_INDEX])

    def point_to_grid(self, i: int):
        if not self.in_fov[i]:
            return OUT_OF_FOV
        return int(self.rows[i]), int(self.cols[i])

    def point_at(self, row: int, col: int):
        idx = int(self.grid_to_point[row, col])
        return EMPTY if idx == NO_INDEX else idx


@dataclass(frozen=True, eq=False)
class RangeImage:
    """Six-channel (x, y, z, depth, intensity, existence) raster.

    ``projection`` is present for rasters produced directly from a cloud and
    dropped by grid-level augmentations, whose output no longer maps onto a
    single source cloud.
    """

    channels: np.ndarray
    spec: SensorSpec
    label_grid: Optional[np.ndarray] = None
    projection: Optional[Projection] = None

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.shape != (6, self.spec.height, self.spec.width):
            raise ValueError(
                f"channels shape {ch.shape} != (6, {self.spec.height}, {self.spec.width})"
            )
        object.__setattr__(self, "channels", _frozen(ch))
        if self.label_grid is not None:
            lg = np.asarray(self.label_grid, dtype=np.int64)
            if lg.shape != ch.shape[1:]:
                raise ValueError(f"label grid shape {lg.shape} != {ch.shape[1:]}")
            object.__setattr__(self, "label_grid", _frozen(lg))

    @property
    def shape(self) -> tuple:
        return self.channels.shape[1:]

    @property
    def existence(self) -> np.ndarray:
        return self.channels[5]

    @property
    def depth(self) -> np.ndarray:
        return self.channels[3]

    @property
    def occupied_mask(self) -> np.ndarray:
        return self.channels[5] > 0

    def with_grids(self, channels, label_grid) -> "RangeImage":
        return RangeImage(channels, self.spec, label_grid, None)


@dataclass(frozen=True)
class ClassTaxonomy:
    names: tuple
    things: frozenset
    stuff: frozenset
    ignore: int = IGNORE_LABEL

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "things", frozenset(int(c) for c in self.things))
        object.__setattr__(self, "stuff", frozenset(int(c) for c in self.stuff))
        ids = set(range(len(self.names)))
        if self.things & self.stuff:
            raise ValueError(f"classes both thing and stuff: {sorted(self.things & self.stuff)}")
        if not 0 <= self.ignore < len(self.names):
            raise ValueError(f"ignore id {self.ignore} outside [0, {len(self.names)})")
        if self.ignore in self.things | self.stuff:
            raise ValueError("ignore id cannot be a thing or stuff class")
        covered = self.things | self.stuff | {self.ignore}
        if covered != ids:
            raise ValueError(f"taxonomy does not cover ids {sorted(ids ^ covered)}")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @property
    def evaluated(self) -> list:
        return [c for c in range(self.num_classes) if c != self.ignore]


SEMANTIC_KITTI_NAMES = (
    "unlabeled", "car", "bicycle", "motorcycle", "truck", "other-vehicle", "person",
    "bicyclist", "motorcyclist", "road", "parking", "sidewalk", "other-ground", "building",
    "fence", "vegetation", "trunk", "terrain", "pole", "traffic-sign",
)

SEMANTIC_KITTI = ClassTaxonomy(SEMANTIC_KITTI_NAMES, range(1, 9), range(9, 20), 0)

# Raw SemanticKITTI label ids -> the 20 training ids above.
SEMANTIC_KITTI_LEARNING_MAP = {
    0: 0, 1: 0, 10: 1, 11: 2, 13: 5, 15: 3, 16: 5, 18: 4, 20: 5, 30: 6, 31: 7, 32: 8,
    40: 9, 44: 10, 48: 11, 49: 12, 50: 13, 51: 14, 52: 0, 60: 9, 70: 15, 71: 16, 72: 17,
    80: 18, 81: 19, 99: 0, 252: 1, 253: 7, 254: 6, 255: 8, 256: 5, 257: 5, 258: 4, 259: 5,
}


def remap_labels(labels: np.ndarray, mapping: dict, default: int = IGNORE_LABEL) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    lut = np.full(max(max(mapping), int(labels.max(initial=0))) + 1, default, dtype=np.int64)
    for k, v in mapping.items():
        lut[k] = v
    return lut[labels]
