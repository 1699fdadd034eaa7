import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rangekit.augment import rotate_xy
from rangekit.raster import (
    COLLISION_WINNER,
    QUANTIZE,
    UndefinedAngleError,
    azimuth,
    depth,
    inclination,
    project_point,
    project_points,
    rasterize,
    unproject,
)
from rangekit.types import NO_INDEX, SEMANTIC_KITTI_SENSOR, Point, PointCloud, SensorSpec
from synth import lidar_scan, random_cloud

SYM = SensorSpec(15, 15, 64, 2048)

mpmath.mp.dps = 40


def eq1_oracle(x, y, z, spec):
    """Arbitrary-precision evaluation of the projection from its definition."""
    x, y, z = mpmath.mpf(x), mpmath.mpf(y), mpmath.mpf(z)
    d = mpmath.sqrt(x * x + y * y + z * z)
    theta = mpmath.atan2(y, x)
    if theta == -mpmath.pi:
        theta = mpmath.pi
    up = mpmath.radians(mpmath.mpf(spec.fov_up))
    down = mpmath.radians(mpmath.mpf(spec.fov_down))
    u = mpmath.mpf(1) / 2 * (1 - theta / mpmath.pi) * spec.width
    v = (1 - (mpmath.asin(z / d) + down) / (up + down)) * spec.height
    return u, v


@pytest.mark.parametrize("p, d", [((3, 4, 0), 5.0), ((0, 0, 0), 0.0), ((1, 2, 2), 3.0)])
def test_depth(p, d):
    assert depth(p) == d


@pytest.mark.parametrize("p, a", [((1, 0, 0), 0.0), ((0, 1, 0), math.pi / 2), ((-1, 0, 0), math.pi),
                                  ((-1, -0.0, 0), math.pi)])
def test_azimuth(p, a):
    assert azimuth(p) == a


@pytest.mark.parametrize("p, a", [((1, 0, 0), 0.0), ((1, 0, 1), math.pi / 4), ((0, 1, -1), -math.pi / 4)])
def test_inclination(p, a):
    assert inclination(p) == pytest.approx(a, abs=1e-15)


def test_angles_undefined_on_z_axis():
    with pytest.raises(UndefinedAngleError):
        azimuth((0, 0, 1))
    with pytest.raises(UndefinedAngleError):
        inclination((0, 0, -2))


def test_project_point_examples():
    r = project_point(Point(1, 0, 0, 0, 1), SYM)
    assert (r.u, r.v) == (1024.0, 32.0) and (r.col, r.row, r.in_fov) == (1024, 32, True)
    assert project_point((-1, 0, 0), SYM).u == 0.0
    r = project_point((3, 4, 1), SEMANTIC_KITTI_SENSOR)
    u, v = eq1_oracle(3, 4, 1, SEMANTIC_KITTI_SENSOR)
    assert abs(r.u - float(u)) < 1e-9 and abs(r.v - float(v)) < 1e-9


def test_project_point_origin_errors():
    with pytest.raises(UndefinedAngleError):
        project_point((0, 0, 0), SYM)


def test_quantization_choices_are_named():
    assert QUANTIZE == "floor" and COLLISION_WINNER == "nearest"


def test_out_of_fov_checked_before_clamp():
    r = project_point((1, 0, 1), SEMANTIC_KITTI_SENSOR)  # 45 degrees up
    assert r.row < 0 and not r.in_fov
    r = project_point((1, 0, -1), SEMANTIC_KITTI_SENSOR)
    assert r.row >= 64 and not r.in_fov


def test_column_wraps():
    # just below azimuth -pi: u slightly below W, column wraps to W - 1
    r = project_point((-1, -1e-12, 0), SYM)
    assert r.col == 2047
    assert 0 <= project_point((-1, 1e-12, 0), SYM).col < 2048


def test_matches_high_precision_oracle_on_random_points():
    rng = np.random.default_rng(0)
    pts = rng.normal(0, 20, (2000, 3))
    for spec in (SEMANTIC_KITTI_SENSOR, SYM, SensorSpec(10, 30, 32, 1920)):
        u, v, *_ = project_points(pts, spec)
        for i in range(0, len(pts), 7):
            ou, ov = eq1_oracle(*pts[i], spec)
            assert abs(u[i] - float(ou)) < 1e-9
            assert abs(v[i] - float(ov)) < 1e-9


def test_u_is_exactly_linear_in_width():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(500, 3))
    u1 = project_points(pts, SEMANTIC_KITTI_SENSOR.with_width(1024))[0]
    u2 = project_points(pts, SEMANTIC_KITTI_SENSOR.with_width(2048))[0]
    assert np.array_equal(2 * u1, u2)


def test_u_periodic_under_full_turn():
    rng = np.random.default_rng(2)
    cloud = random_cloud(rng, 2000)
    a = project_points(cloud.xyz, SEMANTIC_KITTI_SENSOR)[2]
    b = project_points(rotate_xy(cloud, 2 * math.pi).xyz, SEMANTIC_KITTI_SENSOR)[2]
    diff = (a - b) % 2048
    # identical except where rounding of the rotation crosses a column boundary
    assert np.isin(diff, [0, 1, 2047]).all()
    assert (diff == 0).mean() > 0.99


def test_collision_nearest_wins():
    cloud = PointCloud([[7, 0, 0], [5, 0, 0]], labels=[1, 2])
    img = rasterize(cloud, SYM)
    proj = img.projection
    assert proj.point_at(32, 1024) == 1
    assert proj.displaced.tolist() == [0]
    assert img.depth[32, 1024] == 5.0
    assert img.label_grid[32, 1024] == 2


def test_equal_depth_lower_index_wins():
    cloud = PointCloud([[5, 0, 0], [5, 0, 0]])
    assert rasterize(cloud, SYM).projection.point_at(32, 1024) == 0


def test_distinct_grids_no_displacement():
    angles = np.linspace(-math.pi + 0.01, math.pi - 0.01, 100)
    cloud = PointCloud(np.c_[np.cos(angles), np.sin(angles), np.zeros(100)])
    img = rasterize(cloud, SYM)
    assert len(img.projection.displaced) == 0
    assert img.existence.sum() == 100


def test_channels_hold_winner_features():
    cloud = PointCloud([[3.0, 4.0, 0.0]], intensity=[0.7])
    img = rasterize(cloud, SYM)
    r, c = img.projection.point_to_grid(0)
    assert img.channels[:, r, c].tolist() == [3.0, 4.0, 0.0, 5.0, 0.7, 1.0]
    empty = ~img.occupied_mask
    assert not img.channels[:, empty].any()


def test_origin_point_is_out_of_fov_and_gets_fill():
    cloud = PointCloud([[0, 0, 0], [1, 0, 0]], labels=[4, 4])
    img = rasterize(cloud, SYM)
    assert img.projection.out_of_fov.tolist() == [0]
    labels = unproject(img, np.full(img.shape, 9), fill=0)
    assert labels.tolist() == [0, 9]


def recount(cloud, spec):
    """Loop-based reference for the grid assignment."""
    u, v, cols, rows, in_fov, _ = project_points(cloud.xyz, spec)
    d = np.sqrt((cloud.xyz ** 2).sum(axis=1))
    best = {}
    for i in range(len(cloud)):
        if not in_fov[i]:
            continue
        key = (int(rows[i]), int(cols[i]))
        if key not in best or d[i] < d[best[key]]:
            best[key] = i
    return best, int((~in_fov).sum())


def test_bookkeeping_matches_recount_oracle():
    rng = np.random.default_rng(3)
    cloud = random_cloud(rng, 500, spread=10)
    spec = SensorSpec(3, 25, 16, 64)
    img = rasterize(cloud, spec)
    best, n_out = recount(cloud, spec)
    proj = img.projection
    assert proj.occupied == len(best)
    assert len(proj.out_of_fov) == n_out
    for (r, c), i in best.items():
        assert proj.grid_to_point[r, c] == i
    assert len(proj.displaced) + proj.occupied + n_out == len(cloud)
    assert set(proj.displaced) == set(np.flatnonzero(proj.in_fov)) - set(best.values())


def test_round_trip_on_scan():
    cloud = lidar_scan(np.random.default_rng(4), per_beam=800)
    img = rasterize(cloud, SEMANTIC_KITTI_SENSOR)
    labels = unproject(img, img.label_grid, cloud)
    win = img.projection.winners
    assert np.array_equal(labels[win], cloud.labels[win])
    for i in img.projection.displaced[:50]:
        r, c = img.projection.point_to_grid(int(i))
        assert labels[i] == img.label_grid[r, c]


def test_unproject_constant_and_clamped():
    cloud = PointCloud([[1, 0, 0], [1, 0, 5], [1, 0, -5]])
    img = rasterize(cloud, SYM)
    assert unproject(img, np.full(img.shape, 3)).tolist() == [3, 3, 3]
    grid = np.zeros(img.shape, dtype=int)
    grid[0, :] = 1
    grid[-1, :] = 2
    assert unproject(img, grid).tolist() == [0, 1, 2]
    with pytest.raises(ValueError):
        unproject(img, np.zeros((3, 3)))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(0, 400),
       h=st.integers(1, 32), w=st.integers(1, 128))
def test_partition_identity_property(seed, n, h, w):
    rng = np.random.default_rng(seed)
    xyz = rng.normal(0, 5, (n, 3))
    if n:
        xyz[rng.integers(0, n, max(1, n // 20))] = 0.0
    cloud = PointCloud(xyz, labels=rng.integers(0, 20, n))
    img = rasterize(cloud, SensorSpec(10, 20, h, w))
    proj = img.projection
    assert len(proj.displaced) + proj.occupied + len(proj.out_of_fov) == n
    assert int(img.existence.sum()) == proj.occupied
    g2p = proj.grid_to_point
    for r, c in zip(*np.nonzero(g2p != NO_INDEX)):
        assert proj.point_to_grid(int(g2p[r, c])) == (r, c)
    labels = unproject(img, img.label_grid)
    assert np.array_equal(labels[proj.winners], cloud.labels[proj.winners])


def test_project_point_bit_identical_to_batch():
    pts = np.random.default_rng(9).normal(0, 20, (3000, 3))
    pts[:10, :2] = 0.0  # on the z axis
    pts[10:20, 1] = 0.0  # on the seam
    for spec in (SEMANTIC_KITTI_SENSOR, SensorSpec(10, 30, 32, 1920)):
        u, v, cols, rows, in_fov, _ = project_points(pts, spec)
        for i, p in enumerate(pts):
            r = project_point(p, spec)
            assert (r.u, r.v, r.col, r.row, r.in_fov) == (u[i], v[i], cols[i], rows[i], in_fov[i])
