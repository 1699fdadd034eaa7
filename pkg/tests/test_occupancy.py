import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rangekit.occupancy import (
    OccupancyRow,
    find_crossover,
    format_plot_data,
    format_table,
    merge_rows,
    occupancy_counts,
    occupancy_curve,
    occupancy_point,
)
from rangekit.raster import project_points
from rangekit.types import PointCloud, SensorSpec
from synth import lidar_scan, random_cloud

POW2 = [128, 256, 512, 1024, 2048, 4096]


def test_single_point():
    spec = SensorSpec(3, 25, 4, 8)
    fill, keep = occupancy_point(PointCloud([[5, 0, 0]]), spec)
    assert fill == 1 / 32 and keep == 1.0


def test_shared_grid():
    spec = SensorSpec(3, 25, 4, 8)
    cloud = PointCloud([[d, 0, 0] for d in (1, 2, 3, 4)])
    assert occupancy_point(cloud, spec)[1] == 0.25


def test_recount_oracle():
    rng = np.random.default_rng(0)
    cloud = random_cloud(rng, 3000, spread=10)
    spec = SensorSpec(3, 25, 32, 256)
    _, _, cols, rows, in_fov, _ = project_points(cloud.xyz, spec)
    grids = {(int(r), int(c)) for r, c, ok in zip(rows, cols, in_fov) if ok}
    fill, keep = occupancy_point(cloud, spec)
    assert fill == len(grids) / (32 * 256)
    assert keep == len(grids) / len(cloud)


def test_curve_singleton_and_validation():
    cloud = lidar_scan(np.random.default_rng(1), per_beam=400)
    (row,) = occupancy_curve(cloud, 64, (3, 25), [1024])
    assert row == occupancy_counts(cloud, SensorSpec(3, 25, 64, 1024))
    with pytest.raises(ValueError):
        occupancy_curve(cloud, 64, (3, 25), [])
    with pytest.raises(ValueError):
        occupancy_curve(cloud, 64, (3, 25), [512, 256])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 5000))
def test_retention_monotone_and_fill_non_increasing_on_doubling(seed, n):
    cloud = random_cloud(np.random.default_rng(seed), n, spread=20)
    table = occupancy_curve(cloud, 64, (3, 25), POW2)
    for a, b in zip(table, table[1:]):
        assert b.winners >= a.winners
        assert b.point_retention >= a.point_retention
        # each grid splits into two at double width
        assert b.occupied <= 2 * a.occupied
        assert b.grid_fill <= a.grid_fill


def scan_crossover(table):
    """Linear-scan oracle on exact integer cross-products."""
    prev = None
    for r in table:
        d = r.occupied * r.points - r.winners * r.grids  # same sign as fill - retention
        s = (d > 0) - (d < 0)
        if prev is not None and (prev[1] == 0 or prev[1] != s):
            return prev[0], r.width
        prev = (r.width, s)
    return None


def test_crossover_examples():
    def row(w, occ, win):
        return OccupancyRow(w, occ, 100, win, 100)

    assert find_crossover([row(1, 90, 10), row(2, 80, 20)]) is None
    table = [row(1, 90, 10), row(2, 70, 30), row(3, 40, 60)]
    assert find_crossover(table) == (2, 3)
    assert find_crossover([row(1, 50, 50), row(2, 40, 60)]) == (1, 2)


@pytest.mark.parametrize("seed", range(5))
def test_crossover_matches_linear_scan(seed):
    cloud = lidar_scan(np.random.default_rng(seed), per_beam=int(np.random.default_rng(seed).integers(800, 3000)))
    table = occupancy_curve(cloud, 64, (3, 25), [256, 512, 768, 1024, 1536, 2048, 3072, 4096])
    assert find_crossover(table) == scan_crossover(table)


@settings(max_examples=200, deadline=None)
@given(rows=st.lists(st.tuples(st.integers(0, 10), st.integers(0, 10)), min_size=1, max_size=8))
def test_crossover_matches_linear_scan_on_tables(rows):
    table = [OccupancyRow(i + 1, occ, 10, win, 10) for i, (occ, win) in enumerate(rows)]
    assert find_crossover(table) == scan_crossover(table)


def test_merge_and_formats():
    a = OccupancyRow(512, 10, 100, 10, 40)
    b = OccupancyRow(512, 30, 100, 30, 60)
    m = merge_rows([a, b])
    assert (m.occupied, m.grids, m.points) == (40, 200, 100)
    assert format_table([m]).splitlines() == ["width,grid_fill,point_retention,occupied,points",
                                              "512,0.200000,0.400000,40,100"]
    assert format_plot_data([m]).splitlines()[1] == "512 20.0000 40.0000"
