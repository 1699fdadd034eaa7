from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rangekit.post import (
    DEFAULT_NUM_SUB,
    KnnParams,
    knn_smooth,
    range_post,
    subcloud_indices,
    subcloud_split,
    subcloud_stitch,
)
from rangekit.raster import depths, rasterize, unproject
from rangekit.types import PointCloud, SensorSpec
from synth import lidar_scan, random_cloud

SPEC = SensorSpec(3, 25, 64, 2048)


def oracle_grid(img):
    return img.label_grid


def test_split_examples():
    assert [i.tolist() for i in subcloud_indices(7, 3)] == [[0, 3, 6], [1, 4], [2, 5]]
    cloud = random_cloud(np.random.default_rng(0), 7)
    (only,) = subcloud_split(cloud, 1)
    assert np.array_equal(only.xyz, cloud.xyz)
    subs = subcloud_split(cloud, 3)
    assert np.array_equal(subs[1].labels, cloud.labels[[1, 4]])
    with pytest.raises(ValueError):
        subcloud_split(cloud, 0)
    assert DEFAULT_NUM_SUB == 3


def test_stitch_examples():
    preds = [np.array([10, 13, 16]), np.array([11, 14]), np.array([12, 15])]
    assert subcloud_stitch(preds, 3, 7).tolist() == [10, 11, 12, 13, 14, 15, 16]
    assert subcloud_stitch([np.arange(5)], 1, 5).tolist() == [0, 1, 2, 3, 4]
    with pytest.raises(ValueError):
        subcloud_stitch([np.arange(2), np.arange(2), np.arange(2)], 3, 7)


@settings(max_examples=80, deadline=None)
@given(x=st.lists(st.integers(0, 2 ** 16 - 1), max_size=300), num_sub=st.integers(1, 8))
def test_stitch_split_identity(x, num_sub):
    x = np.asarray(x, dtype=np.int64)
    parts = [x[idx] for idx in subcloud_indices(len(x), num_sub)]
    assert np.array_equal(subcloud_stitch(parts, num_sub, len(x)), x)


def brute_vote(img, grid, cloud, i, k, window, cutoff):
    """Enumerate the window around point i and vote, by the documented rule."""
    proj = img.projection
    h, w = img.shape
    r0 = min(max(int(proj.rows[i]), 0), h - 1)
    c0 = int(proj.cols[i])
    d = float(np.sqrt((cloud.xyz[i] ** 2).sum()))
    half = window // 2
    cands = []
    pos = 0
    for dr in range(-half, half + 1):
        for dc in range(-half, half + 1):
            r, c = r0 + dr, (c0 + dc) % w
            if 0 <= r < h and img.existence[r, c] > 0:
                cands.append((abs(img.depth[r, c] - d), pos, int(grid[r, c])))
            pos += 1
    cands.sort()
    kept = [(delta, lab) for delta, _, lab in cands[:k] if delta <= cutoff]
    if not kept:
        return int(grid[r0, c0])
    votes = Counter(lab for _, lab in kept)
    best = {lab: min(dl for dl, l2 in kept if l2 == lab) for lab in votes}
    return min(votes, key=lambda lab: (-votes[lab], best[lab], lab))


def test_knn_matches_brute_force_vote():
    rng = np.random.default_rng(1)
    cloud = lidar_scan(rng, per_beam=900)
    img = rasterize(cloud, SPEC)
    grid = np.where(img.occupied_mask, rng.integers(0, 6, img.shape), 0)
    for k, window, cutoff in ((5, 5, 1.0), (3, 3, 0.5), (9, 5, 3.0), (1, 1, 1.0)):
        out = knn_smooth(img, grid, cloud, k, window, cutoff)
        for i in rng.choice(len(cloud), 400, replace=False):
            assert out[i] == brute_vote(img, grid, cloud, i, k, window, cutoff)


def test_knn_constructed_neighbourhood():
    # one query point at the centre of a 5x5 patch with hand-set depths
    spec = SensorSpec(15, 15, 5, 5)
    cloud = PointCloud([[10.0, 0.0, 0.0]])
    img0 = rasterize(cloud, spec)
    r, c = img0.projection.point_to_grid(0)
    ch = np.zeros((6, 5, 5))
    lab = np.zeros((5, 5), dtype=int)
    hand = {(r, c): (10.0, 1), (r - 1, c): (10.2, 2), (r + 1, c): (10.2, 2), (r, (c + 1) % 5): (10.3, 3),
            (r, (c - 1) % 5): (9.9, 3), (r - 2, c): (10.05, 1), (r + 2, c): (50.0, 2)}
    for (rr, cc), (dep, l) in hand.items():
        ch[3, rr, cc] = dep
        ch[5, rr, cc] = 1
        lab[rr, cc] = l
    img = img0.__class__(ch, spec, lab, img0.projection)
    # k=5 nearest by |delta|: 10.0(1), 10.05(1), 9.9(3), 10.2(2), 10.2(2) -> 1:2, 2:2, 3:1
    # tie between 1 and 2 resolved by the smaller best delta -> 1
    assert knn_smooth(img, lab, cloud, 5, 5, 1.0)[0] == 1
    # k=7 adds 10.3(3); 50.0 is beyond the cutoff -> 1:2, 2:2, 3:2 -> 1 again (delta 0)
    assert knn_smooth(img, lab, cloud, 7, 5, 1.0)[0] == 1
    # remove the centre grid: 1:1, 2:2, 3:2; tie 2 vs 3, best deltas 0.2 vs 0.1 -> 3
    ch[5, r, c] = 0
    img = img0.__class__(ch, spec, lab, img0.projection)
    assert knn_smooth(img, lab, cloud, 5, 5, 1.0)[0] == 3


def test_knn_window_one_is_unproject():
    rng = np.random.default_rng(2)
    cloud = lidar_scan(rng, per_beam=900)
    img = rasterize(cloud, SPEC)
    grid = rng.integers(0, 20, img.shape)
    assert np.array_equal(knn_smooth(img, grid, cloud, 1, 1, 1.0), unproject(img, grid, cloud))
    assert np.array_equal(knn_smooth(img, grid, cloud, 1, 1, 1e9), unproject(img, grid, cloud))


def test_knn_uniform_labels():
    cloud = lidar_scan(np.random.default_rng(3), per_beam=500)
    img = rasterize(cloud, SPEC)
    assert (knn_smooth(img, np.full(img.shape, 4), cloud) == 4).all()


def test_knn_params_validation():
    with pytest.raises(ValueError):
        KnnParams(window=4)
    with pytest.raises(ValueError):
        KnnParams(k=10, window=3)


def test_range_post_examples():
    cloud = lidar_scan(np.random.default_rng(4), per_beam=600)
    assert (range_post(cloud, SPEC, 3, lambda img: np.full(img.shape, 6)) == 6).all()
    img = rasterize(cloud, SPEC)
    direct = knn_smooth(img, img.label_grid, cloud)
    assert np.array_equal(range_post(cloud, SPEC, 1, oracle_grid), direct)


def collisions(cloud, num_sub):
    return sum(len(rasterize(sub, SPEC).projection.displaced) for sub in subcloud_split(cloud, num_sub))


@pytest.mark.parametrize("seed", range(5))
def test_subclouds_reduce_collisions(seed):
    rng = np.random.default_rng(seed)
    cloud = random_cloud(rng, 20000, spread=15)
    assert collisions(cloud, 3) <= collisions(cloud, 1)


@pytest.mark.parametrize("seed", range(3))
def test_oracle_accuracy_improves_with_subclouds(seed):
    cloud = lidar_scan(np.random.default_rng(seed), per_beam=2200, fov=(2.8, 24.8))
    acc = {ns: (range_post(cloud, SPEC, ns, oracle_grid, None) == cloud.labels).mean() for ns in (1, 3)}
    assert acc[3] >= acc[1]
