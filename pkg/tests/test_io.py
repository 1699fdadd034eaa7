import struct

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from rangekit import io
from rangekit.model import TINY_CONFIG, init_weights, load_weights, save_weights
from rangekit.types import NUSCENES_SENSOR, SEMANTIC_KITTI, SEMANTIC_KITTI_SENSOR, PointCloud


def test_empty_scan(tmp_path):
    p = tmp_path / "e.bin"
    p.write_bytes(b"")
    assert len(io.read_scan(p)) == 0


def test_scan_fields_in_stream_order(tmp_path):
    p = tmp_path / "s.bin"
    p.write_bytes(struct.pack("<8f", 1, 2, 3, 0.5, -4, -5, -6, 0.25))
    cloud = io.read_scan(p)
    assert len(cloud) == 2
    assert cloud.xyz.tolist() == [[1, 2, 3], [-4, -5, -6]]
    assert cloud.intensity.tolist() == [0.5, 0.25]
    assert cloud.existence.tolist() == [1, 1]
    assert cloud.labels is None


def test_scan_residue_error(tmp_path):
    p = tmp_path / "s.bin"
    p.write_bytes(b"\0" * 17)
    with pytest.raises(io.FormatError, match="residue 1"):
        io.read_scan(p)


def test_scan_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    cloud = PointCloud(rng.normal(size=(50, 3)).astype(np.float32), rng.random(50).astype(np.float32))
    io.write_scan(tmp_path / "s.bin", cloud)
    back = io.read_scan(tmp_path / "s.bin")
    assert np.array_equal(back.xyz, cloud.xyz) and np.array_equal(back.intensity, cloud.intensity)


def test_label_bit_split(tmp_path):
    p = tmp_path / "l.label"
    np.array([0x0002000A, 0], dtype="<u4").tofile(p)
    sem, inst = io.read_labels(p, 2)
    assert sem.tolist() == [10, 0] and inst.tolist() == [2, 0]


def test_label_count_mismatch(tmp_path):
    p = tmp_path / "l.label"
    p.write_bytes(b"\0" * 8)
    with pytest.raises(io.FormatError):
        io.read_labels(p, 3)


def test_write_predictions_examples(tmp_path):
    p = tmp_path / "p.label"
    io.write_predictions(p, [1, 2, 3])
    assert p.stat().st_size == 12
    assert io.read_labels(p)[0].tolist() == [1, 2, 3]
    io.write_predictions(p, [])
    assert p.stat().st_size == 0
    with pytest.raises(ValueError):
        io.write_predictions(p, [70000])


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(ids=st.lists(st.integers(0, 0xFFFF), max_size=200))
def test_prediction_round_trip_byte_exact(tmp_path, ids):
    p = tmp_path / "p.label"
    io.write_predictions(p, ids)
    sem, inst = io.read_labels(p, len(ids))
    assert sem.tolist() == ids and not inst.any()
    first = p.read_bytes()
    io.write_predictions(p, sem)
    assert p.read_bytes() == first == np.asarray(ids, dtype="<u4").tobytes()


def test_sensor_spec_files(tmp_path):
    p = tmp_path / "s.cfg"
    p.write_text("fov_up = 3\nfov_down = 25\nheight = 64\nwidth = 2048\n")
    assert io.read_sensor_spec(p) == SEMANTIC_KITTI_SENSOR
    io.write_sensor_spec(p, NUSCENES_SENSOR)
    assert io.read_sensor_spec(p) == NUSCENES_SENSOR
    p.write_text("fov_up = 3\nfov_down = 25\nheight = 64\n")
    with pytest.raises(io.FormatError, match="width"):
        io.read_sensor_spec(p)
    p.write_text("fov_up = -3\nfov_down = 3\nheight = 64\nwidth = 8\n")
    with pytest.raises(io.FormatError):
        io.read_sensor_spec(p)


def test_taxonomy_round_trip(tmp_path):
    io.write_taxonomy(tmp_path / "t.cfg", SEMANTIC_KITTI)
    assert io.read_taxonomy(tmp_path / "t.cfg") == SEMANTIC_KITTI


def test_grid_labels_and_raster(tmp_path):
    grid = np.arange(12).reshape(3, 4)
    io.write_labels(tmp_path / "g.label", grid.ravel())
    assert np.array_equal(io.read_grid_labels(tmp_path / "g.label", 3, 4), grid)
    with pytest.raises(io.FormatError):
        io.read_grid_labels(tmp_path / "g.label", 4, 4)
    ch = np.random.default_rng(0).random((6, 3, 4)).astype(np.float32)
    io.write_raster(tmp_path / "r.raster", ch)
    assert np.array_equal(io.read_raster(tmp_path / "r.raster", 3, 4), ch)


def _parsers(path):
    return [
        lambda: io.read_scan(path),
        lambda: io.read_labels(path, 3),
        lambda: io.read_grid_labels(path, 2, 2),
        lambda: io.read_raster(path, 2, 2),
        lambda: io.read_sensor_spec(path),
        lambda: io.read_taxonomy(path),
        lambda: load_weights(path, TINY_CONFIG),
    ]


@settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(data=st.binary(max_size=300))
def test_fuzzed_files_never_crash(tmp_path, data):
    p = tmp_path / "fuzz"
    p.write_bytes(data)
    for parse in _parsers(p):
        try:
            parse()
        except io.FormatError:
            pass


@settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(text=st.text(alphabet=st.sampled_from(list("=#\n ,.-0123456789abefhiortuwdnsgkp")), max_size=120))
def test_fuzzed_config_text_never_crashes(tmp_path, text):
    p = tmp_path / "fuzz.cfg"
    p.write_text(text)
    for parse in (io.read_sensor_spec, io.read_taxonomy):
        try:
            parse(p)
        except io.FormatError:
            pass


def test_weights_round_trip_and_truncation(tmp_path):
    w = init_weights(TINY_CONFIG, 0)
    p = tmp_path / "w.bin"
    save_weights(p, w, TINY_CONFIG)
    back = load_weights(p, TINY_CONFIG)
    for k in w:
        assert np.array_equal(back[k], w[k].astype(np.float32))
    raw = p.read_bytes()
    rng = np.random.default_rng(1)
    for cut in rng.integers(0, len(raw), 30):
        p.write_bytes(raw[:cut])
        with pytest.raises(io.FormatError):
            load_weights(p, TINY_CONFIG)
    p.write_bytes(raw + b"\0")
    with pytest.raises(io.FormatError):
        load_weights(p, TINY_CONFIG)


def test_list_files(tmp_path):
    for name in ("b.bin", "a.bin", "c.label"):
        (tmp_path / name).write_bytes(b"")
    assert [p.name for p in io.list_files(tmp_path, ".bin")] == ["a.bin", "b.bin"]
    with pytest.raises(FileNotFoundError):
        io.list_files(tmp_path / "nope.bin", ".bin")
