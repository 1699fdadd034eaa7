"""SemanticKITTI-style binary scans and label streams, plus key-value configs."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .types import ClassTaxonomy, PointCloud, SensorSpec

SCAN_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")
MAX_SEMANTIC_ID = 0xFFFF


class FormatError(ValueError):
    """Malformed file contents."""


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def read_scan(path) -> PointCloud:
    """Read a ``.bin`` scan of little-endian float32 (x, y, z, intensity) rows."""
    raw = _read_bytes(path)
    residue = len(raw) % 16
    if residue:
        raise FormatError(f"{path}: scan length {len(raw)} not divisible by 16 (residue {residue})")
    with np.errstate(invalid="ignore"):  # signalling NaNs in corrupt files
        data = np.frombuffer(raw, dtype=SCAN_DTYPE).reshape(-1, 4).astype(np.float64)
    return PointCloud(data[:, :3], data[:, 3])


def write_scan(path, cloud: PointCloud) -> None:
    data = np.column_stack([cloud.xyz, cloud.intensity]).astype(SCAN_DTYPE)
    data.tofile(path)


def read_label_stream(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) % 4:
        raise FormatError(f"{path}: label length {len(raw)} not divisible by 4 (residue {len(raw) % 4})")
    return np.frombuffer(raw, dtype=LABEL_DTYPE).astype(np.int64)


def read_labels(path, expected_n: int | None = None):
    """Return ``(semantic, instance)`` id arrays; low 16 bits semantic, high 16 instance."""
    values = read_label_stream(path)
    if expected_n is not None and len(values) != expected_n:
        raise FormatError(f"{path}: {len(values)} labels for {expected_n} points")
    return values & 0xFFFF, values >> 16


def _check_ids(ids: np.ndarray, limit: int, what: str) -> None:
    if len(ids) and (ids.min() < 0 or ids.max() > limit):
        bad = ids[(ids < 0) | (ids > limit)][0]
        raise ValueError(f"{what} id {bad} outside [0, {limit}]")


def write_labels(path, semantic, instance=None) -> None:
    semantic = np.asarray(semantic, dtype=np.int64).reshape(-1)
    _check_ids(semantic, MAX_SEMANTIC_ID, "semantic")
    values = semantic.copy()
    if instance is not None:
        instance = np.asarray(instance, dtype=np.int64).reshape(-1)
        if len(instance) != len(semantic):
            raise ValueError("semantic and instance lengths differ")
        _check_ids(instance, 0xFFFF, "instance")
        values |= instance << 16
    values.astype(LABEL_DTYPE).tofile(path)


def write_predictions(path, semantic) -> None:
    write_labels(path, semantic)


def read_grid_labels(path, height: int, width: int) -> np.ndarray:
    """Row-major H x W label stream, semantic part only."""
    values = read_label_stream(path)
    if len(values) != height * width:
        raise FormatError(f"{path}: {len(values)} grid labels for a {height}x{width} raster")
    return (values & 0xFFFF).reshape(height, width)


def write_raster(path, channels: np.ndarray) -> None:
    """Dump a (C, H, W) raster as row-major little-endian float32."""
    np.ascontiguousarray(channels, dtype=SCAN_DTYPE).tofile(path)


def read_raster(path, height: int, width: int, n_channels: int = 6) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) != 4 * n_channels * height * width:
        raise FormatError(f"{path}: {len(raw)} bytes for a {n_channels}x{height}x{width} raster")
    return np.frombuffer(raw, dtype=SCAN_DTYPE).reshape(n_channels, height, width).astype(np.float64)


def parse_kv(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_kv(path) -> dict:
    raw = _read_bytes(path)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 ({exc.reason})") from None
    return parse_kv(text, str(path))


def _number(kv: dict, key: str, source, cast=float):
    if key not in kv:
        raise FormatError(f"{source}: missing key '{key}'")
    try:
        value = cast(kv[key])
    except ValueError:
        raise FormatError(f"{source}: bad value for '{key}': {kv[key]!r}") from None
    if cast is float and not np.isfinite(value):
        raise FormatError(f"{source}: non-finite '{key}'")
    return value


def sensor_spec_from_kv(kv: dict, source="<config>") -> SensorSpec:
    fov_up = _number(kv, "fov_up", source)
    fov_down = _number(kv, "fov_down", source)
    height = _number(kv, "height", source, int)
    width = _number(kv, "width", source, int)
    try:
        return SensorSpec(fov_up, fov_down, height, width)
    except ValueError as exc:
        raise FormatError(f"{source}: {exc}") from None


def read_sensor_spec(path) -> SensorSpec:
    return sensor_spec_from_kv(read_kv(path), path)


def write_sensor_spec(path, spec: SensorSpec) -> None:
    Path(path).write_text(
        f"fov_up = {spec.fov_up}\nfov_down = {spec.fov_down}\n"
        f"height = {spec.height}\nwidth = {spec.width}\n",
        encoding="utf-8",
    )


def _int_list(value: str) -> list:
    return [int(v) for v in value.replace(",", " ").split()]


def read_taxonomy(path) -> ClassTaxonomy:
    """Taxonomy file: ``names = a,b,...``, ``things = 1,2``, ``stuff = ...``, ``ignore = 0``."""
    kv = read_kv(path)
    try:
        names = [n.strip() for n in kv["names"].split(",") if n.strip()]
        things = _int_list(kv.get("things", ""))
        stuff = _int_list(kv.get("stuff", ""))
        ignore = int(kv.get("ignore", "0"))
        return ClassTaxonomy(names, things, stuff, ignore)
    except KeyError as exc:
        raise FormatError(f"{path}: missing key {exc}") from None
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_taxonomy(path, taxonomy: ClassTaxonomy) -> None:
    Path(path).write_text(
        "names = " + ",".join(taxonomy.names) + "\n"
        "things = " + ",".join(map(str, sorted(taxonomy.things))) + "\n"
        "stuff = " + ",".join(map(str, sorted(taxonomy.stuff))) + "\n"
        f"ignore = {taxonomy.ignore}\n",
        encoding="utf-8",
    )


def list_files(path, suffix: str) -> list:
    """A single file, or the sorted ``*suffix`` files of a directory."""
    path = Path(path)
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.name.endswith(suffix))
    if not path.exists():
        raise FileNotFoundError(os.fspath(path))
    return [path]
