"""Batch command-line front end.

Every subcommand prints ``key=value`` lines on stdout and the defaults in
effect (prefixed ``# ``) on stderr. Exit codes: 0 success, 1 usage error,
2 data error.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .augment import AugmentConfig, apply_range_combo, common_aug, read_augment_config
from .metrics import ConfusionMatrix, PanopticEvaluator, format_report, miou
from .model import TINY_CONFIG, ModelConfig, Segmenter, init_weights, load_weights
from .occupancy import (DEFAULT_WIDTHS, find_crossover, format_plot_data, format_table,
                        merge_rows, occupancy_curve)
from .post import DEFAULT_NUM_SUB, KnnParams, knn_smooth, range_post, subcloud_split, subcloud_stitch
from .raster import rasterize, unproject
from .render import error_map_bev, error_map_range, write_ppm
from .types import (SEMANTIC_KITTI, SEMANTIC_KITTI_LEARNING_MAP, SEMANTIC_KITTI_SENSOR,
                    IGNORE_LABEL, NO_INDEX, PointCloud, remap_labels)
from .views import partition, rasterize_view, view_manifest

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers -------------------------------------------------------------


def _emit(values: dict, prefix: str = "") -> None:
    text = format_report(values, prefix)
    if text:
        print(text)


def _defaults(values: dict) -> None:
    for key, value in values.items():
        print(f"# {key}={value}", file=sys.stderr)


def _sensor(args):
    spec = io.read_sensor_spec(args.sensor) if args.sensor else SEMANTIC_KITTI_SENSOR
    if getattr(args, "width", None):
        spec = spec.with_width(args.width)
    _defaults({"fov_up": spec.fov_up, "fov_down": spec.fov_down,
               "height": spec.height, "width": spec.width})
    return spec


def _taxonomy(args):
    return io.read_taxonomy(args.classes) if args.classes else SEMANTIC_KITTI


def _load_cloud(scan, labels=None, remap: bool = False) -> PointCloud:
    cloud = io.read_scan(scan)
    if labels:
        sem, inst = io.read_labels(labels, len(cloud))
        if remap:
            sem = remap_labels(sem, SEMANTIC_KITTI_LEARNING_MAP)
        cloud = cloud.replace(labels=sem, instances=inst)
    return cloud


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_seed(args, why: str) -> None:
    if args.seed is None:
        raise UsageError(f"--seed is required {why}")


def _pairs(gt_path, pred_path, suffix=".label"):
    gts = io.list_files(gt_path, suffix)
    preds = io.list_files(pred_path, suffix)
    if len(gts) != len(preds):
        raise io.FormatError(f"{len(gts)} ground-truth files but {len(preds)} prediction files")
    return list(zip(gts, preds))


def _pool_map(fn, items, jobs: int):
    """Ordered map; results never depend on ``jobs``."""
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if jobs == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _point_grid_labels(img, point_labels) -> np.ndarray:
    """Grid raster of per-point labels taken from each grid's winning point."""
    g2p = img.projection.grid_to_point
    out = np.full(g2p.shape, IGNORE_LABEL, dtype=np.int64)
    hit = g2p != NO_INDEX
    out[hit] = np.asarray(point_labels)[g2p[hit]]
    return out


# -- subcommands ---------------------------------------------------------


def cmd_rasterize(args) -> None:
    spec = _sensor(args)
    cloud = _load_cloud(args.scan, args.labels)
    img = rasterize(cloud, spec)
    proj = img.projection
    out = _out_dir(args.out_dir)
    stem = Path(args.scan).stem
    io.write_raster(out / f"{stem}.raster", img.channels)
    if img.label_grid is not None:
        io.write_labels(out / f"{stem}.grid.label", img.label_grid.ravel())
    _emit({
        "points": len(cloud),
        "height": spec.height,
        "width": spec.width,
        "occupied": proj.occupied,
        "displaced": len(proj.displaced),
        "out_of_fov": len(proj.out_of_fov),
        "grid_fill": proj.occupied / (spec.height * spec.width),
    })


def cmd_augment(args) -> None:
    _require_seed(args, "for augment")
    spec = _sensor(args)
    config = read_augment_config(args.config) if args.config else AugmentConfig()
    _defaults(config.describe())
    rng = np.random.default_rng(args.seed)
    a = _load_cloud(args.scan, args.labels, args.remap)
    b = _load_cloud(args.scan_b, args.labels_b, args.remap)
    if args.common:
        a = common_aug(a, config, rng)
        b = common_aug(b, config, rng)
    img_a, img_b = rasterize(a, spec), rasterize(b, spec)
    before = int(img_a.occupied_mask.sum())
    out_img = apply_range_combo(img_a, img_b, config, rng)
    out = _out_dir(args.out_dir)
    stem = Path(args.scan).stem
    io.write_raster(out / f"{stem}.aug.raster", out_img.channels)
    if out_img.label_grid is not None:
        io.write_labels(out / f"{stem}.aug.grid.label", out_img.label_grid.ravel())
    _emit({"seed": args.seed, "height": spec.height, "width": spec.width,
           "occupied_before": before, "occupied_after": int(out_img.occupied_mask.sum())})


def cmd_str_split(args) -> None:
    spec = _sensor(args)
    cloud = io.read_scan(args.scan)
    raw = io.read_label_stream(args.labels)
    if len(raw) != len(cloud):
        raise io.FormatError(f"{args.labels}: {len(raw)} labels for {len(cloud)} points")
    width_train = args.width_train or spec.width
    _defaults({"views": args.views, "width_train": width_train})
    part = partition(cloud, args.views)
    out = _out_dir(args.out_dir)
    files = []
    for k in range(part.z):
        name = f"view_{k}.label"
        raw[part.indices(k)].astype("<u4").tofile(out / name)
        if args.rasters:
            view = rasterize_view(cloud, part, k, spec, width_train)
            io.write_raster(out / f"view_{k}.raster", view.image.channels)
        files.append(name)
    unassigned = np.flatnonzero(part.assignments == NO_INDEX)
    raw[unassigned].astype("<u4").tofile(out / "unassigned.label")
    manifest = view_manifest(part, len(cloud), spec.width, width_train, files)
    (out / "manifest.txt").write_text(manifest + "unassigned_file = unassigned.label\n", encoding="utf-8")
    _emit({"views": part.z, "points": len(cloud), "unassigned": len(unassigned),
           "view_sizes": ",".join(str(int(s)) for s in part.sizes())})


def cmd_str_stitch(args) -> None:
    manifest = Path(args.manifest)
    kv = io.read_kv(manifest)
    try:
        z = int(kv["views"])
        files = [f for f in kv["view_files"].split(",") if f]
        n = int(kv["points"])
    except (KeyError, ValueError) as exc:
        raise io.FormatError(f"{manifest}: bad manifest ({exc})") from None
    if len(files) != z:
        raise io.FormatError(f"{manifest}: {len(files)} view files for {z} views")
    cloud = io.read_scan(args.scan)
    if len(cloud) != n:
        raise io.FormatError(f"{args.scan}: {len(cloud)} points, manifest says {n}")
    part = partition(cloud, z)
    out = np.zeros(n, dtype=np.uint32)
    for k, name in enumerate(files):
        values = io.read_label_stream(manifest.parent / name)
        idx = part.indices(k)
        if len(values) != len(idx):
            raise io.FormatError(f"{name}: {len(values)} labels for {len(idx)} view points")
        out[idx] = values
    unassigned = np.flatnonzero(part.assignments == NO_INDEX)
    extra = kv.get("unassigned_file")
    if extra and (manifest.parent / extra).exists():
        values = io.read_label_stream(manifest.parent / extra)
        if len(values) != len(unassigned):
            raise io.FormatError(f"{extra}: {len(values)} labels for {len(unassigned)} points")
        out[unassigned] = values
    out.astype("<u4").tofile(args.out)
    _emit({"views": z, "points": n})


def cmd_postprocess(args) -> None:
    spec = _sensor(args)
    knn = None if args.no_knn else KnnParams(args.knn_k, args.knn_window, args.knn_cutoff)
    _defaults({"num_sub": args.num_sub, "knn": "off" if knn is None else
               f"k={knn.k},window={knn.window},range_cutoff={knn.range_cutoff}"})
    if len(args.grid_pred) != args.num_sub:
        raise UsageError(f"need {args.num_sub} --grid-pred files, got {len(args.grid_pred)}")
    cloud = io.read_scan(args.scan)
    preds = []
    for sub, path in zip(subcloud_split(cloud, args.num_sub), args.grid_pred):
        img = rasterize(sub, spec)
        grid = io.read_grid_labels(path, spec.height, spec.width)
        if knn is None:
            preds.append(unproject(img, grid, sub))
        else:
            preds.append(knn_smooth(img, grid, sub, knn.k, knn.window, knn.range_cutoff))
    labels = subcloud_stitch(preds, args.num_sub, len(cloud))
    io.write_predictions(args.out, labels)
    _emit({"points": len(cloud), "num_sub": args.num_sub})


def _read_eval_pair(pair, remap: bool):
    gt_path, pred_path = pair
    gt_sem, gt_inst = io.read_labels(gt_path)
    pred_sem, pred_inst = io.read_labels(pred_path, len(gt_sem))
    if remap:
        gt_sem = remap_labels(gt_sem, SEMANTIC_KITTI_LEARNING_MAP)
    return pred_sem, pred_inst, gt_sem, gt_inst


def cmd_eval_sem(args) -> None:
    tax = _taxonomy(args)
    _defaults({"classes": tax.num_classes, "ignore": tax.ignore, "jobs": args.jobs})

    def one(pair):
        pred, _, gt, _ = _read_eval_pair(pair, args.remap)
        return ConfusionMatrix(tax.num_classes, tax.ignore).update(pred, gt)

    pairs = _pairs(args.gt, args.pred)
    cm = ConfusionMatrix(tax.num_classes, tax.ignore)
    for part in _pool_map(one, pairs, args.jobs):
        cm = cm.merge(part)
    iou, mean = miou(cm)
    _emit({"scans": len(pairs), "points": cm.total, "miou": mean})
    _emit({name: float(iou[c]) for c, name in enumerate(tax.names) if c != tax.ignore}, "iou_")


def cmd_eval_pan(args) -> None:
    tax = _taxonomy(args)
    _defaults({"classes": tax.num_classes, "ignore": tax.ignore, "jobs": args.jobs, "match_iou": 0.5})

    def one(pair):
        return PanopticEvaluator(tax).add_scan(*_read_eval_pair(pair, args.remap))

    ev = PanopticEvaluator(tax)
    pairs = _pairs(args.gt, args.pred)
    for part in _pool_map(one, pairs, args.jobs):
        ev = ev.merge(part)
    report = ev.report()
    _emit({"scans": len(pairs)})
    _emit(report.summary())
    for c, q in sorted(report.per_class.items()):
        _emit({"pq": q.pq, "sq": q.sq, "rq": q.rq}, f"{tax.names[c]}.")


def cmd_occupancy(args) -> None:
    spec = _sensor(args)
    widths = sorted(set(args.widths)) if args.widths else list(DEFAULT_WIDTHS)
    _defaults({"widths": ",".join(map(str, widths)), "jobs": args.jobs})
    scans = io.list_files(args.scans, ".bin")
    if not scans:
        raise io.FormatError(f"{args.scans}: no .bin scans")

    def one(path):
        return occupancy_curve(io.read_scan(path), spec.height, (spec.fov_up, spec.fov_down), widths)

    curves = _pool_map(one, scans, args.jobs)
    table = [merge_rows([c[i] for c in curves]) for i in range(len(widths))]
    cross = find_crossover(table)
    out = _out_dir(args.out_dir)
    (out / "occupancy.csv").write_text(format_table(table), encoding="utf-8")
    (out / "occupancy.dat").write_text(format_plot_data(table), encoding="utf-8")
    if not args.no_plot:
        from .plotting import plot_occupancy

        plot_occupancy(table, out / "occupancy.png", cross)
    _emit({"scans": len(scans), "widths": len(widths),
           "crossover": "none" if cross is None else f"{cross[0]},{cross[1]}"})


def _model_config(name: str) -> ModelConfig:
    return TINY_CONFIG if name == "tiny" else ModelConfig()


def cmd_toy_infer(args) -> None:
    spec = _sensor(args)
    config = _model_config(args.model)
    if args.weights:
        weights = load_weights(args.weights, config)
    else:
        _require_seed(args, "when no --weights file is given")
        weights = init_weights(config, args.seed)
    knn = None if args.no_knn else KnnParams()
    _defaults({"model": args.model, "num_sub": args.num_sub, "dtype": config.dtype,
               "knn": "off" if knn is None else f"k={knn.k},window={knn.window},range_cutoff={knn.range_cutoff}"})
    predictor = Segmenter(config, weights)
    scans = io.list_files(args.scan, ".bin")
    out = Path(args.out)
    if len(scans) > 1 or Path(args.scan).is_dir():
        out.mkdir(parents=True, exist_ok=True)
        targets = [out / (p.stem + ".label") for p in scans]
    else:
        targets = [out]

    def one(pair):
        scan, target = pair
        cloud = io.read_scan(scan)
        labels = range_post(cloud, spec, args.num_sub, predictor, knn)
        io.write_predictions(target, labels)
        return len(cloud)

    counts = _pool_map(one, list(zip(scans, targets)), args.jobs)
    _emit({"scans": len(scans), "points": sum(counts)})


def cmd_render(args) -> None:
    spec = _sensor(args)
    _defaults({"extent_m": args.extent, "px": args.px})
    cloud = io.read_scan(args.scan)
    pred, _ = io.read_labels(args.pred, len(cloud))
    gt, _ = io.read_labels(args.gt, len(cloud))
    if args.remap:
        gt = remap_labels(gt, SEMANTIC_KITTI_LEARNING_MAP)
    bev = error_map_bev(cloud, pred, gt, args.extent, args.px)
    img = rasterize(cloud, spec)
    rng_map = error_map_range(img, _point_grid_labels(img, pred), _point_grid_labels(img, gt))
    out = _out_dir(args.out_dir)
    stem = Path(args.scan).stem
    write_ppm(out / f"{stem}.bev.ppm", bev)
    write_ppm(out / f"{stem}.range.ppm", rng_map)
    if not args.no_plot:
        from .plotting import plot_error_maps

        plot_error_maps(bev, rng_map, out / f"{stem}.errors.png", stem)
    keep = gt != IGNORE_LABEL
    _emit({"points": len(cloud), "evaluated": int(keep.sum()),
           "wrong": int((pred != gt)[keep].sum())})


# -- parser --------------------------------------------------------------


def _add_sensor(p, width: bool = True) -> None:
    p.add_argument("--sensor", help="sensor spec file (key = value); default 64-beam 3/25 deg, W=2048")
    if width:
        p.add_argument("--width", type=int, help="override the raster width")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rangekit", description="LiDAR range-view toolkit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("rasterize", help="scan -> six-channel raster and bookkeeping stats")
    p.add_argument("--scan", required=True)
    p.add_argument("--labels")
    p.add_argument("--out-dir", required=True)
    _add_sensor(p)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("augment", help="scan pair -> RangeAug raster")
    p.add_argument("--scan", required=True)
    p.add_argument("--labels")
    p.add_argument("--scan-b", required=True)
    p.add_argument("--labels-b")
    p.add_argument("--config", help="augmentation config (key = value)")
    p.add_argument("--common", action="store_true", help="apply point-level CommonAug first")
    p.add_argument("--remap", action="store_true", help="map raw SemanticKITTI ids to 0..19")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    _add_sensor(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("str-split", help="split a label file into azimuth views")
    p.add_argument("--scan", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("-Z", "--views", type=int, default=4)
    p.add_argument("--width-train", type=int)
    p.add_argument("--rasters", action="store_true", help="also write per-view rasters")
    p.add_argument("--out-dir", required=True)
    _add_sensor(p)
    p.set_defaults(func=cmd_str_split)

    p = sub.add_parser("str-stitch", help="stitch per-view label files back to scan order")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scan", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_str_stitch)

    p = sub.add_parser("postprocess", help="sub-cloud grid predictions -> point predictions")
    p.add_argument("--scan", required=True)
    p.add_argument("--grid-pred", action="append", default=[], help="one H x W label file per sub-cloud")
    p.add_argument("--num-sub", type=int, default=DEFAULT_NUM_SUB)
    p.add_argument("--no-knn", action="store_true")
    p.add_argument("--knn-k", type=int, default=KnnParams().k)
    p.add_argument("--knn-window", type=int, default=KnnParams().window)
    p.add_argument("--knn-cutoff", type=float, default=KnnParams().range_cutoff)
    p.add_argument("--out", required=True)
    _add_sensor(p)
    p.set_defaults(func=cmd_postprocess)

    for name, func, what in (("eval-sem", cmd_eval_sem, "IoU / mIoU"),
                             ("eval-pan", cmd_eval_pan, "PQ / SQ / RQ / PQ-dagger")):
        p = sub.add_parser(name, help=f"{what} over label files or directories")
        p.add_argument("--gt", required=True)
        p.add_argument("--pred", required=True)
        p.add_argument("--classes", help="taxonomy file; default SemanticKITTI 20 classes")
        p.add_argument("--remap", action="store_true", help="map raw SemanticKITTI gt ids to 0..19")
        p.add_argument("--jobs", type=int, default=1)
        p.set_defaults(func=func)

    p = sub.add_parser("occupancy", help="grid fill vs point retention over widths")
    p.add_argument("--scans", required=True, help=".bin file or directory")
    p.add_argument("--widths", type=int, nargs="+")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-plot", action="store_true")
    p.add_argument("--out-dir", required=True)
    _add_sensor(p, width=False)
    p.set_defaults(func=cmd_occupancy)

    p = sub.add_parser("toy-infer", help="scan(s) -> predictions via the toy segmenter and RangePost")
    p.add_argument("--scan", required=True, help=".bin file or directory")
    p.add_argument("--weights")
    p.add_argument("--seed", type=int)
    p.add_argument("--model", choices=("default", "tiny"), default="default")
    p.add_argument("--num-sub", type=int, default=DEFAULT_NUM_SUB)
    p.add_argument("--no-knn", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="label file, or directory for several scans")
    _add_sensor(p)
    p.set_defaults(func=cmd_toy_infer)

    p = sub.add_parser("render", help="BEV and range-view error maps (PPM, plus PNG figure)")
    p.add_argument("--scan", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--extent", type=float, default=50.0)
    p.add_argument("--px", type=int, default=512)
    p.add_argument("--remap", action="store_true")
    p.add_argument("--no-plot", action="store_true")
    p.add_argument("--out-dir", required=True)
    _add_sensor(p)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        print("rangekit: error: a subcommand is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except UsageError as exc:
        print(f"rangekit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"rangekit {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
