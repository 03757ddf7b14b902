"""Command-line front end.

    ecgdx gen             synthetic photographed ECG dataset
    ecgdx split           seeded train/validation manifests
    ecgdx preprocess      rectify photos (optionally emit grayscale-inverted copies)
    ecgdx train           classifier stage (masks | images) or segmenter (seg)
    ecgdx pseudo-label    segmenter masks for records without one
    ecgdx fit-thresholds  per-class F1-optimal thresholds for an ensemble
    ecgdx eval            metrics report, TSV summary, optional figures
    ecgdx explain         XGrad-CAM overlay for one image and class

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import CLASSES, __version__
from .errors import ConfigError, EcgError
from .geometry import destination_size, locate_paper, rectify_quad
from .maskops import DEFAULT_MIN_AREA, DEFAULT_WINDOW_H
from .nnkit import TrainConfig, cosine_lr, load_weights, save_weights
from .nnkit.layers import sigmoid
from .pipeline import data as pdata
from .pipeline.ensemble import check_compatible, ensemble_logits
from .pipeline.metrics import (binarize, f1, fit_thresholds, metrics_report, thresholds_from_dict,
                                thresholds_to_dict)
from .pipeline.train import (PSEUDO_LABEL_COUNT, SEG_CROP, fit_mask_threshold, pseudo_label,
                             train_segmenter, train_stage)
from .raster import Raster, mask_to_raster, raster_to_mask, read_image, resize_array, write_image
from .syngen import GenConfig, config_dict, gen_dataset

log = logging.getLogger("ecgdx")

TRAIN_DEFAULTS = {
    **TrainConfig().to_dict(),
    "input_hw": list(pdata.CLASSIFIER_HW),
    "seg_crop": list(SEG_CROP),
}
PREPROCESS_DEFAULTS = {"clahe_tiles": 8, "clahe_clip": 2.0}
# threshold null: fit the IoU-best cut on the manifest's records that already have masks
PSEUDO_DEFAULTS = {"threshold": None, "window_h": DEFAULT_WINDOW_H, "min_area": DEFAULT_MIN_AREA,
                   "count": PSEUDO_LABEL_COUNT}
GEN_DEFAULTS = {k: v for k, v in config_dict(GenConfig()).items() if k not in ("n", "seed")}


class UsageError(EcgError):
    pass


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical(obj).encode("utf-8")).hexdigest()[:16]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def load_config(path, defaults: dict) -> dict:
    """Defaults overlaid with a strict JSON config (unknown keys rejected)."""
    cfg = dict(defaults)
    if path is None:
        return cfg
    try:
        user = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(user) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg.update(user)
    return cfg


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _train_config(cfg: dict) -> TrainConfig:
    keys = TrainConfig().to_dict().keys()
    try:
        return TrainConfig(**{k: cfg[k] for k in keys})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad training config: {exc}") from exc


# --- commands ----------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = load_config(args.config, GEN_DEFAULTS)
    try:
        gcfg = GenConfig(n=args.n, seed=args.seed, **cfg)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    manifest = gen_dataset(gcfg, args.out)
    settings = config_dict(gcfg)
    write_json(Path(args.out) / "gen_config.json", {"config": settings, "config_hash": config_hash(settings)})
    print(manifest)
    return 0


def cmd_split(args) -> int:
    records = pdata.load_manifest(args.manifest)
    train, val = pdata.split_dataset(records, args.train_frac, args.seed)
    out = Path(args.out)
    pdata.save_manifest(train, out / "train.json")
    pdata.save_manifest(val, out / "val.json")
    print(f"{out / 'train.json'}\t{len(train)}")
    print(f"{out / 'val.json'}\t{len(val)}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = load_config(args.config, PREPROCESS_DEFAULTS)
    records = pdata.load_manifest(args.manifest)
    out = Path(args.out)
    (out / "rectified").mkdir(parents=True, exist_ok=True)
    if args.emit_gray_inverted:
        (out / "gray_inverted").mkdir(parents=True, exist_ok=True)
    kept, failed = [], 0
    for rec in records:
        try:
            img = read_image(rec.image)
            quad = locate_paper(img, tiles=cfg["clahe_tiles"], clip_limit=cfg["clahe_clip"])
            rect = rectify_quad(img, quad)
            if (rect.width, rect.height) != destination_size(quad):
                raise EcgError("rectified size disagrees with the destination rule")
        except (EcgError, OSError) as exc:
            failed += 1
            log.warning("preprocess: skipping %s: %s", rec.id, exc)
            continue
        path = out / "rectified" / f"{rec.id}.ppm"
        write_image(rect, path)
        if args.emit_gray_inverted:
            write_image(Raster(pdata.gray_inverted(rect)), out / "gray_inverted" / f"{rec.id}.pgm")
        kept.append(pdata.SampleRecord(rec.id, str(path), rec.labels, rec.mask, rec.corners))
    manifest = pdata.save_manifest(kept, out / "manifest.json")
    settings = {"config": cfg, "input_manifest": file_digest(args.manifest)}
    write_json(out / "preprocess_log.json", {**settings, "config_hash": config_hash(settings),
                                             "n_input": len(records), "n_failed": failed})
    print(manifest)
    if records and failed / len(records) > 0.01:
        log.error("preprocess: %d of %d samples failed (more than 1%%)", failed, len(records))
        return 1
    return 0


def _load_dataset(records, kind: str, hw) -> pdata.Dataset:
    ids = [r.id for r in records]
    labels = [r.labels for r in records]
    if kind == "mask":
        missing = [r.id for r in records if r.mask is None]
        if missing:
            raise EcgError(f"mask stage needs masks; missing for {', '.join(missing[:5])}")
        masks = [pdata.prepare_mask(raster_to_mask(read_image(r.mask)), hw) for r in records]
        return pdata.stack_dataset(ids, labels, masks=masks)
    images = [pdata.prepare_image(read_image(r.image), hw) for r in records]
    return pdata.stack_dataset(ids, labels, images=images)


def _seg_pair(rec):
    """(inverted grayscale plane, mask); the rectified sheet is resampled to
    the mask's size when the two differ slightly."""
    if rec.mask is None:
        return rec.image, None
    mask = raster_to_mask(read_image(rec.mask))
    plane = pdata.gray_inverted(read_image(rec.image))
    if plane.shape != mask.shape:
        plane = resize_array(plane, *mask.shape)
    return plane, mask


def cmd_train(args) -> int:
    cfg = load_config(args.config, TRAIN_DEFAULTS)
    tcfg = _train_config(cfg)
    records = pdata.load_manifest(args.manifest)
    init = load_weights(args.init) if args.init else None
    settings = {"stage": args.stage, "config": cfg,
                "init": file_digest(args.init) if args.init else None,
                "manifest": file_digest(args.manifest)}
    chash = config_hash(settings)
    epochs = []
    if args.stage == "seg":
        if init is not None:
            raise UsageError("--init is not used by the segmenter stage")
        pairs = [_seg_pair(r) for r in records]
        params = train_segmenter(pairs, tcfg, crop=tuple(cfg["seg_crop"]), log=epochs)
    else:
        kind = "mask" if args.stage == "masks" else "grayscale_inverted"
        hw = tuple(init.arch["input_hw"]) if init is not None else tuple(cfg["input_hw"])
        data = _load_dataset(records, kind, hw)
        params = train_stage(init, data, kind, tcfg, log=epochs)
    save_weights(params, args.out, meta={"config_hash": chash, "stage": args.stage})
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.json")
    write_json(log_path, {
        **settings,
        "config_hash": chash,
        "epochs": epochs,
        "lr_schedule": [cosine_lr(t, tcfg) for t in range(tcfg.epochs + 1)],
    })
    print(args.out)
    return 0


def cmd_pseudo_label(args) -> int:
    cfg = load_config(args.config, PSEUDO_DEFAULTS)
    params = load_weights(args.weights)
    records = pdata.load_manifest(args.manifest)
    todo = [r for r in records if r.mask is None][:int(cfg["count"])]
    threshold = cfg["threshold"]
    if threshold is None:
        known = [_seg_pair(r) for r in records if r.mask is not None]
        threshold = fit_mask_threshold(params, known) if known else 0.5
    out = Path(args.out)
    (out / "pseudo_masks").mkdir(parents=True, exist_ok=True)
    labeled = pseudo_label(params, [read_image(r.image) for r in todo], float(threshold),
                           cfg["window_h"], cfg["min_area"])
    new = {}
    for rec, (_, mask) in zip(todo, labeled):
        path = out / "pseudo_masks" / f"{rec.id}.pgm"
        write_image(mask_to_raster(mask), path)
        new[rec.id] = pdata.SampleRecord(rec.id, rec.image, rec.labels, str(path), rec.corners)
    manifest = pdata.save_manifest([new.get(r.id, r) for r in records], out / "manifest.json")
    settings = {"config": cfg, "weights": file_digest(args.weights), "manifest": file_digest(args.manifest)}
    write_json(out / "pseudo_label_log.json", {**settings, "config_hash": config_hash(settings),
                                               "threshold": float(threshold), "labeled": sorted(new)})
    print(manifest)
    return 0


def _load_ensemble(spec: str):
    paths = [p for p in spec.split(",") if p]
    if not paths:
        raise UsageError("--weights needs at least one file")
    models = [load_weights(p) for p in paths]
    check_compatible(models)
    if models[0].arch.get("kind") != "classifier":
        raise EcgError("ensemble members must be classifiers")
    return paths, models


def _ensemble_probs(models, records):
    hw = tuple(models[0].arch["input_hw"])
    data = _load_dataset(records, "grayscale_inverted", hw)
    return sigmoid(ensemble_logits(models, data.images)), data.labels


def cmd_fit_thresholds(args) -> int:
    paths, models = _load_ensemble(args.weights)
    records = pdata.load_manifest(args.manifest)
    probs, labels = _ensemble_probs(models, records)
    t = fit_thresholds(probs, labels)
    settings = {"weights": [file_digest(p) for p in paths], "manifest": file_digest(args.manifest)}
    write_json(args.out, {"thresholds": thresholds_to_dict(t), "config_hash": config_hash(settings)})
    print(args.out)
    return 0


def _read_thresholds(path) -> np.ndarray:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"threshold file {path} is not valid JSON") from exc
    return thresholds_from_dict(doc.get("thresholds", doc) if isinstance(doc, dict) else {})


def cmd_eval(args) -> int:
    paths, models = _load_ensemble(args.weights)
    records = pdata.load_manifest(args.manifest)
    t = _read_thresholds(args.thresholds) if args.thresholds else np.full(len(CLASSES), 0.5)
    probs, labels = _ensemble_probs(models, records)
    report = metrics_report(probs, labels, t).to_dict()
    # the sweep is exact on its own fitting set: fitted F1 >= F1 at 0.5
    fitted, half = binarize(probs, fit_thresholds(probs, labels)), binarize(probs, 0.5)
    report["fitted_f1_dominates_0.5"] = bool(all(
        f1(fitted[:, k], labels[:, k]) >= f1(half[:, k], labels[:, k]) for k in range(len(CLASSES))))
    settings = {"weights": [file_digest(p) for p in paths], "manifest": file_digest(args.manifest),
                "thresholds": [float(v) for v in t]}
    report["config_hash"] = config_hash(settings)
    report["members"] = [Path(p).name for p in paths]
    write_json(args.report, report)

    print("class\tauroc\tf1\tthreshold")
    for name in CLASSES:
        a = report["per_class_auroc"][name]
        print(f"{name}\t{'NA' if a is None else f'{a:.4f}'}\t{report['per_class_f1'][name]:.4f}\t"
              f"{report['thresholds'][name]:.2f}")
    macro = report["macro_auroc"]
    print(f"macro\t{'NA' if macro is None else f'{macro:.4f}'}\t{report['macro_f1']:.4f}\t")

    if args.figures:
        from .plotting import save_metrics_figure, save_roc_figure
        fig_dir = Path(args.figures)
        fig_dir.mkdir(parents=True, exist_ok=True)
        save_roc_figure(probs, labels, fig_dir / "roc.png")
        save_metrics_figure(report, fig_dir / "per_class.png")
    return 0


def cmd_explain(args) -> int:
    from .explain import overlay, xgradcam

    params = load_weights(args.weights)
    img = read_image(args.image)
    x = pdata.prepare_image(img, tuple(params.arch["input_hw"]))
    heat = xgradcam(params, x, CLASSES.index(args.class_name))
    full = Raster(np.clip(resize_array(heat.raster.plane, img.height, img.width), 0.0, 1.0))
    write_image(overlay(img, full, args.alpha), args.out)
    if args.heatmap:
        write_image(full, args.heatmap)
    print(args.out)
    return 0


# --- parser ------------------------------------------------------------------

def _defaults_epilog(title: str, defaults: dict) -> str:
    return f"{title} (JSON keys and defaults):\n" + json.dumps(defaults, indent=1, sort_keys=True)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    p = argparse.ArgumentParser(prog="ecgdx", description=__doc__, formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"ecgdx {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", help="generate a synthetic dataset", formatter_class=fmt,
                       epilog=_defaults_epilog("--config", GEN_DEFAULTS))
    s.add_argument("--n", type=int, required=True, help="number of samples")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    s.add_argument("--config", help="JSON generator settings")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("split", help="seeded train/validation split of a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="directory for train.json and val.json")
    s.add_argument("--train-frac", type=float, default=0.9, help="training fraction (default 0.9)")
    s.add_argument("--seed", type=int, default=0, help="shuffle seed (default 0)")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("preprocess", help="rectify photographed sheets", formatter_class=fmt,
                       epilog=_defaults_epilog("--config", PREPROCESS_DEFAULTS))
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--emit-gray-inverted", action="store_true",
                   help="also write grayscale-inverted PGM copies")
    s.add_argument("--config", help="JSON preprocessing settings")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a classifier stage or the segmenter", formatter_class=fmt,
                       epilog=_defaults_epilog("--config", TRAIN_DEFAULTS))
    s.add_argument("--stage", required=True, choices=("masks", "images", "seg"))
    s.add_argument("--manifest", required=True)
    s.add_argument("--config", help="JSON training settings")
    s.add_argument("--init", help="initial weights (stage 2 transfer); omit for fresh init")
    s.add_argument("--out", required=True, help="output ECGW weight file")
    s.add_argument("--log", help="training log path (default: <out>.log.json)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("pseudo-label", help="segmenter masks for records without one",
                       formatter_class=fmt, epilog=_defaults_epilog("--config", PSEUDO_DEFAULTS))
    s.add_argument("--weights", required=True, help="segmenter weights")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="JSON pseudo-label settings")
    s.set_defaults(func=cmd_pseudo_label)

    s = sub.add_parser("fit-thresholds", help="fit per-class thresholds on a (validation) manifest")
    s.add_argument("--weights", required=True, help="comma-separated ensemble members")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_thresholds)

    s = sub.add_parser("eval", help="evaluate an ensemble")
    s.add_argument("--weights", required=True, help="comma-separated ensemble members")
    s.add_argument("--manifest", required=True)
    s.add_argument("--thresholds", help="threshold JSON (default 0.5 for every class)")
    s.add_argument("--report", required=True, help="output report JSON")
    s.add_argument("--figures", help="directory for ROC and per-class PNG figures")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("explain", help="XGrad-CAM overlay for one image")
    s.add_argument("--weights", required=True)
    s.add_argument("--image", required=True, help="rectified photo (PPM/PGM)")
    s.add_argument("--class", dest="class_name", required=True, choices=CLASSES)
    s.add_argument("--out", required=True, help="overlay PPM")
    s.add_argument("--heatmap", help="also write the heatmap as PGM")
    s.add_argument("--alpha", type=float, default=0.5, help="heatmap opacity (default 0.5)")
    s.set_defaults(func=cmd_explain)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        parser.print_usage(sys.stderr)
        print(f"ecgdx: error: {exc}", file=sys.stderr)
        return 2
    except (EcgError, OSError) as exc:
        print(f"ecgdx: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
