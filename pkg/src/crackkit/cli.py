"""Batch command line entry points.

Subcommands cover the offline workflows: building and extending patch
datasets, one-shot crack annotation, mask evaluation, and loss reporting.
Every command is deterministic for a fixed --seed, writes output files
atomically, and exits 0 on success, 1 on runtime failure, 2 on usage
errors.  Failures print one machine-readable JSON object to stderr.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import tempfile

import click

from .annotate import annotate_crack
from .evalmetrics import evaluate_dataset, format_report_table
from .geodesic import MetricParams
from .orientation import build_cake_wavelets
from .patchset import (PatchManifest, compose_ratio_dataset, count_labels,
                       extend_dataset, label_patches)
from .raster import (extract_patch, load_image, load_mask, load_probability_map,
                     save_image, save_mask, split_into_patches)
from .trainmath import (TverskyConfig, bce_loss, dice_bce_loss, dice_loss,
                        inversion_loss, tversky_loss)
from .widthseg import width_profile_to_json

log = logging.getLogger("crackkit")


def _fail(error: str, message: str, code: int):
    sys.stderr.write(json.dumps({"error": error, "message": message},
                                sort_keys=True) + "\n")
    sys.exit(code)


def _write_text_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_ratio(text: str) -> float | None:
    """'70/30' -> crack fraction 0.7; 'full' -> None (keep every patch)."""
    if text.strip().lower() == "full":
        return None
    parts = text.split("/")
    try:
        crack, background = (float(p) for p in parts)
    except ValueError:
        crack = background = -1.0
    if len(parts) != 2 or crack < 0 or background < 0 or crack + background <= 0:
        _fail("bad_ratio", f"ratio must be CRACK/BACKGROUND or 'full', got {text!r}", 2)
    return crack / (crack + background)


def _paired_sources(images_dir: str, masks_dir: str):
    """(image_path, mask_path, image_id, split) per image, paired by filename.

    train/ and test/ subdirectories select the split; a flat directory is
    all train.  Unpaired files on either side are an error.
    """
    subdirs = [d for d in ("train", "test")
               if os.path.isdir(os.path.join(images_dir, d))]
    groups = [(d, d) for d in subdirs] if subdirs else [("", "train")]
    out, unpaired = [], []
    for sub, split in groups:
        img_dir = os.path.join(images_dir, sub)
        msk_dir = os.path.join(masks_dir, sub)
        imgs = {f for f in os.listdir(img_dir) if f.endswith(".png")}
        msks = {f for f in os.listdir(msk_dir) if f.endswith(".png")} \
            if os.path.isdir(msk_dir) else set()
        unpaired += [os.path.join(sub, f) for f in sorted(imgs ^ msks)]
        for name in sorted(imgs & msks):
            image_id = os.path.join(sub, name[:-4]).replace(os.sep, "/").lstrip("/")
            out.append((os.path.join(img_dir, name), os.path.join(msk_dir, name),
                        image_id, split))
    if unpaired:
        _fail("unpaired_files", "no image/mask partner for: " + ", ".join(unpaired), 1)
    if not out:
        _fail("empty_dataset", f"no paired PNGs under {images_dir} and {masks_dir}", 1)
    return out


def _materialize(manifest: PatchManifest, sources, base_dir: str) -> None:
    """Write every record's image and mask patch under base_dir."""
    by_id = {image_id: (img, msk) for img, msk, image_id, _ in sources}
    by_image: dict[str, list] = {}
    for record in manifest.records:
        by_image.setdefault(record.source_image_id, []).append(record)
    for image_id, records in sorted(by_image.items()):
        image = load_image(by_id[image_id][0])
        gt = load_mask(by_id[image_id][1])
        for r in records:
            stem = f"{image_id.replace('/', '_')}_x{r.origin[0]}_y{r.origin[1]}.png"
            for tree, art in (("patches", extract_patch(image, r.origin, r.patch_size)),
                              ("patch_masks", extract_patch(gt, r.origin, r.patch_size))):
                directory = os.path.join(base_dir, tree, r.split, r.label)
                os.makedirs(directory, exist_ok=True)
                save = save_image if tree == "patches" else save_mask
                save(art, os.path.join(directory, stem))


def _echo_counts(manifest: PatchManifest) -> None:
    crack, background = count_labels(manifest.records)
    total = crack + background
    click.echo(f"crack {crack} ({100.0 * crack / total:.2f}%)  "
               f"background {background} ({100.0 * background / total:.2f}%)  "
               f"total {total}")


@click.group(help="Crack segmentation toolkit: datasets, annotation, evaluation.")
def main():
    level = os.environ.get("CRACKKIT_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


@main.group(help="Patch dataset construction.")
def dataset():
    pass


@dataset.command("build", help="Slice image/mask pairs into labeled patches.")
@click.option("--images", "images_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--masks", "masks_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--patch-size", default=512, show_default=True)
@click.option("--ratio", default="70/30", show_default=True,
              help="Crack/background ratio of the sampled set, or 'full' to keep all.")
@click.option("--crack-count", default=1400, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--min-crack-pixels", default=1, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--materialize/--no-materialize", default=True, show_default=True,
              help="Also write the patch PNGs next to the manifest.")
def dataset_build(images_dir, masks_dir, patch_size, ratio, crack_count, seed,
                  min_crack_pixels, out_path, materialize):
    fraction = _parse_ratio(ratio)
    sources = _paired_sources(images_dir, masks_dir)
    pool = []
    for _, mask_path, image_id, split in sources:
        gt = load_mask(mask_path)
        try:
            grid = split_into_patches((gt.width, gt.height), patch_size)
            pool += label_patches(grid, gt, min_crack_pixels, image_id, split)
        except ValueError as exc:
            _fail("bad_geometry", f"{mask_path}: {exc}", 1)
    log.info("pooled %d patches from %d images", len(pool), len(sources))
    try:
        if fraction is None:
            records = tuple(sorted(pool))
            crack, _ = count_labels(records)
            manifest = PatchManifest(f"full-seed{seed}", records,
                                     crack / len(records), seed)
        else:
            manifest = compose_ratio_dataset(pool, crack_count, fraction, seed)
    except ValueError as exc:
        _fail("compose_failed", str(exc), 1)
    _write_text_atomic(out_path, manifest.to_jsonl())
    if materialize:
        _materialize(manifest, sources, os.path.dirname(os.path.abspath(out_path)))
    _echo_counts(manifest)


@dataset.command("extend", help="Add background patches to an existing manifest.")
@click.option("--base", "base_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--images", "images_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--masks", "masks_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--ratio", required=True, help="New crack/background ratio, e.g. 30/70.")
@click.option("--seed", default=0, show_default=True)
@click.option("--min-crack-pixels", default=1, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--materialize/--no-materialize", default=True, show_default=True)
def dataset_extend(base_path, images_dir, masks_dir, ratio, seed,
                   min_crack_pixels, out_path, materialize):
    fraction = _parse_ratio(ratio)
    if fraction is None:
        _fail("bad_ratio", "extend needs an explicit ratio, not 'full'", 2)
    with open(base_path, "r", encoding="utf-8") as fh:
        try:
            base = PatchManifest.from_jsonl(fh.read())
        except (ValueError, KeyError) as exc:
            _fail("bad_manifest", f"{base_path}: {exc}", 1)
    if not base.records:
        _fail("bad_manifest", f"{base_path} has no records", 1)
    patch_size = base.records[0].patch_size
    sources = _paired_sources(images_dir, masks_dir)
    pool = []
    for _, mask_path, image_id, split in sources:
        gt = load_mask(mask_path)
        grid = split_into_patches((gt.width, gt.height), patch_size)
        pool += label_patches(grid, gt, min_crack_pixels, image_id, split)
    try:
        manifest = extend_dataset(base, pool, fraction, seed)
    except ValueError as exc:
        _fail("extend_failed", str(exc), 1)
    _write_text_atomic(out_path, manifest.to_jsonl())
    if materialize:
        _materialize(manifest, sources, os.path.dirname(os.path.abspath(out_path)))
    _echo_counts(manifest)


@main.command(help="Track a crack between two endpoints and write its mask.")
@click.option("--image", "image_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--endpoints", required=True, help="x1,y1,x2,y2 in pixel coordinates.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--params", "params_json", default=None,
              help="JSON dict of metric parameters, e.g. '{\"zeta\": 0.2}'.")
@click.option("--edge-sigma", default=2.0, show_default=True)
@click.option("--max-width", default=32, show_default=True)
@click.option("--n-orientations", default=16, show_default=True)
@click.option("--spatial-size", default=65, show_default=True)
def annotate(image_path, endpoints, out_path, params_json, edge_sigma,
             max_width, n_orientations, spatial_size):
    parts = endpoints.split(",")
    try:
        x1, y1, x2, y2 = (float(p) for p in parts)
    except ValueError:
        _fail("bad_endpoints", f"--endpoints must be x1,y1,x2,y2, got {endpoints!r}", 2)
    try:
        params = MetricParams(**json.loads(params_json)) if params_json else MetricParams()
    except (TypeError, ValueError) as exc:
        _fail("bad_params", str(exc), 2)
    try:
        image = load_image(image_path)
    except Exception as exc:
        _fail("unreadable_image", f"{image_path}: {exc}", 1)
    stack = build_cake_wavelets(n_orientations, spatial_size)
    try:
        result = annotate_crack(image, ((x1, y1), (x2, y2)), params, stack,
                                edge_sigma=edge_sigma, max_width=max_width)
    except ValueError as exc:
        _fail("invalid_input", str(exc), 2)
    except RuntimeError as exc:
        _fail("unreachable", str(exc), 1)
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    save_mask(result.mask, out_path)
    widths_path = os.path.splitext(out_path)[0] + ".widths.json"
    _write_text_atomic(widths_path, width_profile_to_json(result.widths) + "\n")
    click.echo(json.dumps({"mask": out_path, "widths": widths_path,
                           "vertices": len(result.track)}, sort_keys=True))


@main.command("eval", help="Score prediction maps against ground-truth masks.")
@click.option("--pred", "pred_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--gt", "gt_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--tolerance", type=click.Choice(["0", "2", "5"]), default="0",
              show_default=True, help="Match distance in pixels.")
@click.option("--threshold", default=0.5, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def eval_command(pred_dir, gt_dir, tolerance, threshold, out_path):
    preds = {f for f in os.listdir(pred_dir) if f.endswith(".png")}
    gts = {f for f in os.listdir(gt_dir) if f.endswith(".png")}
    unpaired = sorted(preds ^ gts)
    if unpaired:
        _fail("unpaired_files", "no prediction/gt partner for: " + ", ".join(unpaired), 1)
    if not preds:
        _fail("empty_dataset", f"no PNGs under {pred_dir} and {gt_dir}", 1)
    if not 0.0 < threshold < 1.0:
        _fail("bad_threshold", f"threshold must lie in (0, 1), got {threshold}", 2)
    try:
        triples = [(load_probability_map(os.path.join(pred_dir, name)),
                    load_mask(os.path.join(gt_dir, name)), name[:-4])
                   for name in sorted(preds)]
        report = evaluate_dataset(triples, float(tolerance), threshold)
    except ValueError as exc:
        _fail("evaluation_failed", str(exc), 1)
    _write_text_atomic(out_path, report.to_json() + "\n")
    click.echo(format_report_table(report))


@main.group(help="Training-loss arithmetic on saved artifacts.")
def loss():
    pass


@loss.command("eval", help="Report loss values for a mask/map pair.")
@click.option("--gt", "gt_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--pred", "pred_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--inversion", is_flag=True, help="Also report the label-inversion loss.")
@click.option("--tversky", "tversky_spec", default=None,
              help="alpha,beta weights, e.g. 0.3,0.7.")
def loss_eval(gt_path, pred_path, inversion, tversky_spec):
    try:
        gt = load_mask(gt_path)
        pred = load_probability_map(pred_path)
    except ValueError as exc:
        _fail("unreadable_artifact", str(exc), 1)
    try:
        values = {"bce": bce_loss(gt, pred), "dice": dice_loss(gt, pred),
                  "dice_bce": dice_bce_loss(gt, pred)}
        if inversion:
            values["inversion"] = inversion_loss(gt, pred)
        if tversky_spec is not None:
            try:
                alpha, beta = (float(p) for p in tversky_spec.split(","))
            except ValueError:
                _fail("bad_tversky", f"--tversky must be alpha,beta, got {tversky_spec!r}", 2)
            values["tversky"] = tversky_loss(gt, pred, TverskyConfig(alpha, beta))
    except ValueError as exc:
        _fail("evaluation_failed", str(exc), 1)
    click.echo(json.dumps(values, sort_keys=True))


if __name__ == "__main__":
    main()
