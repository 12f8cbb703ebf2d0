"""Tolerance-aware segmentation scoring.

Counting is pixelwise but forgiving near the annotation: with a tolerance
t > 0, a predicted pixel within Euclidean distance t of any ground-truth
crack pixel is a true positive, and a ground-truth pixel within distance t
of any predicted pixel is not a miss.  Scores for a whole test set are
recomputed from the summed counts, never averaged per image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from ._validation import check_same_shape
from .raster import BinaryMask, PatchGrid, ProbabilityMap, extract_patch, split_into_patches

__all__ = [
    "CountTally",
    "ImageScore",
    "EvalReport",
    "binarize",
    "tally_with_tolerance",
    "metrics_from_tally",
    "evaluate_dataset",
    "evaluate_full_image",
    "format_report_table",
]


@dataclass(frozen=True)
class CountTally:
    tp: int
    fp: int
    fn: int

    def __post_init__(self):
        for field in ("tp", "fp", "fn"):
            v = getattr(self, field)
            if int(v) != v or v < 0:
                raise ValueError(f"{field} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, field, int(v))

    def __add__(self, other: "CountTally") -> "CountTally":
        return CountTally(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class ImageScore:
    image_id: str
    tally: CountTally
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    tolerance: float
    threshold: float
    per_image: tuple[ImageScore, ...]
    aggregate: ImageScore

    def to_json(self) -> str:
        def row(score: ImageScore, with_id: bool) -> dict:
            d = {"image_id": score.image_id} if with_id else {}
            d.update(tp=score.tally.tp, fp=score.tally.fp, fn=score.tally.fn,
                     pr=score.precision, re=score.recall, f1=score.f1)
            return d

        return json.dumps({
            "tolerance": self.tolerance,
            "threshold": self.threshold,
            "aggregate": row(self.aggregate, with_id=False),
            "per_image": [row(s, with_id=True) for s in self.per_image],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        raw = json.loads(text)

        def score(d: dict, image_id: str) -> ImageScore:
            return ImageScore(image_id, CountTally(d["tp"], d["fp"], d["fn"]),
                              d["pr"], d["re"], d["f1"])

        return cls(
            tolerance=raw["tolerance"],
            threshold=raw["threshold"],
            per_image=tuple(score(d, d["image_id"]) for d in raw["per_image"]),
            aggregate=score(raw["aggregate"], "aggregate"),
        )


def binarize(pmap: ProbabilityMap, threshold: float = 0.5) -> BinaryMask:
    """Strictly-greater thresholding, so a map pinned at the threshold stays background."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    values = pmap.values if isinstance(pmap, ProbabilityMap) else np.asarray(pmap)
    return BinaryMask(values > threshold)


def _pixels_of(mask) -> np.ndarray:
    return mask.pixels if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)


def _distance_to(mask: np.ndarray) -> np.ndarray:
    # Euclidean distance from every pixel to the nearest True pixel.
    if not mask.any():
        return np.full(mask.shape, np.inf)
    return distance_transform_edt(~mask)


def tally_with_tolerance(pred, gt, tolerance_px: float = 0.0) -> CountTally:
    pred_px = _pixels_of(pred)
    gt_px = _pixels_of(gt)
    check_same_shape(pred_px, gt_px, "pred and gt")
    if tolerance_px < 0:
        raise ValueError(f"tolerance must be >= 0, got {tolerance_px}")
    t = float(tolerance_px)
    n_pred = int(pred_px.sum())
    # a prediction farther than t from every gt pixel is a false positive;
    # everything else predicted counts as matched
    fp = int(np.count_nonzero(pred_px & (_distance_to(gt_px) > t)))
    tp = n_pred - fp
    fn = int(np.count_nonzero(gt_px & (_distance_to(pred_px) > t)))
    return CountTally(tp, fp, fn)


def metrics_from_tally(tally: CountTally) -> tuple[float, float, float]:
    tp, fp, fn = tally.tp, tally.fp, tally.fn
    pr = 1.0 if tp + fp == 0 else tp / (tp + fp)
    re = 0.0 if tp + fn == 0 else tp / (tp + fn)
    denom = 2 * tp + fp + fn
    f1 = 0.0 if denom == 0 else 2 * tp / denom
    return pr, re, f1


def _score(image_id: str, tally: CountTally) -> ImageScore:
    pr, re, f1 = metrics_from_tally(tally)
    return ImageScore(image_id, tally, pr, re, f1)


def evaluate_dataset(pairs, tolerance: float = 0.0, threshold: float = 0.5) -> EvalReport:
    """Score (ProbabilityMap, BinaryMask, image_id) triples and aggregate the tallies."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no (prediction, ground truth) pairs to evaluate")
    per_image = []
    total = CountTally(0, 0, 0)
    for pmap, gt, image_id in pairs:
        pred = binarize(pmap, threshold)
        gt_px = _pixels_of(gt)
        if pred.pixels.shape != gt_px.shape:
            raise ValueError(
                f"image {image_id}: prediction shape {pred.pixels.shape} "
                f"does not match ground truth {gt_px.shape}")
        tally = tally_with_tolerance(pred, gt_px, tolerance)
        per_image.append(_score(str(image_id), tally))
        total = total + tally
    return EvalReport(float(tolerance), float(threshold),
                      tuple(per_image), _score("aggregate", total))


def evaluate_full_image(image, gt, predict_patch, patch_size: int,
                        tolerance: float = 0.0, threshold: float = 0.5,
                        image_id: str = "image") -> tuple[ImageScore, ProbabilityMap]:
    """Patchwise prediction over a full image, stitched and scored against gt."""
    from .raster import stitch_predictions

    gt_px = _pixels_of(gt)
    h, w = gt_px.shape
    grid: PatchGrid = split_into_patches((w, h), patch_size)
    patch_maps = []
    for (x, y) in grid.origins:
        patch = extract_patch(image, (x, y), patch_size)
        try:
            patch_maps.append(predict_patch(patch))
        except Exception as exc:
            raise RuntimeError(f"patch prediction failed at origin (x={x}, y={y}): {exc}") from exc
    stitched = stitch_predictions(grid, patch_maps)
    tally = tally_with_tolerance(binarize(stitched, threshold), gt_px, tolerance)
    return _score(image_id, tally), stitched


def format_report_table(report: EvalReport) -> str:
    """Fixed-width text table, one row per image plus the aggregate row."""
    header = f"{'image':<24} {'tp':>10} {'fp':>10} {'fn':>10} {'pr':>8} {'re':>8} {'f1':>8}"
    rule = "-" * len(header)
    lines = [header, rule]
    for s in list(report.per_image) + [report.aggregate]:
        if s is report.aggregate:
            lines.append(rule)
        lines.append(f"{s.image_id:<24} {s.tally.tp:>10} {s.tally.fp:>10} "
                     f"{s.tally.fn:>10} {s.precision:>8.4f} {s.recall:>8.4f} {s.f1:>8.4f}")
    lines.append(f"tolerance={report.tolerance:g}px threshold={report.threshold:g}")
    return "\n".join(lines)
