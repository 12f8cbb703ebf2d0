"""Patch dataset construction: labeling, ratio composition, extension,
patch reduction, and the training-time augmentation pipeline.

All sampling is seeded and without replacement; manifests record the seed
so any dataset is reproducible from its source images alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from skimage.color import hsv2rgb, rgb2hsv
from skimage.transform import resize

from ._validation import check_positive_int
from .raster import BinaryMask, PatchGrid, RasterImage

CRACK = "crack"
BACKGROUND = "background"
TRAIN = "train"
TEST = "test"


@dataclass(frozen=True, order=True)
class PatchRecord:
    source_image_id: str
    origin: tuple[int, int]
    patch_size: int
    label: str
    split: str

    def __post_init__(self):
        if self.label not in (CRACK, BACKGROUND):
            raise ValueError(f"label must be crack|background, got {self.label!r}")
        if self.split not in (TRAIN, TEST):
            raise ValueError(f"split must be train|test, got {self.split!r}")
        object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))


@dataclass(frozen=True)
class PatchManifest:
    name: str
    records: tuple
    crack_fraction: float
    seed: int
    parent: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    @property
    def ratio(self) -> tuple[float, float]:
        return (self.crack_fraction, 1.0 - self.crack_fraction)

    def count(self, label: str) -> int:
        return sum(1 for r in self.records if r.label == label)

    def to_jsonl(self) -> str:
        header = json.dumps({
            "name": self.name,
            "ratio": [self.crack_fraction, 1.0 - self.crack_fraction],
            "seed": self.seed,
            "parent": self.parent,
        }, sort_keys=True)
        lines = [header]
        for r in self.records:
            lines.append(json.dumps({
                "image_id": r.source_image_id,
                "x": r.origin[0], "y": r.origin[1],
                "size": r.patch_size,
                "label": r.label, "split": r.split,
            }, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "PatchManifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty manifest")
        header = json.loads(lines[0])
        records = tuple(
            PatchRecord(obj["image_id"], (obj["x"], obj["y"]), obj["size"],
                        obj["label"], obj["split"])
            for obj in map(json.loads, lines[1:])
        )
        return cls(header["name"], records, header["ratio"][0],
                   header["seed"], header.get("parent"))


def label_patches(grid: PatchGrid, gt: BinaryMask, min_crack_pixels: int = 1,
                  image_id: str = "", split: str = TRAIN) -> list[PatchRecord]:
    """Label every grid patch crack/background by its crack pixel count."""
    check_positive_int(min_crack_pixels, "min_crack_pixels")
    if (gt.width, gt.height) != (grid.image_width, grid.image_height):
        raise ValueError(f"grid is {grid.image_width}x{grid.image_height} but mask is "
                         f"{gt.width}x{gt.height}")
    p = grid.patch_size
    # summed-area table gives every window count in O(1)
    integral = np.zeros((gt.height + 1, gt.width + 1), dtype=np.int64)
    integral[1:, 1:] = gt.pixels.cumsum(axis=0).cumsum(axis=1)
    records = []
    for x, y in grid.origins:
        count = (integral[y + p, x + p] - integral[y, x + p]
                 - integral[y + p, x] + integral[y, x])
        label = CRACK if count >= min_crack_pixels else BACKGROUND
        records.append(PatchRecord(image_id, (x, y), p, label, split))
    return records


def count_labels(records) -> tuple[int, int]:
    """(crack, background) counts."""
    crack = sum(1 for r in records if r.label == CRACK)
    return crack, len(records) - crack


def _background_total(crack_count: int, crack_fraction: float) -> int:
    return round(crack_count * (1.0 - crack_fraction) / crack_fraction)


def _sample(rng, items: list, n: int, what: str) -> list:
    if n > len(items):
        raise ValueError(f"insufficient pool: need {n} {what}, have {len(items)}")
    if n == 0:
        return []
    idx = rng.choice(len(items), size=n, replace=False)
    return [items[i] for i in idx]


def _split_pools(pool):
    pools = {(s, l): [] for s in (TRAIN, TEST) for l in (CRACK, BACKGROUND)}
    for r in pool:
        pools[(r.split, r.label)].append(r)
    # canonical order: sampling depends on pool content, not iteration order
    for key in pools:
        pools[key].sort()
    return pools


def _allocate_cracks(pools, crack_count: int) -> dict:
    n_train, n_test = len(pools[(TRAIN, CRACK)]), len(pools[(TEST, CRACK)])
    if crack_count > n_train + n_test:
        raise ValueError(f"insufficient pool: need {crack_count} crack patches, "
                         f"have {n_train + n_test}")
    take_train = round(crack_count * n_train / (n_train + n_test))
    take_train = min(max(take_train, crack_count - n_test), n_train)
    return {TRAIN: take_train, TEST: crack_count - take_train}


def compose_ratio_dataset(pool, crack_count: int, crack_fraction: float, seed: int,
                          name: str | None = None) -> PatchManifest:
    """Sample a crack/background dataset at a target crack fraction.

    Background count is round(crack_count*(1-f)/f) overall, and the train
    and test subsets individually honor the fraction (within rounding).
    """
    if not 0.0 < crack_fraction <= 1.0:
        raise ValueError(f"crack_fraction must be in (0, 1], got {crack_fraction}")
    check_positive_int(crack_count, "crack_count")
    pools = _split_pools(pool)
    cracks_per_split = _allocate_cracks(pools, crack_count)
    bg_total = _background_total(crack_count, crack_fraction)
    bg_train = min(_background_total(cracks_per_split[TRAIN], crack_fraction), bg_total)
    bg_per_split = {TRAIN: bg_train, TEST: bg_total - bg_train}

    rng = np.random.default_rng(seed)
    records = []
    for split in (TRAIN, TEST):
        records += _sample(rng, pools[(split, CRACK)], cracks_per_split[split],
                           f"{split} crack patches")
    for split in (TRAIN, TEST):
        records += _sample(rng, pools[(split, BACKGROUND)], bg_per_split[split],
                           f"{split} background patches")
    records.sort()
    if name is None:
        name = f"ratio-{crack_fraction:g}-seed{seed}"
    return PatchManifest(name, tuple(records), crack_fraction, seed)


def extend_dataset(base: PatchManifest, pool, new_crack_fraction: float, seed: int,
                   name: str | None = None) -> PatchManifest:
    """Add background patches to lower the crack fraction; cracks unchanged."""
    if not 0.0 < new_crack_fraction <= 1.0:
        raise ValueError(f"crack_fraction must be in (0, 1], got {new_crack_fraction}")
    if new_crack_fraction > base.crack_fraction + 1e-12:
        raise ValueError(f"new fraction {new_crack_fraction} is not smaller than the "
                         f"base fraction {base.crack_fraction}")
    taken = set(base.records)
    pools = _split_pools([r for r in pool if r not in taken])

    crack_by_split = {s: sum(1 for r in base.records if r.label == CRACK and r.split == s)
                      for s in (TRAIN, TEST)}
    bg_by_split = {s: sum(1 for r in base.records if r.label == BACKGROUND and r.split == s)
                   for s in (TRAIN, TEST)}
    crack_total = sum(crack_by_split.values())
    add_total = _background_total(crack_total, new_crack_fraction) - sum(bg_by_split.values())
    if add_total < 0:
        raise ValueError("base manifest already exceeds the requested background count")
    add_train = _background_total(crack_by_split[TRAIN], new_crack_fraction) - bg_by_split[TRAIN]
    add_train = min(max(add_train, 0), add_total)
    additions = {TRAIN: add_train, TEST: add_total - add_train}

    rng = np.random.default_rng(seed)
    new_records = []
    for split in (TRAIN, TEST):
        new_records += _sample(rng, pools[(split, BACKGROUND)], additions[split],
                               f"{split} background patches")
    records = tuple(sorted(base.records + tuple(new_records)))
    if name is None:
        name = f"{base.name}-ext{new_crack_fraction:g}"
    return PatchManifest(name, records, new_crack_fraction, seed, parent=base.name)


def _valid_crop_offsets(mask: np.ndarray, target: int) -> np.ndarray:
    """Boolean (oy, ox) grid of crops containing >= 1 crack pixel.

    All-background masks allow every offset.
    """
    h, w = mask.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral[1:, 1:] = mask.cumsum(axis=0).cumsum(axis=1)
    oy = np.arange(h - target + 1)
    ox = np.arange(w - target + 1)
    counts = (integral[np.ix_(oy + target, ox + target)]
              - integral[np.ix_(oy, ox + target)]
              - integral[np.ix_(oy + target, ox)]
              + integral[np.ix_(oy, ox)])
    if not mask.any():
        return np.ones_like(counts, dtype=bool)
    return counts > 0


def _pick_offset(rng, valid: np.ndarray) -> tuple[int, int]:
    flat = np.flatnonzero(valid)
    k = flat[rng.integers(len(flat))]
    oy, ox = divmod(int(k), valid.shape[1])
    return oy, ox


def reduce_patch(patch: RasterImage, mask: BinaryMask, target_size: int,
                 seed: int) -> tuple[RasterImage, BinaryMask]:
    """Crop to target_size so that any crack stays inside the crop.

    The offset is uniform over all offsets whose window keeps at least one
    crack pixel (every offset, for background patches).
    """
    check_positive_int(target_size, "target_size")
    if target_size >= min(patch.height, patch.width):
        raise ValueError(f"target_size {target_size} must be smaller than the patch "
                         f"{patch.width}x{patch.height}")
    if (patch.height, patch.width) != (mask.height, mask.width):
        raise ValueError("patch and mask dimensions differ")
    rng = np.random.default_rng(seed)
    oy, ox = _pick_offset(rng, _valid_crop_offsets(mask.pixels, target_size))
    out_img = patch.pixels[oy:oy + target_size, ox:ox + target_size]
    out_mask = mask.pixels[oy:oy + target_size, ox:ox + target_size]
    return RasterImage(np.array(out_img)), BinaryMask(np.array(out_mask))


@dataclass(frozen=True)
class AugmentationConfig:
    flip_prob: float = 0.5
    rotation_choices: tuple = (0, 90, 180, 270)
    photometric_range: tuple[float, float] = (0.75, 1.25)
    hue_range: tuple[float, float] = (-0.10, 0.10)
    noise_prob: float = 0.5
    noise_range: tuple[float, float] = (0.9, 1.1)
    geometric_prob: float = 0.4
    reduce_scale: tuple[float, float] = (0.75, 1.25)
    zoom_scale: tuple[float, float] = (0.75, 1.00)
    random_crop_size: int | None = None

    def __post_init__(self):
        for p, nm in ((self.flip_prob, "flip_prob"), (self.noise_prob, "noise_prob"),
                      (self.geometric_prob, "geometric_prob")):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{nm} must be in [0,1], got {p}")
        for rng_, nm in ((self.photometric_range, "photometric_range"),
                         (self.hue_range, "hue_range"),
                         (self.noise_range, "noise_range"),
                         (self.reduce_scale, "reduce_scale"),
                         (self.zoom_scale, "zoom_scale")):
            if rng_[0] > rng_[1]:
                raise ValueError(f"{nm} range is reversed: {rng_}")
        if not all(r % 90 == 0 for r in self.rotation_choices):
            raise ValueError("rotation_choices must be multiples of 90 degrees")


def _resize_pair(img: np.ndarray, mask: np.ndarray, shape) -> tuple[np.ndarray, np.ndarray]:
    out_img = resize(img, shape + img.shape[2:], order=1, mode="symmetric",
                     anti_aliasing=False, preserve_range=True)
    out_mask = resize(mask.astype(np.float64), shape, order=0, mode="symmetric",
                      anti_aliasing=False, preserve_range=True) > 0.5
    return out_img, out_mask


def _mirror_pad_or_center_crop(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = arr.shape[:2]
    th, tw = size
    if h < th or w < tw:
        pad_h, pad_w = max(th - h, 0), max(tw - w, 0)
        pads = [(pad_h // 2, pad_h - pad_h // 2), (pad_w // 2, pad_w - pad_w // 2)]
        pads += [(0, 0)] * (arr.ndim - 2)
        arr = np.pad(arr, pads, mode="symmetric")
        h, w = arr.shape[:2]
    oy, ox = (h - th) // 2, (w - tw) // 2
    return arr[oy:oy + th, ox:ox + tw]


def augment(patch: RasterImage, mask: BinaryMask, cfg: AugmentationConfig,
            seed: int) -> tuple[RasterImage, BinaryMask]:
    """Seeded augmentation: spatial ops hit patch and mask alike (mask by
    nearest neighbor), photometric ops hit the patch only."""
    if (patch.height, patch.width) != (mask.height, mask.width):
        raise ValueError("patch and mask dimensions differ")
    rng = np.random.default_rng(seed)
    img = np.array(patch.pixels)
    msk = np.array(mask.pixels)

    if rng.random() < cfg.flip_prob:
        img, msk = img[:, ::-1], msk[:, ::-1]
    if rng.random() < cfg.flip_prob:
        img, msk = img[::-1], msk[::-1]

    angle = int(cfg.rotation_choices[rng.integers(len(cfg.rotation_choices))])
    if angle % 360:
        k = (angle // 90) % 4
        img, msk = np.rot90(img, k), np.rot90(msk, k)

    if cfg.random_crop_size is not None:
        c = cfg.random_crop_size
        if c > min(img.shape[0], img.shape[1]):
            raise ValueError(f"random_crop_size {c} exceeds patch size")
        oy = int(rng.integers(img.shape[0] - c + 1))
        ox = int(rng.integers(img.shape[1] - c + 1))
        img, msk = img[oy:oy + c, ox:ox + c], msk[oy:oy + c, ox:ox + c]

    lo, hi = cfg.photometric_range
    brightness, contrast, saturation = rng.uniform(lo, hi, size=3)
    if brightness != 1.0:
        img = img * brightness
    if contrast != 1.0:
        mean = img.mean()
        img = (img - mean) * contrast + mean
    if img.ndim == 3:
        if saturation != 1.0:
            luma = img @ np.array([0.299, 0.587, 0.114])
            img = luma[..., None] + (img - luma[..., None]) * saturation
        hue_shift = float(rng.uniform(*cfg.hue_range))
        if hue_shift != 0.0:
            hsv = rgb2hsv(np.clip(img, 0.0, 1.0))
            hsv[..., 0] = (hsv[..., 0] + hue_shift) % 1.0
            img = hsv2rgb(hsv)
    img = np.clip(img, 0.0, 1.0)

    if rng.random() < cfg.noise_prob:
        factors = rng.uniform(cfg.noise_range[0], cfg.noise_range[1], size=msk.shape)
        img = img * (factors[..., None] if img.ndim == 3 else factors)
        img = np.clip(img, 0.0, 1.0)

    if rng.random() < cfg.geometric_prob:
        size = msk.shape
        if rng.random() < 0.5:
            scale = float(rng.uniform(*cfg.reduce_scale))
            new = (max(round(size[0] * scale), 1), max(round(size[1] * scale), 1))
            if new != size:
                img, msk = _resize_pair(img, msk, new)
                img = _mirror_pad_or_center_crop(img, size)
                msk = _mirror_pad_or_center_crop(msk, size)
        else:
            scale = float(rng.uniform(*cfg.zoom_scale))
            crop = (max(round(size[0] * scale), 1), max(round(size[1] * scale), 1))
            if crop != size:
                # keep any crack inside the zoom window
                square = min(crop)
                valid = _valid_crop_offsets(msk, square)
                oy, ox = _pick_offset(rng, valid)
                img = img[oy:oy + square, ox:ox + square]
                msk = msk[oy:oy + square, ox:ox + square]
                img, msk = _resize_pair(img, msk, size)
        img = np.clip(img, 0.0, 1.0)

    return RasterImage(img), BinaryMask(msk)


class PatchAugmenter:
    """sklearn-style transformer applying `augment` over (patch, mask) pairs.

    Each pair gets an independent child seed spawned from `seed`, so a
    fitted augmenter is deterministic end to end.
    """

    def __init__(self, config: AugmentationConfig | None = None, seed: int = 0):
        self.config = config
        self.seed = seed

    def get_params(self, deep: bool = True) -> dict:
        return {"config": self.config, "seed": self.seed}

    def set_params(self, **params) -> "PatchAugmenter":
        for key, value in params.items():
            if key not in ("config", "seed"):
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, pairs=None, y=None) -> "PatchAugmenter":
        return self

    def transform(self, pairs) -> list:
        cfg = self.config if self.config is not None else AugmentationConfig()
        seeds = np.random.SeedSequence(self.seed).generate_state(len(pairs))
        return [augment(p, m, cfg, int(s)) for (p, m), s in zip(pairs, seeds)]
