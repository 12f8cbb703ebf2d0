"""Pixel containers, PNG IO, and patch-grid decomposition/stitching.

Images and probability maps are float64 in [0, 1]; masks are boolean.
All wrapper types freeze their arrays after validation, so instances are
immutable and safe to share across threads.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from ._validation import (
    as_bool_mask,
    as_float_array,
    check_positive_int,
    check_unit_interval,
    freeze,
)

_LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class RasterImage:
    """Grayscale or RGB image with intensities normalized to [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = as_float_array(self.pixels, "image")
        if arr.ndim == 2:
            pass
        elif arr.ndim == 3 and arr.shape[2] in (1, 3):
            if arr.shape[2] == 1:
                arr = arr[:, :, 0]
        else:
            raise ValueError(f"image must be (H,W) or (H,W,3), got shape {arr.shape}")
        check_unit_interval(arr, "image")
        object.__setattr__(self, "pixels", freeze(arr))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else self.pixels.shape[2]

    def luma(self) -> np.ndarray:
        """Single-channel view; RGB collapses by the Rec.601 luma weights."""
        if self.pixels.ndim == 2:
            return self.pixels
        r, g, b = (self.pixels[:, :, i] for i in range(3))
        return _LUMA[0] * r + _LUMA[1] * g + _LUMA[2] * b


@dataclass(frozen=True)
class ProbabilityMap:
    """Per-pixel probabilities in [0, 1], same grid as the source image."""

    values: np.ndarray

    def __post_init__(self):
        arr = as_float_array(self.values, "probability map")
        if arr.ndim != 2:
            raise ValueError(f"probability map must be 2D, got shape {arr.shape}")
        check_unit_interval(arr, "probability map")
        object.__setattr__(self, "values", freeze(arr))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    """Boolean crack mask: True marks crack pixels."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = as_bool_mask(self.pixels, "mask")
        object.__setattr__(self, "pixels", freeze(arr))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def crack_pixel_count(self) -> int:
        return int(self.pixels.sum())


@dataclass(frozen=True)
class PatchGrid:
    """Square patch decomposition of an image.

    Interior origins stride by patch_size; the last column/row is clamped
    to the image border, overlapping its neighbor only when the dimension
    is not divisible by patch_size. Origins are (x, y), row-major scan
    order (rows outer), which fixes the stitching precedence.
    """

    image_width: int
    image_height: int
    patch_size: int
    origins: tuple = field(default=())

    def __post_init__(self):
        origins = tuple((int(x), int(y)) for x, y in self.origins)
        p = self.patch_size
        for x, y in origins:
            if x < 0 or y < 0 or x + p > self.image_width or y + p > self.image_height:
                raise ValueError(f"origin ({x},{y}) with patch {p} exceeds "
                                 f"{self.image_width}x{self.image_height}")
        object.__setattr__(self, "origins", origins)

    @property
    def cols(self) -> int:
        return math.ceil(self.image_width / self.patch_size)

    @property
    def rows(self) -> int:
        return math.ceil(self.image_height / self.patch_size)

    def __len__(self) -> int:
        return len(self.origins)

    def to_json(self) -> str:
        return json.dumps({
            "patch_size": self.patch_size,
            "cols": self.cols,
            "rows": self.rows,
            "image_size": [self.image_width, self.image_height],
            "origins": [[x, y] for x, y in self.origins],
        })

    @classmethod
    def from_json(cls, text: str) -> "PatchGrid":
        obj = json.loads(text)
        w, h = obj["image_size"]
        return cls(w, h, obj["patch_size"],
                   tuple((x, y) for x, y in obj["origins"]))


def _axis_starts(extent: int, patch: int, axis: str) -> list[int]:
    if extent < patch:
        raise ValueError(f"{axis} dimension {extent} is smaller than patch size {patch}")
    count = math.ceil(extent / patch)
    return [i * patch for i in range(count - 1)] + [extent - patch]


def split_into_patches(image_dims: tuple[int, int], patch_size: int) -> PatchGrid:
    """Cover a (width, height) image with square patches of patch_size."""
    width, height = image_dims
    check_positive_int(patch_size, "patch_size")
    xs = _axis_starts(int(width), patch_size, "width")
    ys = _axis_starts(int(height), patch_size, "height")
    origins = tuple((x, y) for y in ys for x in xs)
    return PatchGrid(int(width), int(height), patch_size, origins)


def _data_of(image):
    if isinstance(image, RasterImage):
        return image.pixels
    if isinstance(image, ProbabilityMap):
        return image.values
    if isinstance(image, BinaryMask):
        return image.pixels
    return np.asarray(image)


def extract_patch(image, origin: tuple[int, int], patch_size: int):
    """Copy the patch_size square at origin=(x, y); same type as the input."""
    data = _data_of(image)
    x, y = int(origin[0]), int(origin[1])
    h, w = data.shape[:2]
    if x < 0 or y < 0 or x + patch_size > w or y + patch_size > h:
        raise ValueError(f"patch at ({x},{y}) size {patch_size} exceeds image {w}x{h}")
    block = np.array(data[y:y + patch_size, x:x + patch_size])
    if isinstance(image, RasterImage):
        return RasterImage(block)
    if isinstance(image, ProbabilityMap):
        return ProbabilityMap(block)
    if isinstance(image, BinaryMask):
        return BinaryMask(block)
    return block


def stitch_predictions(grid: PatchGrid, patch_maps) -> ProbabilityMap:
    """Reassemble patch predictions onto the full canvas.

    Patches are written in grid scan order, so in overlap regions the
    bottom/right (later-written) patch wins.
    """
    if len(patch_maps) != len(grid):
        raise ValueError(f"expected {len(grid)} patch maps, got {len(patch_maps)}")
    p = grid.patch_size
    canvas = np.zeros((grid.image_height, grid.image_width), dtype=np.float64)
    for (x, y), patch in zip(grid.origins, patch_maps):
        values = _data_of(patch).astype(np.float64, copy=False)
        if values.shape != (p, p):
            raise ValueError(f"patch at ({x},{y}) has shape {values.shape}, expected ({p},{p})")
        canvas[y:y + p, x:x + p] = values
    return ProbabilityMap(canvas)


def _atomic_save(img: Image.Image, path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".png.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            img.save(fh, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_image(path) -> RasterImage:
    """Load an 8-bit grayscale or RGB PNG, scaled to [0, 1]."""
    with Image.open(path) as img:
        if img.mode == "P":
            img = img.convert("RGB")
        if img.mode == "1":
            img = img.convert("L")
        if img.mode not in ("L", "RGB"):
            raise ValueError(f"unsupported image mode {img.mode!r} in {path}; "
                             "expected 8-bit grayscale or RGB")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    return RasterImage(arr)


def save_image(image: RasterImage, path) -> None:
    """Write an image as 8-bit PNG, grayscale or RGB by channel count."""
    arr = np.round(np.asarray(image.pixels) * 255.0).astype(np.uint8)
    _atomic_save(Image.fromarray(arr, mode="L" if arr.ndim == 2 else "RGB"), str(path))


def save_mask(mask: BinaryMask, path) -> None:
    """Write a mask as 8-bit grayscale PNG with 0=background, 255=crack."""
    arr = mask.pixels.astype(np.uint8) * 255
    _atomic_save(Image.fromarray(arr, mode="L"), str(path))


def load_mask(path) -> BinaryMask:
    """Load a mask PNG; every pixel must be exactly 0 or 255."""
    with Image.open(path) as img:
        if img.mode == "1":
            img = img.convert("L")
        if img.mode != "L":
            raise ValueError(f"mask {path} has mode {img.mode!r}; expected 8-bit grayscale")
        arr = np.asarray(img, dtype=np.uint8)
    bad = (arr != 0) & (arr != 255)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise ValueError(f"mask {path} contains value {int(arr[y, x])} at (x={x}, y={y}); "
                         "expected only 0 or 255")
    return BinaryMask(arr == 255)


def save_probability_map(pmap: ProbabilityMap, path) -> None:
    """Write a probability map as 8-bit grayscale PNG (value = round(255*p))."""
    arr = np.round(pmap.values * 255.0).astype(np.uint8)
    _atomic_save(Image.fromarray(arr, mode="L"), str(path))


def load_probability_map(path) -> ProbabilityMap:
    """Read a grayscale PNG as probabilities (value / 255)."""
    image = load_image(path)
    if image.channels != 1:
        raise ValueError(f"probability map {path} must be single-channel")
    return ProbabilityMap(image.pixels)
