"""Crack width extraction around a tracked centerline, and mask rastering.

Each track vertex gets an intensity profile sampled along its perpendicular
and filtered with a Gaussian first derivative, so a dark crack shows a
negative response extremum at its left edge and a positive one at its right
edge.  Per side, the edge is recovered as the minimal-total-cost chain over
(vertex, offset) space rather than trusting each profile alone, which keeps
the edges continuous along the track.  Left is towards -perpendicular,
right towards +perpendicular, with perpendicular = (-sin phi, cos phi) for
local orientation phi.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d, map_coordinates
from skimage.draw import line as draw_line
from skimage.draw import polygon as draw_polygon

from ._validation import freeze
from .geodesic import CrackTrack
from .raster import BinaryMask, RasterImage

# break points of a near-tie chain must not depend on float noise, so the
# lateral move penalty is small but not tiny
_LATERAL_PENALTY = 1e-3
_FLAT_RESPONSE = 1e-6


@dataclass(frozen=True)
class EdgeProfile:
    """Signed edge response along one vertex's perpendicular.

    values[k] is the response at offset k - max_width pixels from the
    vertex, positive where intensity rises along +perpendicular.  truncated
    marks windows that left the image; their outside samples repeat the
    nearest border pixel.
    """

    values: np.ndarray = field(repr=False)
    truncated: bool = False

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] < 3 or arr.shape[0] % 2 == 0:
            raise ValueError(f"edge profile needs an odd number >= 3 of samples, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("edge profile contains non-finite values")
        object.__setattr__(self, "values", freeze(arr))
        object.__setattr__(self, "truncated", bool(self.truncated))

    def offsets(self) -> np.ndarray:
        """Signed pixel offsets matching values, centered on the vertex."""
        half = (self.values.shape[0] - 1) // 2
        return np.arange(-half, half + 1, dtype=np.float64)


@dataclass(frozen=True)
class WidthProfile:
    """Per-vertex crack half-widths (pixels) along the track perpendicular.

    left and right are distances from the centerline towards -/+
    perpendicular; width at a vertex is their sum and never exceeds
    max_width.  low_confidence marks profiles recovered from a flat
    response, where the offsets carry no evidence.
    """

    left: np.ndarray = field(repr=False)
    right: np.ndarray = field(repr=False)
    arc_length: np.ndarray = field(repr=False)
    max_width: float = 32.0
    low_confidence: bool = False

    def __post_init__(self):
        left = np.asarray(self.left, dtype=np.float64)
        right = np.asarray(self.right, dtype=np.float64)
        arc = np.asarray(self.arc_length, dtype=np.float64)
        if not (left.shape == right.shape == arc.shape) or left.ndim != 1 or left.size < 1:
            raise ValueError(f"width profile arrays must share one (m,) shape, got "
                             f"{left.shape}/{right.shape}/{arc.shape}")
        if not (np.isfinite(left).all() and np.isfinite(right).all() and np.isfinite(arc).all()):
            raise ValueError("width profile contains non-finite values")
        if left.min(initial=0.0) < 0.0 or right.min(initial=0.0) < 0.0:
            raise ValueError("width offsets must be >= 0")
        cap = float(self.max_width)
        if cap <= 0.0:
            raise ValueError(f"max_width must be positive, got {cap}")
        if (left + right).max() > cap + 1e-9:
            raise ValueError(f"width exceeds max_width {cap}")
        if arc[0] != 0.0 or (np.diff(arc) < 0.0).any():
            raise ValueError("arc_length must start at 0 and never decrease")
        object.__setattr__(self, "left", freeze(left))
        object.__setattr__(self, "right", freeze(right))
        object.__setattr__(self, "arc_length", freeze(arc))
        object.__setattr__(self, "max_width", cap)
        object.__setattr__(self, "low_confidence", bool(self.low_confidence))

    def __len__(self) -> int:
        return self.left.shape[0]

    def widths(self) -> np.ndarray:
        return self.left + self.right


def width_profile_to_json(profile: WidthProfile) -> str:
    """Serialize as a [{s, left, right}, ...] list ordered along the track."""
    entries = [{"s": s, "left": l, "right": r}
               for s, l, r in zip(profile.arc_length, profile.left, profile.right)]
    return json.dumps(entries, sort_keys=True)


def width_profile_from_json(text: str, max_width: float | None = None) -> WidthProfile:
    """Rebuild a profile from its JSON list.

    The list carries no cap or confidence flag; max_width defaults to the
    largest serialized width and the flag resets to False.
    """
    entries = json.loads(text)
    if not isinstance(entries, list) or not entries:
        raise ValueError("width profile JSON must be a non-empty list")
    left = np.array([e["left"] for e in entries], dtype=np.float64)
    right = np.array([e["right"] for e in entries], dtype=np.float64)
    arc = np.array([e["s"] for e in entries], dtype=np.float64)
    if max_width is None:
        max_width = max(float((left + right).max()), 1e-9)
    return WidthProfile(left, right, arc, max_width)


def _luma_of(image) -> np.ndarray:
    if isinstance(image, RasterImage):
        return image.luma()
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"image must be 2D or a RasterImage, got shape {arr.shape}")
    return arr


def edge_response(image, vertex, local_orientation: float,
                  sigma: float = 2.0, max_width: int = 32) -> EdgeProfile:
    """Gaussian-derivative edge filter along the perpendicular at a vertex.

    The image is sampled bilinearly at unit steps over
    [-max_width, max_width] along (-sin phi, cos phi), padded by the filter
    radius so the filter never sees synthetic boundaries; samples that fall
    outside the image repeat the nearest border pixel and set truncated.
    """
    img = _luma_of(image)
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    max_width = int(max_width)
    if max_width < 1:
        raise ValueError(f"max_width must be >= 1, got {max_width}")
    h, w = img.shape
    x, y = float(vertex[0]), float(vertex[1])
    if not (0.0 <= x <= w - 1.0 and 0.0 <= y <= h - 1.0):
        raise ValueError(f"vertex ({x}, {y}) is outside the {w}x{h} image")
    phi = float(local_orientation)
    px, py = -np.sin(phi), np.cos(phi)
    radius = int(4.0 * sigma + 0.5)  # matches the filter's own truncation
    ts = np.arange(-(max_width + radius), max_width + radius + 1, dtype=np.float64)
    xs = x + ts * px
    ys = y + ts * py
    truncated = bool((xs < 0.0).any() or (xs > w - 1.0).any()
                     or (ys < 0.0).any() or (ys > h - 1.0).any())
    prof = map_coordinates(img, [ys, xs], order=1, mode="nearest")
    resp = gaussian_filter1d(prof, sigma, order=1, mode="nearest")
    return EdgeProfile(resp[radius:radius + 2 * max_width + 1], truncated)


def _side_chain(strength: np.ndarray) -> np.ndarray:
    """Minimal-cost offset chain over (vertex, offset), |step| <= 1.

    strength is (m, max_width+1), normalized to [0, 1]; cost per visited
    cell is 1 - strength, plus a small penalty per lateral move.  Ties
    resolve towards the smaller offset, so flat regions collapse inward.
    """
    m, k = strength.shape
    cost = 1.0 - strength
    dist = cost[0].copy()
    choice = np.zeros((m, k), dtype=np.int8)
    inf = np.inf
    for s in range(1, m):
        down = np.concatenate(([inf], dist[:-1])) + _LATERAL_PENALTY
        same = dist
        up = np.concatenate((dist[1:], [inf])) + _LATERAL_PENALTY
        stacked = np.stack((down, same, up))
        best = np.argmin(stacked, axis=0)  # first minimum: prefer inward
        choice[s] = best.astype(np.int8)
        dist = stacked[best, np.arange(k)] + cost[s]
    chain = np.empty(m, dtype=np.int64)
    chain[m - 1] = int(np.argmin(dist))
    for s in range(m - 1, 0, -1):
        chain[s - 1] = chain[s] + int(choice[s, chain[s]]) - 1
    return chain


def _refine_offsets(chain: np.ndarray, strength: np.ndarray) -> np.ndarray:
    """Parabolic sub-pixel shift of each chain offset, capped at half a pixel."""
    out = chain.astype(np.float64)
    k = strength.shape[1]
    for s in range(len(chain)):
        l = int(chain[s])
        if l < 1 or l > k - 2:
            continue
        s0, s1, s2 = strength[s, l - 1], strength[s, l], strength[s, l + 1]
        curvature = s0 - 2.0 * s1 + s2
        if curvature < -1e-12:  # strict maximum
            out[s] = l + float(np.clip(0.5 * (s0 - s2) / curvature, -0.5, 0.5))
    return np.clip(out, 0.0, k - 1.0)


def extract_widths(image, track: CrackTrack, sigma: float = 2.0,
                   max_width: int = 32) -> WidthProfile:
    """Locate both crack edges along the track and return half-widths.

    Per side, candidate offsets score by the response in that side's
    expected sign (negative extremum left, positive right), normalized by
    the side's peak; the edge is the minimal-cost chain over
    (vertex, offset).  A flat response (either side's peak below a fixed
    floor) collapses that search to the minimum offset and flags the
    profile low-confidence.  Vertices whose widths would exceed max_width
    are rescaled to the cap, preserving the left/right ratio.
    """
    if not isinstance(track, CrackTrack):
        raise TypeError("extract_widths needs a CrackTrack")
    profiles = [edge_response(image, track.vertices[i], track.orientations[i],
                              sigma=sigma, max_width=max_width)
                for i in range(len(track))]
    resp = np.stack([p.values for p in profiles])
    center = int(max_width)
    # column l of each side table is the response at offset +-l from the vertex
    right_strength = np.maximum(resp[:, center:], 0.0)
    left_strength = np.maximum(-resp[:, center::-1], 0.0)
    steps = np.diff(track.vertices, axis=0)
    arc = np.concatenate(([0.0], np.cumsum(np.linalg.norm(steps, axis=1))))

    peaks = (float(left_strength.max()), float(right_strength.max()))
    if min(peaks) <= _FLAT_RESPONSE:
        zeros = np.zeros(len(track))
        return WidthProfile(zeros, zeros.copy(), arc, float(max_width), low_confidence=True)

    sides = []
    for strength, peak in ((left_strength, peaks[0]), (right_strength, peaks[1])):
        norm = strength / peak
        sides.append(_refine_offsets(_side_chain(norm), norm))
    left, right = sides
    width = left + right
    over = width > max_width
    if over.any():
        scale = max_width / width[over]
        left = left.copy()
        right = right.copy()
        left[over] *= scale
        right[over] *= scale
    return WidthProfile(left, right, arc, float(max_width))


def rasterize_mask(track: CrackTrack, widths: WidthProfile,
                   image_dims: tuple[int, int]) -> BinaryMask:
    """Fill the quadrilaterals between consecutive left/right edge points.

    The 1-px centerline polyline is always drawn as well, so zero widths
    still produce a connected curve and the mask stays 8-connected when
    the track is a single curve.  image_dims is (width, height).
    """
    if len(widths) != len(track):
        raise ValueError(f"width profile has {len(widths)} entries for a "
                         f"{len(track)}-vertex track")
    w_px, h_px = int(image_dims[0]), int(image_dims[1])
    if w_px < 1 or h_px < 1:
        raise ValueError(f"image_dims must be positive, got {image_dims}")
    xy = track.vertices
    phi = track.orientations
    perp = np.stack((-np.sin(phi), np.cos(phi)), axis=1)
    left_pts = xy - widths.left[:, None] * perp
    right_pts = xy + widths.right[:, None] * perp

    canvas = np.zeros((h_px, w_px), dtype=bool)
    for i in range(len(track) - 1):
        quad_x = np.array([left_pts[i, 0], left_pts[i + 1, 0],
                           right_pts[i + 1, 0], right_pts[i, 0]])
        quad_y = np.array([left_pts[i, 1], left_pts[i + 1, 1],
                           right_pts[i + 1, 1], right_pts[i, 1]])
        rr, cc = draw_polygon(quad_y, quad_x, shape=(h_px, w_px))
        canvas[rr, cc] = True

    rounded = np.round(xy).astype(np.int64)
    np.clip(rounded[:, 0], 0, w_px - 1, out=rounded[:, 0])
    np.clip(rounded[:, 1], 0, h_px - 1, out=rounded[:, 1])
    for i in range(len(track) - 1):
        rr, cc = draw_line(rounded[i, 1], rounded[i, 0],
                           rounded[i + 1, 1], rounded[i + 1, 0])
        canvas[rr, cc] = True
    canvas[rounded[-1, 1], rounded[-1, 0]] = True
    return BinaryMask(canvas)
