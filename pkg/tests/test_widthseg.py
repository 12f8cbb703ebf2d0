"""Width extraction checked against bar fixtures with known geometry and a
pure-loop chain oracle; the filter is cross-checked by direct summation."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import cKDTree
from skimage.draw import line as draw_line
from skimage.measure import label as cc_label

from crackkit.evalmetrics import metrics_from_tally, tally_with_tolerance
from crackkit.geodesic import CrackTrack, MetricParams, track_crack
from crackkit.orientation import build_cake_wavelets
from crackkit.widthseg import (
    EdgeProfile,
    WidthProfile,
    edge_response,
    extract_widths,
    rasterize_mask,
    width_profile_from_json,
    width_profile_to_json,
)

# ---------------------------------------------------------------- oracles


def reference_edge_response(img, vertex, phi, sigma, max_width):
    """Direct summation: hand-rolled bilinear sampling and an explicitly
    sampled Gaussian-derivative kernel; no ndimage filters involved."""
    h, w = img.shape
    radius = int(4.0 * sigma + 0.5)
    px, py = -math.sin(phi), math.cos(phi)

    def sample(x, y):
        x = min(max(x, 0.0), w - 1.0)
        y = min(max(y, 0.0), h - 1.0)
        x0, y0 = int(x), int(y)
        x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
        fx, fy = x - x0, y - y0
        return ((1 - fx) * (1 - fy) * img[y0, x0] + fx * (1 - fy) * img[y0, x1]
                + (1 - fx) * fy * img[y1, x0] + fx * fy * img[y1, x1])

    ts = range(-(max_width + radius), max_width + radius + 1)
    prof = [sample(vertex[0] + t * px, vertex[1] + t * py) for t in ts]
    us = np.arange(-radius, radius + 1, dtype=float)
    gauss = np.exp(-0.5 * (us / sigma) ** 2)
    kernel = -us / sigma ** 2 * (gauss / gauss.sum())
    full = np.convolve(np.array(prof), kernel, mode="same")
    return full[radius:radius + 2 * max_width + 1]


def chain_oracle(strength, penalty=1e-3):
    """Minimal-cost offset chain by explicit loops, ties towards smaller
    offsets, mirroring the production tie-breaks exactly."""
    m, k = strength.shape
    cost = 1.0 - strength
    dist = [cost[0, l] for l in range(k)]
    back = [[0] * k for _ in range(m)]
    for s in range(1, m):
        new = [0.0] * k
        for l in range(k):
            best_val, best_k = math.inf, 0
            for idx, l_prev in enumerate((l - 1, l, l + 1)):
                if l_prev < 0 or l_prev >= k:
                    continue
                cand = dist[l_prev] + (penalty if l_prev != l else 0.0)
                if cand < best_val:
                    best_val, best_k = cand, idx
            new[l] = best_val + cost[s, l]
            back[s][l] = best_k
        dist = new
    chain = [0] * m
    best_val = math.inf
    for l in range(k):
        if dist[l] < best_val:
            best_val, chain[m - 1] = dist[l], l
    for s in range(m - 1, 0, -1):
        chain[s - 1] = chain[s] + back[s][chain[s]] - 1
    return np.array(chain), best_val


def widths_oracle(resp, max_width, penalty=1e-3):
    """Full per-side width extraction by explicit loops: chain, half-pixel
    parabolic refinement, then the ratio-preserving cap."""
    center = max_width
    sides = []
    for sign, direction in ((-1.0, -1), (1.0, 1)):
        strength = np.maximum(sign * resp[:, center::direction], 0.0)
        norm = strength / strength.max()
        chain, _ = chain_oracle(norm, penalty)
        refined = []
        for s, l in enumerate(chain):
            val = float(l)
            if 1 <= l <= max_width - 1:
                s0, s1, s2 = norm[s, l - 1], norm[s, l], norm[s, l + 1]
                curv = s0 - 2.0 * s1 + s2
                if curv < -1e-12:
                    val = l + float(np.clip(0.5 * (s0 - s2) / curv, -0.5, 0.5))
            refined.append(min(max(val, 0.0), float(max_width)))
        sides.append(np.array(refined))
    left, right = sides
    for i in range(len(left)):
        total = left[i] + right[i]
        if total > max_width:
            left[i] *= max_width / total
            right[i] *= max_width / total
    return left, right


def bar_image(h, w, cy, bar_width, depth=0.7):
    """Horizontal dark bar with exact per-row coverage antialiasing."""
    y = np.arange(h, dtype=float)[:, None]
    lo, hi = cy - bar_width / 2.0, cy + bar_width / 2.0
    cov = np.clip(np.minimum(y + 0.5, hi) - np.maximum(y - 0.5, lo), 0.0, 1.0)
    return np.broadcast_to(1.0 - depth * cov, (h, w)).copy()


def taper_image(h, w, cy, w_start, w_end, depth=0.7):
    xs = np.arange(w, dtype=float)
    widths = w_start + (w_end - w_start) * xs / (w - 1)
    y = np.arange(h, dtype=float)[:, None]
    lo, hi = cy - widths[None, :] / 2.0, cy + widths[None, :] / 2.0
    cov = np.clip(np.minimum(y + 0.5, hi) - np.maximum(y - 0.5, lo), 0.0, 1.0)
    return 1.0 - depth * cov, widths


def straight_track(x0, x1, cy):
    xs = np.arange(float(x0), float(x1))
    return CrackTrack(np.stack([xs, np.full_like(xs, cy)], axis=1), np.zeros_like(xs))


# ---------------------------------------------------------------- types


class TestEdgeProfileType:
    def test_even_length_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            EdgeProfile(np.zeros(4))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            EdgeProfile(np.array([0.0, np.nan, 0.0]))

    def test_offsets_centered(self):
        prof = EdgeProfile(np.zeros(9))
        assert np.array_equal(prof.offsets(), np.arange(-4, 5))


class TestWidthProfileType:
    def test_negative_offsets_rejected(self):
        with pytest.raises(ValueError, match=">= 0"):
            WidthProfile(np.array([-0.1]), np.array([1.0]), np.array([0.0]), 8.0)

    def test_cap_enforced(self):
        with pytest.raises(ValueError, match="max_width"):
            WidthProfile(np.array([5.0]), np.array([4.0]), np.array([0.0]), 8.0)

    def test_arc_must_not_decrease(self):
        with pytest.raises(ValueError, match="arc_length"):
            WidthProfile(np.ones(2), np.ones(2), np.array([0.0, -1.0]), 8.0)

    def test_arc_must_start_at_zero(self):
        with pytest.raises(ValueError, match="arc_length"):
            WidthProfile(np.ones(2), np.ones(2), np.array([1.0, 2.0]), 8.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            WidthProfile(np.ones(2), np.ones(3), np.array([0.0, 1.0]), 8.0)

    def test_widths_sum(self):
        prof = WidthProfile(np.array([1.0, 2.0]), np.array([3.0, 0.5]),
                            np.array([0.0, 1.0]), 8.0)
        assert np.allclose(prof.widths(), [4.0, 2.5])
        assert len(prof) == 2


# ---------------------------------------------------------------- filter


class TestEdgeResponse:
    def test_matches_direct_summation(self):
        rng = np.random.default_rng(11)
        img = rng.random((40, 48))
        for _ in range(6):
            vx = float(rng.uniform(5, 42))
            vy = float(rng.uniform(5, 34))
            phi = float(rng.uniform(0, 2 * np.pi))
            got = edge_response(img, (vx, vy), phi, sigma=1.7, max_width=9)
            want = reference_edge_response(img, (vx, vy), phi, 1.7, 9)
            assert np.allclose(got.values, want, atol=1e-10)

    def test_bar_extrema_separation(self):
        img = bar_image(64, 96, 32.0, 7.0)
        prof = edge_response(img, (48.0, 32.0), 0.0, sigma=2.0, max_width=16)
        off = prof.offsets()
        gap = off[np.argmax(prof.values)] - off[np.argmin(prof.values)]
        assert abs(gap - 7.0) <= 1.0
        # dark bar: intensity falls entering it, rises leaving it
        assert off[np.argmin(prof.values)] < 0 < off[np.argmax(prof.values)]

    def test_constant_image_zero(self):
        prof = edge_response(np.full((32, 32), 0.4), (16.0, 16.0), 1.0,
                             sigma=2.0, max_width=8)
        assert np.abs(prof.values).max() < 1e-12
        assert not prof.truncated

    @given(st.floats(0.0, 2 * math.pi), st.floats(14.0, 18.0), st.floats(14.0, 18.0))
    @settings(max_examples=40, deadline=None)
    def test_flip_negates(self, phi, vx, vy):
        rng = np.random.default_rng(5)
        img = rng.random((32, 32))
        fwd = edge_response(img, (vx, vy), phi, sigma=1.5, max_width=6)
        rev = edge_response(img, (vx, vy), phi + math.pi, sigma=1.5, max_width=6)
        assert np.allclose(rev.values, -fwd.values[::-1], atol=1e-12)

    def test_truncation_flag(self):
        img = bar_image(64, 96, 32.0, 7.0)
        near = edge_response(img, (48.0, 3.0), 0.0, sigma=2.0, max_width=16)
        deep = edge_response(img, (48.0, 32.0), 0.0, sigma=2.0, max_width=16)
        assert near.truncated and not deep.truncated

    def test_vertex_outside_raises(self):
        with pytest.raises(ValueError, match="outside"):
            edge_response(np.zeros((8, 8)), (8.5, 4.0), 0.0)

    @pytest.mark.parametrize("kwargs", [{"sigma": 0.0}, {"sigma": -1.0}, {"max_width": 0}])
    def test_bad_parameters(self, kwargs):
        with pytest.raises(ValueError):
            edge_response(np.zeros((8, 8)), (4.0, 4.0), 0.0, **kwargs)


# ---------------------------------------------------------------- widths


class TestExtractWidths:
    def test_constant_bar_width(self):
        img = bar_image(64, 96, 32.0, 7.0)
        prof = extract_widths(img, straight_track(10, 87, 32.0), sigma=2.0, max_width=16)
        assert np.abs(prof.widths() - 7.0).max() <= 1.0
        assert np.abs(prof.left - 3.5).max() <= 0.5
        assert np.abs(prof.right - 3.5).max() <= 0.5
        assert not prof.low_confidence

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        img = rng.random((24, 24))
        track = straight_track(8, 17, 12.0)
        mw = 6
        prof = extract_widths(img, track, sigma=1.5, max_width=mw)
        resp = np.stack([edge_response(img, track.vertices[i], 0.0,
                                       sigma=1.5, max_width=mw).values
                         for i in range(len(track))])
        left, right = widths_oracle(resp, mw)
        assert np.allclose(prof.left, left, atol=1e-12)
        assert np.allclose(prof.right, right, atol=1e-12)

    def test_zero_contrast_collapses(self):
        prof = extract_widths(np.full((32, 64), 0.6), straight_track(8, 57, 16.0),
                              sigma=2.0, max_width=12)
        assert prof.low_confidence
        assert prof.widths().max() == 0.0

    def test_taper_monotone(self):
        img, true_w = taper_image(64, 96, 32.0, 7.0, 3.0)
        track = straight_track(10, 87, 32.0)
        # scale below the thin end's half-width keeps the two edges resolved
        prof = extract_widths(img, track, sigma=1.2, max_width=16)
        w = prof.widths()
        assert np.abs(w - true_w[10:87]).max() <= 1.0
        assert (np.diff(w) <= 1e-9).all()

    def test_width_capped_and_ratio_kept(self):
        img = bar_image(64, 96, 32.0, 7.0)
        prof = extract_widths(img, straight_track(10, 87, 32.0), sigma=2.0, max_width=4)
        assert prof.widths().max() <= 4.0 + 1e-9
        assert np.allclose(prof.left, prof.right, atol=0.2)

    def test_single_vertex_track(self):
        img = bar_image(32, 32, 16.0, 5.0)
        track = CrackTrack(np.array([[16.0, 16.0]]), np.array([0.0]))
        prof = extract_widths(img, track, sigma=1.5, max_width=8)
        assert len(prof) == 1 and prof.arc_length[0] == 0.0

    def test_needs_track_type(self):
        with pytest.raises(TypeError, match="CrackTrack"):
            extract_widths(np.zeros((8, 8)), [[1.0, 2.0]])

    def test_arc_length_is_cumulative(self):
        img = bar_image(64, 96, 32.0, 7.0)
        track = straight_track(10, 87, 32.0)
        prof = extract_widths(img, track, sigma=2.0, max_width=8)
        assert np.allclose(prof.arc_length, np.arange(77.0))


# ---------------------------------------------------------------- mask


class TestRasterizeMask:
    def test_zero_widths_give_polyline(self):
        track = straight_track(5, 28, 12.0)
        m = len(track)
        prof = WidthProfile(np.zeros(m), np.zeros(m), np.arange(float(m)), 8.0)
        mask = rasterize_mask(track, prof, (32, 24)).pixels
        want = np.zeros((24, 32), dtype=bool)
        rr, cc = draw_line(12, 5, 12, 27)
        want[rr, cc] = True
        assert np.array_equal(mask, want)

    def test_constant_bar_jaccard(self):
        img = bar_image(64, 96, 32.0, 7.0)
        track = straight_track(10, 87, 32.0)
        prof = extract_widths(img, track, sigma=2.0, max_width=16)
        mask = rasterize_mask(track, prof, (96, 64)).pixels
        ideal = np.zeros((64, 96), dtype=bool)
        ideal[29:36, 10:87] = True  # rows with >= half coverage
        inter = (mask & ideal).sum()
        union = (mask | ideal).sum()
        assert inter / union >= 0.9

    @pytest.mark.parametrize("seed", [0, 7])
    def test_wider_profile_contains_narrower(self, seed):
        rng = np.random.default_rng(seed)
        xs = np.arange(6.0, 58.0)
        ys = 32.0 + 6.0 * np.sin(2 * np.pi * xs / 52.0)
        phi = np.arctan2(np.gradient(ys), np.gradient(xs))
        track = CrackTrack(np.stack([xs, ys], 1), phi)
        m = len(track)
        arc = np.concatenate(([0.0], np.cumsum(np.linalg.norm(np.diff(track.vertices, axis=0), axis=1))))
        left = rng.uniform(0.5, 3.0, m)
        right = rng.uniform(0.5, 3.0, m)
        narrow = WidthProfile(left, right, arc, 16.0)
        wide = WidthProfile(left + 0.5, right + 0.5, arc, 16.0)
        a = rasterize_mask(track, narrow, (64, 64)).pixels
        b = rasterize_mask(track, wide, (64, 64)).pixels
        assert (b | a).sum() == b.sum()  # superset
        assert b.sum() >= a.sum()

    def test_single_connected_component(self):
        xs = np.arange(6.0, 90.0)
        ys = 32.0 + 10.0 * np.sin(2 * np.pi * xs / 84.0)
        phi = np.arctan2(np.gradient(ys), np.gradient(xs))
        track = CrackTrack(np.stack([xs, ys], 1), phi)
        m = len(track)
        arc = np.concatenate(([0.0], np.cumsum(np.linalg.norm(np.diff(track.vertices, axis=0), axis=1))))
        widths = 1.5 + np.sin(np.arange(m) / 5.0) ** 2
        prof = WidthProfile(widths, widths[::-1].copy(), arc, 16.0)
        mask = rasterize_mask(track, prof, (96, 64)).pixels
        assert cc_label(mask, connectivity=2).max() == 1

    def test_length_mismatch_raises(self):
        track = straight_track(2, 10, 5.0)
        prof = WidthProfile(np.zeros(3), np.zeros(3), np.arange(3.0), 8.0)
        with pytest.raises(ValueError, match="entries"):
            rasterize_mask(track, prof, (16, 16))

    def test_bad_dims_raise(self):
        track = CrackTrack(np.array([[1.0, 1.0]]), np.array([0.0]))
        prof = WidthProfile(np.zeros(1), np.zeros(1), np.zeros(1), 8.0)
        with pytest.raises(ValueError, match="image_dims"):
            rasterize_mask(track, prof, (0, 16))


# ---------------------------------------------------------------- json


class TestWidthProfileJson:
    def test_round_trip(self):
        prof = WidthProfile(np.array([1.0, 2.0]), np.array([0.5, 1.5]),
                            np.array([0.0, 1.4]), 8.0)
        back = width_profile_from_json(width_profile_to_json(prof), max_width=8.0)
        assert np.allclose(back.left, prof.left)
        assert np.allclose(back.right, prof.right)
        assert np.allclose(back.arc_length, prof.arc_length)

    def test_entry_shape(self):
        prof = WidthProfile(np.array([1.0]), np.array([2.0]), np.array([0.0]), 8.0)
        entries = json.loads(width_profile_to_json(prof))
        assert entries == [{"s": 0.0, "left": 1.0, "right": 2.0}]

    def test_cap_inferred(self):
        text = json.dumps([{"s": 0.0, "left": 3.0, "right": 4.0}])
        assert width_profile_from_json(text).max_width == pytest.approx(7.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            width_profile_from_json("[]")


# ---------------------------------------------------------------- pipeline


class TestEndToEnd:
    def test_track_widths_mask_f1(self):
        h = w = 96
        xs_full = np.linspace(0.0, w - 1.0, 2000)
        spine_y = 40.0 + 6.0 * np.sin(2 * np.pi * xs_full / w)
        spine = np.stack([xs_full, spine_y], axis=1)
        yy, xx = np.mgrid[0:h, 0:w]
        cells = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(float)
        dist = cKDTree(spine).query(cells)[0].reshape(h, w)
        half = 2.5
        cov = np.clip(half + 0.5 - dist, 0.0, 1.0)
        img = np.clip(1.0 - 0.65 * cov + np.random.default_rng(9).normal(0.0, 0.01, (h, w)),
                      0.0, 1.0)
        gt = dist <= half

        stack = build_cake_wavelets(16, 65)
        a = (6, int(round(40.0 + 6.0 * math.sin(2 * math.pi * 6 / w))))
        b = (90, int(round(40.0 + 6.0 * math.sin(2 * math.pi * 90 / w))))
        track = track_crack(img, (a, b), MetricParams(), stack)
        prof = extract_widths(img, track, sigma=1.5, max_width=16)
        mask = rasterize_mask(track, prof, (w, h))
        gt_clip = gt.copy()
        gt_clip[:, :6] = False
        gt_clip[:, 91:] = False
        tally = tally_with_tolerance(mask.pixels, gt_clip, 0.0)
        _, _, f1 = metrics_from_tally(tally)
        assert f1 >= 0.90
