"""Data-driven crack tracking between two user-supplied endpoints.

A grayscale image is lifted to an orientation score, the score's negative
real part (dark, line-like response) is turned into a cost volume, and a
shortest path is computed on the lifted (x, y, theta) grid under an
anisotropic metric that makes sideward motion expensive and, by default,
forbids moving against the current orientation vector.  Backtracking the
distance map from the far endpoint yields the crack as a polyline.

Geometry conventions match :mod:`crackkit.orientation`: x runs along
columns, y along rows, and the orientation vector of slab ``j`` is
``(cos theta_j, sin theta_j)`` in those axes.  Angular motion is compared
with spatial motion through a stiffness length (pixels per radian), and the
forward-motion weight ``xi`` scales the whole metric, so rescaling ``xi``
rescales every distance exactly.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from ._fastmarch import _march
from ._validation import freeze
from .orientation import CakeWaveletStack, OrientationScore, build_cake_wavelets, lift
from .raster import RasterImage


@dataclass(frozen=True)
class MetricParams:
    """Weights of the tracking metric and the cost-volume shape.

    xi scales every term, so it sets the overall price of path length;
    zeta < 1 penalizes sideward relative to forward motion; lambda_data
    blends in the orientation-score Hessian; cost_mu and cost_power shape
    how sharply line response is converted into low cost; theta_stiffness
    converts radians of turning into pixel-equivalent units; symmetric
    lifts the forward-only motion constraint.
    """

    xi: float = 1.0
    zeta: float = 0.1
    lambda_data: float = 0.0
    cost_mu: float = 100.0
    cost_power: float = 2.0
    theta_stiffness: float = 8.0
    symmetric: bool = False

    def __post_init__(self):
        numeric = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "symmetric"}
        for name, value in numeric.items():
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
                raise ValueError(f"{name} must be a finite number, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.xi <= 0:
            raise ValueError(f"xi must be positive, got {self.xi}")
        if not 0.0 < self.zeta <= 1.0:
            raise ValueError(f"zeta must lie in (0, 1], got {self.zeta}")
        if self.lambda_data < 0:
            raise ValueError(f"lambda_data must be non-negative, got {self.lambda_data}")
        if self.cost_mu < 0:
            raise ValueError(f"cost_mu must be non-negative, got {self.cost_mu}")
        if self.cost_power <= 0:
            raise ValueError(f"cost_power must be positive, got {self.cost_power}")
        if self.theta_stiffness <= 0:
            raise ValueError(f"theta_stiffness must be positive, got {self.theta_stiffness}")
        if not isinstance(self.symmetric, bool):
            raise ValueError(f"symmetric must be a bool, got {self.symmetric!r}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "MetricParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown metric parameters: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class CostVolume:
    """Per-(x, theta) traversal cost in (0, 1]; low along dark oriented lines."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"cost values must be (orientations, height, width), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("cost contains non-finite values")
        lo, hi = float(arr.min()), float(arr.max())
        if lo <= 0.0 or hi > 1.0 + 1e-12:
            raise ValueError(f"cost must lie in (0, 1], found range [{lo}, {hi}]")
        object.__setattr__(self, "values", freeze(np.ascontiguousarray(arr)))

    @property
    def n_orientations(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class HessianField:
    """Second derivatives of |U| over (x, y, u), u = theta scaled to pixels.

    matrices has shape (orientations, height, width, 3, 3) and is symmetric
    at every grid point; component order is (x, y, u).
    """

    matrices: np.ndarray = field(repr=False)
    theta_stiffness: float = 8.0

    def __post_init__(self):
        arr = np.asarray(self.matrices, dtype=np.float64)
        if arr.ndim != 5 or arr.shape[3:] != (3, 3):
            raise ValueError(f"hessian matrices must be (orientations, H, W, 3, 3), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("hessian contains non-finite values")
        if not np.allclose(arr, np.swapaxes(arr, 3, 4), atol=1e-10):
            raise ValueError("hessian matrices must be symmetric")
        object.__setattr__(self, "matrices", freeze(np.ascontiguousarray(arr)))

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return self.matrices.shape[:3]


@dataclass(frozen=True)
class DistanceMap:
    """Geodesic distance from the seed set over the lifted grid.

    values is (orientations, height, width) with np.inf on unreachable
    nodes; predecessors and accepted_order are flat indices into that grid
    recorded by the solver, so paths can be walked back without re-solving.
    """

    values: np.ndarray = field(repr=False)
    predecessors: np.ndarray = field(repr=False)
    accepted_order: np.ndarray = field(repr=False)
    seeds: tuple[tuple[int, int, int], ...]
    params: MetricParams

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 3:
            raise ValueError(f"distance values must be 3D, got {vals.shape}")
        object.__setattr__(self, "values", freeze(np.ascontiguousarray(vals)))
        object.__setattr__(self, "predecessors",
                           freeze(np.ascontiguousarray(self.predecessors, dtype=np.int32)))
        object.__setattr__(self, "accepted_order",
                           freeze(np.ascontiguousarray(self.accepted_order, dtype=np.int32)))
        object.__setattr__(self, "seeds", tuple((int(x), int(y), int(j)) for x, y, j in self.seeds))

    @property
    def n_orientations(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def distance(self, x: int, y: int, theta_index: int) -> float:
        return float(self.values[theta_index, y, x])


@dataclass(frozen=True)
class LiftedPath:
    """Polyline of (x, y, theta) samples, t=0 at the seed; theta in radians."""

    vertices: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.vertices, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
            raise ValueError(f"lifted path needs (m, 3) vertices, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("lifted path contains non-finite vertices")
        steps = np.abs(np.diff(arr[:, :2], axis=0))
        if steps.size and steps.max() > 1.0 + 1e-6:
            raise ValueError("consecutive lifted-path vertices must stay within one grid step")
        object.__setattr__(self, "vertices", freeze(np.ascontiguousarray(arr)))

    def __len__(self) -> int:
        return self.vertices.shape[0]

    def xy(self) -> np.ndarray:
        return self.vertices[:, :2]

    def theta(self) -> np.ndarray:
        return self.vertices[:, 2]


@dataclass(frozen=True)
class CrackTrack:
    """2D crack polyline with a local orientation (radians) at every vertex."""

    vertices: np.ndarray = field(repr=False)
    orientations: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.vertices, dtype=np.float64)
        ori = np.asarray(self.orientations, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
            raise ValueError(f"track needs (m, 2) vertices, got {arr.shape}")
        if ori.shape != (arr.shape[0],):
            raise ValueError("track needs one orientation per vertex")
        if not (np.isfinite(arr).all() and np.isfinite(ori).all()):
            raise ValueError("track contains non-finite values")
        steps = np.abs(np.diff(arr, axis=0))
        if steps.size and steps.max() > 1.0 + 1e-6:
            raise ValueError("consecutive track vertices must stay within one grid step")
        object.__setattr__(self, "vertices", freeze(np.ascontiguousarray(arr)))
        object.__setattr__(self, "orientations", freeze(np.ascontiguousarray(ori)))

    def __len__(self) -> int:
        return self.vertices.shape[0]

    @property
    def length(self) -> float:
        """Arc length of the polyline in pixels."""
        return float(np.linalg.norm(np.diff(self.vertices, axis=0), axis=1).sum())


def track_to_json(track: CrackTrack, params: MetricParams) -> str:
    polyline = [{"x": float(x), "y": float(y), "theta": float(t)}
                for (x, y), t in zip(track.vertices, track.orientations)]
    return json.dumps({"params": params.to_dict(), "track": polyline}, sort_keys=True)


def track_from_json(text: str) -> tuple[CrackTrack, MetricParams]:
    data = json.loads(text)
    params = MetricParams.from_dict(data["params"])
    pts = data["track"]
    vertices = np.array([[p["x"], p["y"]] for p in pts], dtype=np.float64)
    orientations = np.array([p["theta"] for p in pts], dtype=np.float64)
    return CrackTrack(vertices, orientations), params


def compute_cost(score: OrientationScore, params: MetricParams) -> CostVolume:
    """Map negative real line response to a cost in (0, 1], low on dark lines."""
    response = np.maximum(0.0, -score.data.real)
    peak = float(response.max())
    if peak <= 0.0:
        warnings.warn("orientation score has no dark-line response; cost volume is uniform",
                      stacklevel=2)
        return CostVolume(np.ones(score.data.shape))
    rel = response / peak
    return CostVolume(1.0 / (1.0 + params.cost_mu * rel ** params.cost_power))


def build_hessian_field(score: OrientationScore, theta_stiffness: float = 8.0,
                        derivative_scale: float = 1.5) -> HessianField:
    """Gaussian second derivatives of |U| on the (x, y, u) grid.

    The orientation axis is periodic and measured in u = theta_stiffness *
    theta pixels, so the matrix entries are directly comparable across axes.
    derivative_scale is the Gaussian sigma in pixels on every axis.
    """
    if theta_stiffness <= 0:
        raise ValueError(f"theta_stiffness must be positive, got {theta_stiffness}")
    if derivative_scale <= 0:
        raise ValueError(f"derivative_scale must be positive, got {derivative_scale}")
    amp = np.abs(score.data)
    n = score.n_orientations
    du = theta_stiffness * (2.0 * np.pi / n)  # pixels of u per orientation slab
    # sub-sample sigmas make the discrete derivative kernel degenerate, so
    # the angular smoothing never drops below one slab
    sigma = (max(derivative_scale / du, 1.0), derivative_scale, derivative_scale)
    mode = ("wrap", "nearest", "nearest")

    def deriv(order_u, order_y, order_x):
        out = gaussian_filter(amp, sigma=sigma, order=(order_u, order_y, order_x), mode=mode)
        return out / du ** order_u

    fxx = deriv(0, 0, 2)
    fxy = deriv(0, 1, 1)
    fxu = deriv(1, 0, 1)
    fyy = deriv(0, 2, 0)
    fyu = deriv(1, 1, 0)
    fuu = deriv(2, 0, 0)
    mats = np.empty(amp.shape + (3, 3), dtype=np.float64)
    mats[..., 0, 0] = fxx
    mats[..., 0, 1] = mats[..., 1, 0] = fxy
    mats[..., 0, 2] = mats[..., 2, 0] = fxu
    mats[..., 1, 1] = fyy
    mats[..., 1, 2] = mats[..., 2, 1] = fyu
    mats[..., 2, 2] = fuu
    return HessianField(mats, theta_stiffness)


def _spectral_norm_sq(matrices: np.ndarray) -> np.ndarray:
    """Squared largest absolute eigenvalue of symmetric (..., 3, 3) matrices."""
    eig = np.linalg.eigvalsh(matrices)
    return np.maximum(np.abs(eig[..., 0]), np.abs(eig[..., -1])) ** 2


def hessian_data_term(score: OrientationScore, point: tuple[int, int, int],
                      direction, theta_stiffness: float = 8.0,
                      hessian: HessianField | None = None) -> float:
    """Directional line-strength ratio chi(d) = |H d|^2 / max_eig(H)^2 in [0, 1].

    point is (x, y, theta_index); direction is a unit 3-vector in (x, y, u)
    components.  A precomputed field can be passed to avoid rebuilding it.
    """
    d = np.asarray(direction, dtype=np.float64)
    if d.shape != (3,):
        raise ValueError(f"direction must be a 3-vector, got shape {d.shape}")
    norm = float(np.linalg.norm(d))
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"direction must be normalized, got |d| = {norm}")
    if hessian is None:
        hessian = build_hessian_field(score, theta_stiffness)
    x, y, j = (int(v) for v in point)
    n, h, w = hessian.grid_shape
    if not (0 <= x < w and 0 <= y < h and 0 <= j < n):
        raise ValueError(f"point {point} outside the score grid")
    mat = hessian.matrices[j, y, x]
    top = float(_spectral_norm_sq(mat))
    if top <= 1e-300:
        return 0.0
    return float(min(np.dot(mat, d) @ np.dot(mat, d) / top, 1.0))


def metric_speed(params: MetricParams, cost_at_p: float, data_term: float,
                 velocity, n) -> float:
    """Length of a lifted velocity under the metric; np.inf when rejected.

    velocity is (dx/dt, dy/dt, dtheta/dt) with the angular rate in radians;
    n is the unit orientation vector at the evaluation point.  In the default
    asymmetric mode any velocity with a backward spatial component is
    rejected outright.
    """
    nvec = np.asarray(n, dtype=np.float64)
    if nvec.shape != (2,) or abs(float(np.linalg.norm(nvec)) - 1.0) > 1e-9:
        raise ValueError(f"n must be a unit 2-vector, got {n!r}")
    vx, vy, vtheta = (float(c) for c in velocity)
    vt = params.theta_stiffness * vtheta
    fwd = vx * nvec[0] + vy * nvec[1]
    if not params.symmetric and fwd < 0.0:
        return float("inf")
    sq = vx * vx + vy * vy
    side2 = max(sq - fwd * fwd, 0.0)
    base = fwd * fwd + side2 / params.zeta ** 2 + vt * vt
    if params.lambda_data > 0.0:
        base += params.lambda_data * float(data_term) * (sq + vt * vt)
    return float(cost_at_p) * params.xi * math.sqrt(base)


def _flat_index(x: int, y: int, j: int, shape: tuple[int, int, int]) -> int:
    n, h, w = shape
    return (j * h + y) * w + x


def _check_grid_point(point, shape, what: str) -> tuple[int, int, int]:
    n, h, w = shape
    try:
        px, py, pj = point
        x, y, j = int(px), int(py), int(pj)
    except (TypeError, ValueError):
        raise ValueError(f"{what} must be an (x, y, theta_index) triple, got {point!r}") from None
    if (x, y, j) != (px, py, pj):
        raise ValueError(f"{what} must have integer grid coordinates, got {point!r}")
    if not (0 <= x < w and 0 <= y < h and 0 <= j < n):
        raise ValueError(f"{what} {point!r} outside grid (width {w}, height {h}, {n} orientations)")
    return x, y, j


def fast_march(cost: CostVolume, hessian: HessianField | None, params: MetricParams,
               seed, targets=None) -> DistanceMap:
    """Label-setting shortest-path sweep from one or more lifted seed points.

    seed is an (x, y, theta_index) triple or a sequence of them.  When
    targets (same format) are given the sweep stops early once every target
    has been settled; the rest of the map stays np.inf.
    """
    shape = cost.values.shape

    def as_triples(value, what):
        items = list(value)
        if not items:
            raise ValueError(f"at least one {what} is required")
        if not np.iterable(items[0]):
            items = [items]
        return [_check_grid_point(p, shape, what) for p in items]

    seed_pts = as_triples(seed, "seed")
    target_pts = as_triples(targets, "target") if targets is not None else []

    use_hess = params.lambda_data > 0.0
    if use_hess:
        if hessian is None:
            raise ValueError("lambda_data > 0 requires a hessian field")
        if hessian.grid_shape != shape:
            raise ValueError(f"hessian grid {hessian.grid_shape} does not match cost grid {shape}")
        hess_flat = hessian.matrices.reshape(-1, 3, 3)
        hmax2 = np.ascontiguousarray(_spectral_norm_sq(hess_flat))
        # stiffness mismatches would silently change the u axis scale
        if abs(hessian.theta_stiffness - params.theta_stiffness) > 1e-9:
            raise ValueError("hessian was built with a different theta_stiffness")
    else:
        hess_flat = np.zeros((1, 3, 3))
        hmax2 = np.zeros(1)

    n = shape[0]
    theta = np.arange(n) * (2.0 * np.pi / n)
    seeds_flat = np.array(sorted({_flat_index(x, y, j, shape) for x, y, j in seed_pts}),
                          dtype=np.int64)
    targets_flat = np.array(sorted({_flat_index(x, y, j, shape) for x, y, j in target_pts}),
                            dtype=np.int64)
    vt_step = params.theta_stiffness * (2.0 * np.pi / n)
    dist, pred, order = _march(
        np.ascontiguousarray(cost.values), params.xi, params.zeta, params.lambda_data,
        vt_step, params.symmetric, np.ascontiguousarray(hess_flat), hmax2, use_hess,
        seeds_flat, targets_flat, np.cos(theta), np.sin(theta))
    return DistanceMap(dist.reshape(shape), pred, order, tuple(seed_pts), params)


def _interp_distance(values: np.ndarray, pos: np.ndarray) -> float:
    """Trilinear interpolation at (x, y, theta_slabs); theta periodic."""
    n, h, w = values.shape
    x = min(max(pos[0], 0.0), w - 1.0)
    y = min(max(pos[1], 0.0), h - 1.0)
    t = pos[2] % n
    x0, y0, t0 = int(x), int(y), int(t)
    x0 = min(x0, w - 2) if w > 1 else 0
    y0 = min(y0, h - 2) if h > 1 else 0
    fx, fy, ft = x - x0, y - y0, t - t0
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    t1 = (t0 + 1) % n
    total = 0.0
    for (ti, wt) in ((t0, 1.0 - ft), (t1, ft)):
        for (yi, wy) in ((y0, 1.0 - fy), (y1, fy)):
            for (xi, wx) in ((x0, 1.0 - fx), (x1, fx)):
                weight = wt * wy * wx
                if weight == 0.0:
                    continue
                v = values[ti, yi, xi]
                if not np.isfinite(v):
                    return float("inf")
                total += weight * v
    return total


def _descent_gradient(values: np.ndarray, pos: np.ndarray) -> np.ndarray:
    n, h, w = values.shape
    step = 0.5
    grad = np.empty(3)
    bounds = (w - 1.0, h - 1.0, None)
    for axis in range(3):
        fwd = pos.copy()
        bwd = pos.copy()
        hi = bounds[axis]
        if hi is None:  # theta wraps, never clamps
            fwd[axis] += step
            bwd[axis] -= step
        else:
            fwd[axis] = min(pos[axis] + step, hi)
            bwd[axis] = max(pos[axis] - step, 0.0)
        span = fwd[axis] - bwd[axis] if hi is not None else 2.0 * step
        if span <= 0.0:
            grad[axis] = 0.0
            continue
        grad[axis] = (_interp_distance(values, fwd) - _interp_distance(values, bwd)) / span
    return grad


def _cell_corners(values: np.ndarray, pos: np.ndarray):
    """Corners of pos's cell ordered by ascending distance value."""
    n, h, w = values.shape
    x0 = int(min(max(pos[0], 0.0), w - 1.0))
    y0 = int(min(max(pos[1], 0.0), h - 1.0))
    t0 = int(pos[2] % n)
    corners = []
    for ti in (t0, (t0 + 1) % n):
        for yi in (y0, min(y0 + 1, h - 1)):
            for xi in (x0, min(x0 + 1, w - 1)):
                if (xi, yi, ti) not in corners:
                    corners.append((xi, yi, ti))
    # stable sort: ties resolve in scan order, keeping walks reproducible
    corners.sort(key=lambda c: values[c[2], c[1], c[0]])
    return corners


def backtrack(dist: DistanceMap, target) -> LiftedPath:
    """Walk the distance map from target down to the seed set.

    Descends the interpolated distance in sub-cell steps for smoothness;
    wherever interpolation stalls (coarse cells, plateaus, the boundary of
    the reached set) it snaps to the best corner of the current cell and
    follows the solver's predecessor edges instead, which always make
    progress.  The walk runs downhill but every step reappears reversed in
    the returned path, so in asymmetric mode each step is kept admissible
    with respect to its reversed direction.  The result is reversed to put
    t=0 at the seed.
    """
    shape = dist.values.shape
    n, h, w = shape
    x, y, j = _check_grid_point(target, shape, "target")
    if not np.isfinite(dist.values[j, y, x]):
        raise ValueError(f"target {(x, y, j)} is unreachable from the seed set")
    values = dist.values
    pred = dist.predecessors
    params = dist.params
    step_rad = 2.0 * np.pi / n
    seed_nodes = {_flat_index(sx, sy, sj, shape) for sx, sy, sj in dist.seeds}
    seed_pos = np.array([[sx, sy, sj] for sx, sy, sj in dist.seeds], dtype=np.float64)

    def orientation_at(theta_slabs: float) -> np.ndarray:
        angle = (theta_slabs % n) * step_rad
        return np.array([np.cos(angle), np.sin(angle)])

    pos = np.array([x, y, j], dtype=np.float64)
    cur = float(values[j, y, x])
    verts = [pos.copy()]
    at_node = _flat_index(x, y, j, shape)
    node_mark = 0  # index in verts of the last grid-node vertex

    max_steps = 40 * (n + h + w)
    for _ in range(max_steps):
        if at_node is not None and at_node in seed_nodes:
            break
        # within one cell of a seed: finish with the exact seed vertex,
        # provided the reversed jump (seed towards here) is admissible
        d_seed = np.abs(seed_pos - pos)
        d_seed[:, 2] = np.minimum(d_seed[:, 2] % n, n - d_seed[:, 2] % n)
        near = np.where(d_seed.max(axis=1) <= 1.0)[0]
        finished = False
        for k in near:
            outward = pos[:2] - seed_pos[k, :2]
            if params.symmetric or float(outward @ orientation_at(seed_pos[k, 2])) >= -1e-6:
                if np.abs(seed_pos[k] - pos).max() > 1e-9:
                    verts.append(seed_pos[k].copy())
                finished = True
                break
        if finished:
            break

        moved = False
        grad = _descent_gradient(values, pos)
        gnorm = float(np.linalg.norm(grad))
        if np.isfinite(gnorm) and gnorm > 1e-12:
            direction = -grad / gnorm
            # narrow metric valleys need finer steps than half a cell
            for scale in (0.5, 0.25, 0.125):
                cand = pos + scale * direction
                cand[0] = min(max(cand[0], 0.0), w - 1.0)
                cand[1] = min(max(cand[1], 0.0), h - 1.0)
                cand[2] = cand[2] % n
                if not params.symmetric:
                    # the reversed segment starts where this step lands;
                    # project its spatial part onto that slab's halfspace
                    # (the shift leaves cand's theta, hence nvec, untouched)
                    nvec = orientation_at(cand[2])
                    back = float((pos[:2] - cand[:2]) @ nvec)
                    if back < 0.0:
                        cand[0] = min(max(cand[0] + back * nvec[0], 0.0), w - 1.0)
                        cand[1] = min(max(cand[1] + back * nvec[1], 0.0), h - 1.0)
                        if float((pos[:2] - cand[:2]) @ nvec) < -1e-9:
                            continue  # grid border blocked the projection
                cval = _interp_distance(values, cand)
                if cval < cur - 1e-12:
                    pos = cand
                    cur = cval
                    verts.append(pos.copy())
                    at_node = None
                    moved = True
                    break
        if moved:
            continue

        if at_node is None:
            # interpolation is a convex combination, so the best corner of
            # the cell never lies above the current value; take the lowest
            # corner at or below it whose reversed hop is admissible
            snapped = False
            for cx, cy, ct in _cell_corners(values, pos):
                corner_val = float(values[ct, cy, cx])
                if corner_val > cur + 1e-12:
                    break
                outward = pos[:2] - np.array([cx, cy], dtype=np.float64)
                if not params.symmetric and float(outward @ orientation_at(ct)) < -1e-6:
                    continue
                corner_pos = np.array([cx, cy, ct], dtype=np.float64)
                at_node = _flat_index(cx, cy, ct, shape)
                if np.abs(corner_pos - pos).max() > 1e-9:
                    verts.append(corner_pos.copy())
                pos = corner_pos
                cur = corner_val
                node_mark = len(verts) - 1
                snapped = True
                break
            if snapped:
                continue
            # no admissible corner: drop the fractional stretch, resume from
            # the last node and leave it by a predecessor edge (retrying the
            # gradient there would retrace the same stretch)
            del verts[node_mark + 1:]
            pos = verts[node_mark].copy()
            cur = float(values[int(pos[2]), int(pos[1]), int(pos[0])])
            at_node = _flat_index(int(pos[0]), int(pos[1]), int(pos[2]), shape)
            if at_node in seed_nodes:
                break

        parent = int(pred[at_node])
        if parent < 0:
            break  # reached a seed (or an isolated minimum, which is a seed)
        pj, rem = divmod(parent, h * w)
        py, px = divmod(rem, w)
        pos = np.array([px, py, pj], dtype=np.float64)
        cur = float(values[pj, py, px])
        verts.append(pos.copy())
        at_node = parent
        node_mark = len(verts) - 1
    else:
        raise RuntimeError("backtracking failed to reach the seed set")

    out = np.array(verts[::-1], dtype=np.float64)
    out[:, 2] = (out[:, 2] % n) * step_rad
    return LiftedPath(out)


def _snap_to_valley(xy: np.ndarray, theta: np.ndarray, cost: CostVolume) -> np.ndarray:
    """Sub-pixel shift of interior vertices to the local cost minimum.

    The discrete solver commits to one staircase out of several near-ties;
    a parabolic fit of the cost across the track, along each vertex's
    perpendicular, recovers the continuous valley center both march
    directions share.  Shifts are capped at half a pixel.
    """
    n = cost.n_orientations
    step = 2.0 * np.pi / n
    out = xy.copy()
    for i in range(1, len(xy) - 1):
        j = int(round(theta[i] / step)) % n
        perp = np.array([-math.sin(theta[i]), math.cos(theta[i])])
        pts = np.array([xy[i] - perp, xy[i], xy[i] + perp])
        c = map_coordinates(cost.values[j], [pts[:, 1], pts[:, 0]], order=1, mode="nearest")
        curvature = c[0] - 2.0 * c[1] + c[2]
        if curvature > 1e-12:
            delta = float(np.clip(0.5 * (c[0] - c[2]) / curvature, -0.5, 0.5))
            out[i] = xy[i] + delta * perp
    return out


def project_track(path: LiftedPath, cost: CostVolume | None = None,
                  smooth_window: int = 3) -> CrackTrack:
    """Drop theta to get a 2D polyline; valley snapping and light smoothing.

    Endpoints stay pinned.  When the cost volume is given, interior
    vertices are refined to the sub-pixel cost-valley center first.
    """
    xy = np.asarray(path.xy(), dtype=np.float64)
    theta = np.asarray(path.theta(), dtype=np.float64)
    keep = [0]
    for i in range(1, len(xy)):
        if np.abs(xy[i] - xy[keep[-1]]).max() > 1e-9:
            keep.append(i)
    xy = xy[keep]
    theta = theta[keep]
    if cost is not None and len(xy) >= 3:
        xy = _snap_to_valley(xy, theta, cost)
    if smooth_window >= 3 and len(xy) >= 3:
        half = smooth_window // 2
        smooth = xy.copy()
        for i in range(1, len(xy) - 1):
            lo = max(i - half, 0)
            hi = min(i + half + 1, len(xy))
            smooth[i] = xy[lo:hi].mean(axis=0)
        xy = smooth
    # snapping can stretch a step past one cell; subdivide until legal
    for _ in range(4):
        steps = np.abs(np.diff(xy, axis=0)).max(axis=1) if len(xy) > 1 else np.array([])
        wide = set(np.where(steps > 1.0)[0].tolist())
        if not wide:
            break
        nxy = []
        nth = []
        for i in range(len(xy) - 1):
            nxy.append(xy[i])
            nth.append(theta[i])
            if i in wide:
                nxy.append(0.5 * (xy[i] + xy[i + 1]))
                nth.append(theta[i])
        nxy.append(xy[-1])
        nth.append(theta[-1])
        xy = np.array(nxy)
        theta = np.array(nth)
    return CrackTrack(xy, theta)


def track_from_score(score, endpoints, params: MetricParams | None = None) -> CrackTrack:
    """Trace a crack on a precomputed orientation score.

    Same contract as track_crack, for callers that keep the lift of an
    image around across several endpoint pairs.

    Raises ValueError for identical or out-of-range endpoints and
    RuntimeError when no admissible path exists (asymmetric mode can make
    a pair unreachable).
    """
    params = params if params is not None else MetricParams()
    h, w = score.height, score.width
    (x1, y1), (x2, y2) = ((int(round(px)), int(round(py))) for px, py in endpoints)
    for px, py in ((x1, y1), (x2, y2)):
        if not (0 <= px < w and 0 <= py < h):
            raise ValueError(f"endpoint ({px}, {py}) outside image of width {w}, height {h}")
    if (x1, y1) == (x2, y2):
        raise ValueError("endpoints are identical; nothing to track")

    cost = compute_cost(score, params)
    hessian = None
    if params.lambda_data > 0.0:
        hessian = build_hessian_field(score, params.theta_stiffness)
    n = score.n_orientations
    seeds = [(x1, y1, j) for j in range(n)]
    targets = [(x2, y2, j) for j in range(n)]
    dist = fast_march(cost, hessian, params, seeds, targets=targets)
    arrivals = dist.values[:, y2, x2]
    best = int(np.argmin(arrivals))
    if not np.isfinite(arrivals[best]):
        raise RuntimeError(f"no admissible path from ({x1}, {y1}) to ({x2}, {y2})")
    path = backtrack(dist, (x2, y2, best))
    return project_track(path, cost)


def track_crack(image, endpoints, params: MetricParams | None = None,
                stack: CakeWaveletStack | None = None) -> CrackTrack:
    """Trace a crack between two clicked points of an image.

    endpoints is ((x1, y1), (x2, y2)) in pixel coordinates.  The image is
    lifted, converted to a cost volume, and the shortest lifted path from
    the first endpoint (seeded at every orientation) to the best-orientation
    lift of the second is projected back to 2D.

    Raises ValueError for identical or out-of-range endpoints and
    RuntimeError when no admissible path exists (asymmetric mode can make
    a pair unreachable).
    """
    stack = stack if stack is not None else build_cake_wavelets()
    img = image if isinstance(image, RasterImage) else RasterImage(image)
    return track_from_score(lift(img.luma(), stack), endpoints, params)


class GeodesicTracker:
    """Estimator-style wrapper bundling wavelet and metric configuration."""

    def __init__(self, xi: float = 1.0, zeta: float = 0.1, lambda_data: float = 0.0,
                 cost_mu: float = 100.0, cost_power: float = 2.0,
                 theta_stiffness: float = 8.0, symmetric: bool = False,
                 n_orientations: int = 16, spatial_size: int = 65):
        self.xi = xi
        self.zeta = zeta
        self.lambda_data = lambda_data
        self.cost_mu = cost_mu
        self.cost_power = cost_power
        self.theta_stiffness = theta_stiffness
        self.symmetric = symmetric
        self.n_orientations = n_orientations
        self.spatial_size = spatial_size
        self._stack = None

    _PARAM_NAMES = ("xi", "zeta", "lambda_data", "cost_mu", "cost_power",
                    "theta_stiffness", "symmetric", "n_orientations", "spatial_size")

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params) -> "GeodesicTracker":
        for key, value in params.items():
            if key not in self._PARAM_NAMES:
                raise ValueError(f"unknown parameter {key!r} for GeodesicTracker")
            setattr(self, key, value)
        self._stack = None
        return self

    def metric_params(self) -> MetricParams:
        return MetricParams(xi=self.xi, zeta=self.zeta, lambda_data=self.lambda_data,
                            cost_mu=self.cost_mu, cost_power=self.cost_power,
                            theta_stiffness=self.theta_stiffness, symmetric=self.symmetric)

    def fit(self, X=None, y=None) -> "GeodesicTracker":
        self._stack = build_cake_wavelets(self.n_orientations, self.spatial_size)
        return self

    def track(self, image, endpoints) -> CrackTrack:
        if self._stack is None:
            self.fit()
        return track_crack(image, endpoints, self.metric_params(), self._stack)
