"""Multi-orientation image decomposition with complex cake wavelets.

An image f is lifted to a complex score U(x, y, theta_j) over a full circle
of n uniformly spaced orientations.  Each wavelet occupies an angular wedge
in the frequency plane (a cubic B-spline profile, so the wedges sum to one)
times a radial envelope that is flat over the working band and tapers before
Nyquist.  Kernel j detects line features whose spine runs along theta_j: its
frequency wedge is centered on the perpendicular axis theta_j + pi/2.  The
real part of U responds to lines, the imaginary part to edges.

Convention notes.  Angles are measured in array coordinates (x = column,
y = row, theta = atan2(fy, fx)), so theta increases in the direction that
np.rot90(..., 1) rotates.  Lifting correlates rather than convolves, and the
boundary is mirror padded to match the augmentation pipeline's convention.
The summed frequency response of the full stack equals the radial envelope,
which is what makes project(lift(f)) reproduce a band-passed f.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.optimize import brentq
from scipy.special import gammaincc

from ._validation import check_positive_int, freeze
from .raster import RasterImage

__all__ = [
    "FrequencyParams",
    "CakeWaveletStack",
    "OrientationScore",
    "build_cake_wavelets",
    "lift",
    "project",
    "OrientationScoreTransform",
]

_NYQUIST = 0.5  # cycles per pixel
_ANGULAR_SPLINE = BSpline.basis_element(np.arange(5) - 2.0, extrapolate=False)


@dataclass(frozen=True)
class FrequencyParams:
    """Radial envelope shape: flat low band, smooth taper, hard DC cut."""

    inflection_point: float = 0.8  # taper inflection as a fraction of Nyquist
    taper_order: int = 8
    dc_radius: float = 0.003  # cutoff disk radius as a fraction of Nyquist

    def __post_init__(self):
        if not 0.0 < self.inflection_point <= 1.0:
            raise ValueError(f"inflection_point must lie in (0, 1], got {self.inflection_point}")
        check_positive_int(self.taper_order, "taper_order")
        if not 0.0 <= self.dc_radius < 1.0:
            raise ValueError(f"dc_radius must lie in [0, 1), got {self.dc_radius}")

    @property
    def falloff_scale(self) -> float:
        # places the envelope's inflection exactly at inflection_point * Nyquist
        return (self.inflection_point * _NYQUIST) ** 2 / (self.taper_order + 0.5)


def _angular_weight(phi_offset: np.ndarray, step: float) -> np.ndarray:
    return np.nan_to_num(_ANGULAR_SPLINE(phi_offset / step))


def _radial_envelope(rho: np.ndarray, params: FrequencyParams) -> np.ndarray:
    env = gammaincc(params.taper_order + 1, rho ** 2 / params.falloff_scale)
    env[rho < params.dc_radius * _NYQUIST] = 0.0
    return env


def _frequency_grid(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    return np.hypot(fx, fy), np.arctan2(fy, fx)


def _stack_response(n_orientations: int, params: FrequencyParams,
                    shape: tuple[int, int]) -> np.ndarray:
    rho, phi = _frequency_grid(shape)
    env = _radial_envelope(rho, params)
    step = 2.0 * np.pi / n_orientations
    out = np.empty((n_orientations, shape[0], shape[1]))
    for j in range(n_orientations):
        offset = (phi - j * step - np.pi / 2 + np.pi) % (2.0 * np.pi) - np.pi
        out[j] = _angular_weight(offset, step) * env
    return out


@dataclass(frozen=True)
class CakeWaveletStack:
    n_orientations: int
    spatial_size: int
    frequency_params: FrequencyParams
    wavelets: np.ndarray = field(repr=False)  # (n, size, size) complex

    def theta(self) -> np.ndarray:
        """Orientation angles theta_j = j * 2pi / n over [0, 2pi)."""
        return np.arange(self.n_orientations) * (2.0 * np.pi / self.n_orientations)

    def frequency_response(self, shape: tuple[int, int]) -> np.ndarray:
        """Per-orientation real frequency profiles on an arbitrary FFT grid."""
        return _stack_response(self.n_orientations, self.frequency_params, shape)

    def coverage_annulus(self) -> tuple[float, float]:
        """Radial band (cycles/px) where the summed response stays within 1% of 1."""
        p = self.frequency_params
        lo = max(p.dc_radius * _NYQUIST, 1e-9)
        plateau_c = brentq(lambda c: gammaincc(p.taper_order + 1, c) - 0.99, 1e-9, 100.0)
        return lo, float(np.sqrt(plateau_c * p.falloff_scale))


def build_cake_wavelets(n_orientations: int = 16, spatial_size: int = 65,
                        frequency_params: FrequencyParams | None = None) -> CakeWaveletStack:
    if n_orientations < 4 or n_orientations % 2:
        raise ValueError(f"n_orientations must be an even count >= 4, got {n_orientations}")
    if spatial_size < 5 or spatial_size % 2 == 0:
        raise ValueError(f"spatial_size must be an odd size >= 5, got {spatial_size}")
    params = frequency_params or FrequencyParams()
    response = _stack_response(n_orientations, params, (spatial_size, spatial_size))
    kernels = np.fft.fftshift(np.fft.ifft2(response, axes=(1, 2)), axes=(1, 2))
    return CakeWaveletStack(n_orientations, spatial_size, params,
                            freeze(np.ascontiguousarray(kernels)))


@dataclass(frozen=True)
class OrientationScore:
    data: np.ndarray = field(repr=False)  # (n_orientations, height, width) complex

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.complex128)
        if arr.ndim != 3:
            raise ValueError(f"score data must be (orientations, height, width), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("score contains non-finite values")
        object.__setattr__(self, "data", freeze(np.ascontiguousarray(arr)))

    @property
    def n_orientations(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def theta(self) -> np.ndarray:
        return np.arange(self.n_orientations) * (2.0 * np.pi / self.n_orientations)

    def slab(self, j: int) -> np.ndarray:
        return self.data[j]

    def to_bytes(self) -> bytes:
        header = json.dumps({"width": self.width, "height": self.height,
                             "n_orientations": self.n_orientations,
                             "dtype": "complex128"}, sort_keys=True)
        return header.encode() + b"\n" + self.data.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "OrientationScore":
        head, _, raw = blob.partition(b"\n")
        meta = json.loads(head.decode())
        if meta.get("dtype") != "complex128":
            raise ValueError(f"unsupported score dtype {meta.get('dtype')!r}")
        shape = (meta["n_orientations"], meta["height"], meta["width"])
        data = np.frombuffer(raw, dtype=np.complex128).reshape(shape)
        return cls(data.copy())


def lift(image, stack: CakeWaveletStack) -> OrientationScore:
    """Correlate the image with every oriented wavelet via the frequency domain."""
    pixels = image.pixels if isinstance(image, RasterImage) else np.asarray(image, dtype=float)
    if pixels.ndim != 2:
        raise ValueError("lift needs a single-channel image; convert RGB by luma first")
    margin = stack.spatial_size // 2
    padded = np.pad(pixels, margin, mode="symmetric")
    response = stack.frequency_response(padded.shape)
    # the response is real, so correlation's conjugate is a no-op here
    spectrum = np.fft.fft2(padded)[None, :, :] * response
    scored = np.fft.ifft2(spectrum, axes=(1, 2))
    h, w = pixels.shape
    return OrientationScore(scored[:, margin:margin + h, margin:margin + w])


def project(score: OrientationScore) -> RasterImage:
    """Collapse the orientation axis: sum of real parts, rescaled to [0, 1]."""
    total = score.data.real.sum(axis=0)
    lo, hi = total.min(), total.max()
    if hi - lo < 1e-30:
        return RasterImage(np.zeros_like(total))
    return RasterImage((total - lo) / (hi - lo))


class OrientationScoreTransform:
    """Estimator-style wrapper so pipelines can hold lift parameters."""

    def __init__(self, n_orientations: int = 16, spatial_size: int = 65,
                 inflection_point: float = 0.8, taper_order: int = 8,
                 dc_radius: float = 0.003):
        self.n_orientations = n_orientations
        self.spatial_size = spatial_size
        self.inflection_point = inflection_point
        self.taper_order = taper_order
        self.dc_radius = dc_radius
        self._stack = None

    def get_params(self, deep: bool = True) -> dict:
        return {"n_orientations": self.n_orientations, "spatial_size": self.spatial_size,
                "inflection_point": self.inflection_point, "taper_order": self.taper_order,
                "dc_radius": self.dc_radius}

    def set_params(self, **params) -> "OrientationScoreTransform":
        for key, value in params.items():
            if key not in self.get_params():
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        self._stack = None
        return self

    def fit(self, X=None, y=None) -> "OrientationScoreTransform":
        self._stack = self._build()
        return self

    def transform(self, image) -> OrientationScore:
        if self._stack is None:
            self._stack = self._build()
        return lift(image, self._stack)

    def _build(self) -> CakeWaveletStack:
        params = FrequencyParams(self.inflection_point, self.taper_order, self.dc_radius)
        return build_cake_wavelets(self.n_orientations, self.spatial_size, params)
