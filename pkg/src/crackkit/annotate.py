"""One-call crack annotation: geodesic track, width profile, and mask.

This is the composition the CLI and the HTTP service both run; keeping it
in one place makes their outputs bit-identical for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

from .geodesic import CrackTrack, MetricParams, track_crack
from .orientation import build_cake_wavelets
from .raster import BinaryMask, RasterImage
from .widthseg import WidthProfile, extract_widths, rasterize_mask


@dataclass(frozen=True)
class Annotation:
    """Everything the engine produces for one crack."""

    track: CrackTrack
    widths: WidthProfile
    mask: BinaryMask

    def __post_init__(self):
        if len(self.widths) != len(self.track):
            raise ValueError("annotation widths and track must have matching lengths")


def annotate_crack(image, endpoints, params: MetricParams | None = None,
                   stack=None, edge_sigma: float = 2.0, max_width: int = 32) -> Annotation:
    """Track the crack between two endpoints and segment it.

    endpoints is ((x1, y1), (x2, y2)) in pixel coordinates.  params and
    stack default to MetricParams() and the default wavelet stack.
    """
    if not isinstance(image, RasterImage):
        image = RasterImage(image)
    track = track_crack(image, endpoints, params, stack)
    widths = extract_widths(image.luma(), track, sigma=edge_sigma, max_width=max_width)
    mask = rasterize_mask(track, widths, (image.width, image.height))
    return Annotation(track, widths, mask)


class CrackAnnotator:
    """Estimator bundling tracking and width extraction configuration."""

    def __init__(self, xi: float = 1.0, zeta: float = 0.1, lambda_data: float = 0.0,
                 cost_mu: float = 100.0, cost_power: float = 2.0,
                 theta_stiffness: float = 8.0, symmetric: bool = False,
                 n_orientations: int = 16, spatial_size: int = 65,
                 edge_sigma: float = 2.0, max_width: int = 32):
        self.xi = xi
        self.zeta = zeta
        self.lambda_data = lambda_data
        self.cost_mu = cost_mu
        self.cost_power = cost_power
        self.theta_stiffness = theta_stiffness
        self.symmetric = symmetric
        self.n_orientations = n_orientations
        self.spatial_size = spatial_size
        self.edge_sigma = edge_sigma
        self.max_width = max_width
        self._stack = None

    _PARAM_NAMES = ("xi", "zeta", "lambda_data", "cost_mu", "cost_power",
                    "theta_stiffness", "symmetric", "n_orientations", "spatial_size",
                    "edge_sigma", "max_width")

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params) -> "CrackAnnotator":
        for key, value in params.items():
            if key not in self._PARAM_NAMES:
                raise ValueError(f"unknown parameter {key!r} for CrackAnnotator")
            setattr(self, key, value)
        self._stack = None
        return self

    def metric_params(self) -> MetricParams:
        return MetricParams(xi=self.xi, zeta=self.zeta, lambda_data=self.lambda_data,
                            cost_mu=self.cost_mu, cost_power=self.cost_power,
                            theta_stiffness=self.theta_stiffness, symmetric=self.symmetric)

    def fit(self, X=None, y=None) -> "CrackAnnotator":
        self._stack = build_cake_wavelets(self.n_orientations, self.spatial_size)
        return self

    def annotate(self, image, endpoints) -> Annotation:
        if self._stack is None:
            self.fit()
        return annotate_crack(image, endpoints, self.metric_params(), self._stack,
                              edge_sigma=self.edge_sigma, max_width=self.max_width)
