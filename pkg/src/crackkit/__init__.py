"""Crack segmentation toolkit.

Raster and patch handling, dataset composition, training losses and
schedules, tolerance-aware evaluation, and a geodesic semi-automatic
annotation engine with an HTTP service and CLI on top.
"""

__version__ = "0.1.0"
