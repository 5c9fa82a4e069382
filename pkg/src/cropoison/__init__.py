"""Crop-geometry modelling and poisoned-input construction for contrastive
pre-training pipelines."""

from .errors import DomainError, PlacementError, QuadratureError
from .geometry import CropRegion, LayoutKind, PoisonGeometry, Rect, validate

__version__ = "0.1.0"

__all__ = [
    "CropRegion",
    "DomainError",
    "LayoutKind",
    "PlacementError",
    "PoisonGeometry",
    "QuadratureError",
    "Rect",
    "validate",
]
