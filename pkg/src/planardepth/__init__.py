"""Guided depth upsampling with a planarity-preserving MRF regularizer.

Estimates a dense per-pixel depth image from sparse range observations,
guided by a co-registered camera image.  The energy couples each pixel to
its observations (depth and point-to-plane residuals) and to its
4-neighbors through a collinearity term that is exactly zero on planar
surfaces, with feature-driven weights, mesh-based initialization and
covariance-based confidence filtering.
"""

from .confidence import ConfidenceField, estimate_variances, filter_depths
from .errors import ConfigurationError, EvaluationError, NumericalError
from .features import (FeatureImage, NormalSet, WeightField, WeightFunction,
                       estimate_normals, semantic_certainty)
from .geometry import (CameraModel, DepthField, ImageGrid, RayField,
                       build_ray_field, point_from_depth, project_point)
from .problem import ObservationSet, ProblemConfig, ResidualGraph, assemble
from .solver import SolveReport, SolverConfig, evaluate, solve
from .upsampler import DepthUpsampler, upsample_field

__version__ = "0.1.0"

__all__ = [
    "CameraModel", "ConfidenceField", "ConfigurationError", "DepthField",
    "DepthUpsampler", "EvaluationError", "FeatureImage", "ImageGrid",
    "NormalSet", "NumericalError", "ObservationSet", "ProblemConfig",
    "RayField", "ResidualGraph", "SolveReport", "SolverConfig",
    "WeightField", "WeightFunction", "assemble", "build_ray_field",
    "estimate_normals", "estimate_variances", "evaluate", "filter_depths",
    "point_from_depth", "project_point", "semantic_certainty", "solve",
    "upsample_field",
]
