"""Object-aware image stitching.

Seams are chosen by a multi-label MRF that, besides the usual data and
photometric terms, penalizes cropping detected objects, keeping two copies
of the same object, and showing image content that no input sees cleanly.
"""

from .core import OCCLUDED, DetectedObject, PointMatchSet, Raster
from .config import StitchConfig, load_config
from .correspondence import DensityConfig, ObjectMatchSet, build_equivalence
from .energy import EnergyModel, EnergyParams, EnergyTerms, total_energy
from .registration import Homography, MeshWarp, RansacConfig, estimate_homography, register
from .solver import alpha_expansion, brute_force_minimize, qpbo_solve
from .blending import poisson_blend, render_occlusion
from .evaluation import count_report, ms_ssim
from .pipeline import StitchResult, evaluate, stitch

__version__ = "0.1.0"

__all__ = [
    "OCCLUDED", "DetectedObject", "PointMatchSet", "Raster",
    "StitchConfig", "load_config",
    "DensityConfig", "ObjectMatchSet", "build_equivalence",
    "EnergyModel", "EnergyParams", "EnergyTerms", "total_energy",
    "Homography", "MeshWarp", "RansacConfig", "estimate_homography", "register",
    "alpha_expansion", "brute_force_minimize", "qpbo_solve",
    "poisson_blend", "render_occlusion",
    "count_report", "ms_ssim",
    "StitchResult", "evaluate", "stitch",
]
