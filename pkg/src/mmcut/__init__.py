"""Graph-cut segmentation of known-shape objects with a kernel-density shape prior.

The posterior energy (Laplace intensity likelihoods plus the negative log of
a weighted sum of template kernels) is minimized by majorization-
minimization: each step is an exact min-cut of a submodular surrogate.
"""

from .alignment import AlignmentEnergy, AlignmentReport, align, energy_gradient, energy_hessian, moment_init
from .exceptions import (
    DegenerateShape,
    EmptyRegion,
    EmptyShape,
    InsufficientTemplates,
    MMCutError,
    NonFiniteEnergy,
    NonFiniteWeight,
    UnsupportedFormat,
)
from .graphcut import CutResult, FlowNetwork, build_network, check_submodularity, max_flow, max_flow_reference
from .imaging import load_image, load_mask, sample_field, save_mask, signed_distance
from .intensity import LaplaceParams, neg_log_likelihood
from .intensity import fit as fit_intensity
from .segmenter import MMGraphCutSegmenter, SegmenterConfig, segment, surrogate_energy, total_energy
from .shape_energy import decompose_energy, shape_energy
from .shape_prior import TemplateEntry, TemplateSet, compute_bandwidth, kernel_value, mm_weights
from .transforms import RigidTransform

__version__ = "0.1.0"

__all__ = [
    "AlignmentEnergy",
    "AlignmentReport",
    "CutResult",
    "DegenerateShape",
    "EmptyRegion",
    "EmptyShape",
    "FlowNetwork",
    "InsufficientTemplates",
    "LaplaceParams",
    "MMCutError",
    "MMGraphCutSegmenter",
    "NonFiniteEnergy",
    "NonFiniteWeight",
    "RigidTransform",
    "SegmenterConfig",
    "TemplateEntry",
    "TemplateSet",
    "UnsupportedFormat",
    "align",
    "build_network",
    "check_submodularity",
    "compute_bandwidth",
    "decompose_energy",
    "energy_gradient",
    "energy_hessian",
    "fit_intensity",
    "kernel_value",
    "load_image",
    "load_mask",
    "max_flow",
    "max_flow_reference",
    "mm_weights",
    "moment_init",
    "neg_log_likelihood",
    "sample_field",
    "save_mask",
    "segment",
    "shape_energy",
    "signed_distance",
    "surrogate_energy",
    "total_energy",
]
