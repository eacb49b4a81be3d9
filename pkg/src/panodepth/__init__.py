"""panodepth: training-free panoramic depth from multi-view reconstruction.

A single equirectangular panorama is sliced into perspective views chosen
by gradient-derived uncertainty, handed to a pluggable multi-view
reconstructor (analytic oracle or imported bundle), and fused back into a
panoramic depth map with attention-derived correlation weights.
"""

from .errors import (BundleError, ConfigError, DegenerateInputError,
                     InvalidInputError, PanodepthError)
from .geometry import (ErpImage, ViewSet, ViewSpec, coverage_fraction,
                       dir_to_erp_pixel, erp_pixel_to_dir, extract_view,
                       view_pixel_to_dir)
from .planner import (PlannerConfig, UncertaintyMap, ViewScore, base_rig,
                      plan_views, score_view, uncertainty_map)
from .confidence import (AttentionTensor, ConfidenceMap,
                         biased_softmax_attention, confidence_map, edge_band,
                         gradient_prior)
from .fusion import (CorrelationWeights, FusedErpDepth, PointMapObservation,
                     combine_weights, fuse_to_erp, locality, sharpness,
                     symmetry)
from .backend import (ReconstructorRequest, ReconstructorResponse,
                      SyntheticScene, export_bundle, import_reconstruction,
                      oracle_reconstruct, render_erp_groundtruth)
from .metrics import DepthMetrics, align_median, compute_metrics
from .pipeline import PipelineConfig, RunResult, run_ablation, run_pipeline
from .kernels import kernel_backend

__version__ = "0.1.0"

__all__ = [
    "AttentionTensor", "BundleError", "ConfidenceMap", "ConfigError",
    "CorrelationWeights", "DegenerateInputError", "DepthMetrics", "ErpImage",
    "FusedErpDepth", "InvalidInputError", "PanodepthError",
    "PipelineConfig", "PlannerConfig", "PointMapObservation",
    "ReconstructorRequest", "ReconstructorResponse", "RunResult",
    "SyntheticScene", "UncertaintyMap", "ViewScore", "ViewSet", "ViewSpec",
    "align_median", "base_rig", "biased_softmax_attention", "combine_weights",
    "compute_metrics", "confidence_map", "coverage_fraction",
    "dir_to_erp_pixel", "edge_band", "erp_pixel_to_dir", "export_bundle",
    "extract_view", "fuse_to_erp", "gradient_prior", "import_reconstruction",
    "kernel_backend", "locality", "oracle_reconstruct", "plan_views",
    "render_erp_groundtruth", "run_ablation", "run_pipeline", "score_view",
    "sharpness", "symmetry", "uncertainty_map", "view_pixel_to_dir",
]
