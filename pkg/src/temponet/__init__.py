"""Overlapping community and lifetime detection in dynamic networks via symmetric CP models."""

from .clustering import ClusterRecord, detect_clusters
from .cp import CpModel, GenerativeModel, core_consistency, cp_als, normalize_components
from .evaluation import MetricsReport, evaluate, mapping_distance
from .lifetime import PiecewiseRate, detect_lifetime, fit_rate
from .pipeline import PipelineConfig, run_pipeline
from .synth import SynthSpec, generate
from .tensor import DynTensor, EdgeEvent, aggregate_granularity, from_edge_events

__version__ = "0.1.0"

__all__ = [
    "ClusterRecord", "CpModel", "DynTensor", "EdgeEvent", "GenerativeModel", "MetricsReport",
    "PipelineConfig", "PiecewiseRate", "SynthSpec", "aggregate_granularity", "core_consistency",
    "cp_als", "detect_clusters", "detect_lifetime", "evaluate", "fit_rate", "from_edge_events",
    "generate", "mapping_distance", "normalize_components", "run_pipeline",
]
