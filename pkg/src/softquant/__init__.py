"""Soft quantization: compressing small neural networks by letting
same-layer weights attract each other during fine-tuning.

Subpackages: nn (network engine), coupling (pair potential and its
histogram fast path), scaling (per-layer parameter derivation),
quantize (clusters, refinement, bit-widths, HEQ baseline), landscape
(perturbation study), harness (pipeline and sweeps), plus checkpoint,
config, data, reports, and cli.
"""

from .config import RunConfig, SweepSpec
from .coupling import (
    CouplingSchedule,
    EffectivePotential,
    TriangularWell,
    WeightHistogram,
)
from .harness import PipelineResult, run_pipeline, soft_quantize, sweep
from .quantize import ClusterMap, QuantizationReport, RefineConfig
from .scaling import CouplingParams, LayerStats, ScalingFit

__all__ = [
    "RunConfig",
    "SweepSpec",
    "TriangularWell",
    "WeightHistogram",
    "EffectivePotential",
    "CouplingSchedule",
    "ClusterMap",
    "QuantizationReport",
    "RefineConfig",
    "CouplingParams",
    "LayerStats",
    "ScalingFit",
    "PipelineResult",
    "run_pipeline",
    "soft_quantize",
    "sweep",
]

__version__ = "0.1.0"
