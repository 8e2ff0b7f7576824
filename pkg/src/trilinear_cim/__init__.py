"""Behavioral simulator for attention on double-gate FeFET compute-in-memory arrays."""

__version__ = "0.1.0"

from .attention import (
    AttentionJob,
    HardwareConfig,
    LayerWeights,
    generate_weights,
    ideal_scheme,
    run_encoder_block,
    run_mode,
    run_reference_attention,
)
from .config import ConfigError, ExperimentConfig
from .cost import EnergyParams, build_report, cost_for_job, write_volume
from .crossbar import CrossbarArray, Peripherals, WeightArray
from .device import DeviceParams, FeFETParams, eta_bg, fit_alpha_m
from .quant import QuantScheme, QuantTensor

__all__ = [
    "AttentionJob",
    "ConfigError",
    "CrossbarArray",
    "DeviceParams",
    "EnergyParams",
    "ExperimentConfig",
    "FeFETParams",
    "HardwareConfig",
    "LayerWeights",
    "Peripherals",
    "QuantScheme",
    "QuantTensor",
    "WeightArray",
    "build_report",
    "cost_for_job",
    "eta_bg",
    "fit_alpha_m",
    "generate_weights",
    "ideal_scheme",
    "run_encoder_block",
    "run_mode",
    "run_reference_attention",
    "write_volume",
]
