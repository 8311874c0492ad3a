"""Memorizing generators, their ReLU compilation and the adversarial checks around them."""

__version__ = "0.1.0"

from .compiler import CompileReport, compile_generator
from .config import ExperimentConfig, load_config
from .distributions import CleanImageModel, DimensionSpec
from .generator import MemorizingGenerator, build_generator, generate
from .partition import BlockPartition, compute_thresholds

__all__ = [
    "BlockPartition",
    "CleanImageModel",
    "CompileReport",
    "DimensionSpec",
    "ExperimentConfig",
    "MemorizingGenerator",
    "__version__",
    "build_generator",
    "compile_generator",
    "compute_thresholds",
    "generate",
    "load_config",
]
