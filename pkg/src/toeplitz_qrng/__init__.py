"""Laser-phase-noise QRNG data path in software.

Source simulation, min-entropy budgeting, pipelined Toeplitz-hashing
extraction, interferometer stabilisation and randomness checks.
"""

__version__ = "0.1.0"

from .bits import DEFAULT_KEEP_MASK, BitBlock, select_sample_bits, xor_accumulate
from .entropy import EntropyModel, compute_budget, leftover_hash_m, min_entropy_gaussian, sigma_q
from .estimators import SampleBitSelector, ToeplitzExtractor
from .pipeline import PipelineConfig, PipelineError, load_config, run_pipeline, serve
from .randtests import autocorrelation, run_suite
from .source import SimConfig, simulate_phase, simulate_raw
from .stabilization import PidConfig, PlantState, pid_step, run_loop
from .toeplitz import (
    PipelinedExtractor,
    ToeplitzParams,
    build_matrix,
    extract_dense,
    extract_pipelined,
    extract_stream,
)

__all__ = [
    "DEFAULT_KEEP_MASK",
    "BitBlock",
    "EntropyModel",
    "PidConfig",
    "PipelineConfig",
    "PipelineError",
    "PlantState",
    "SimConfig",
    "PipelinedExtractor",
    "SampleBitSelector",
    "ToeplitzExtractor",
    "ToeplitzParams",
    "autocorrelation",
    "build_matrix",
    "compute_budget",
    "extract_dense",
    "extract_pipelined",
    "extract_stream",
    "leftover_hash_m",
    "load_config",
    "min_entropy_gaussian",
    "pid_step",
    "run_loop",
    "run_pipeline",
    "run_suite",
    "select_sample_bits",
    "serve",
    "sigma_q",
    "simulate_phase",
    "simulate_raw",
    "xor_accumulate",
]
