"""Boolean logic-gate networks on toroidal pixel fields.

Relaxed (differentiable) training, exact discretization to gate circuits,
and word-parallel packed execution.
"""
from .attention import AttentionConfig
from .errors import ConfigError, PBMParseError, TrainingDiverged, UsageError
from .estimator import BoolFieldEstimator
from .kernel import HardCircuit, KernelCircuit, build_kernel
from .manifold import Neighborhood, PositionCode, TorusGrid
from .modelfile import load_model, save_model
from .network import (HARD, SOFT, NetworkParams, build_network, harden_network,
                      network_forward, soften_network)
from .packed import benchmark, pack, packed_network_forward, unpack
from .training import Dataset, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig", "BoolFieldEstimator", "ConfigError", "Dataset", "HARD", "HardCircuit",
    "KernelCircuit", "Neighborhood", "NetworkParams", "PBMParseError", "PositionCode", "SOFT",
    "TorusGrid", "TrainConfig", "TrainingDiverged", "UsageError", "benchmark", "build_kernel",
    "build_network", "evaluate", "harden_network", "load_model", "network_forward", "pack",
    "packed_network_forward", "save_model", "soften_network", "train", "unpack",
]
