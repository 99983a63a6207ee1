"""djlab: diffusion-jump graph neural networks with exact spectral oracles,
propagation baselines and an SBM experiment harness."""

__version__ = "0.1.0"

from .graph import Graph, GraphError, SplitMasks, dirichlet_energy, homophily_stats, laplacian, normalized_operators
from .model import ModelConfig, evaluate, train
from .pump import PumpConfig, train_pump
from .spectral import commute_time_matrix, structural_heterophily

__all__ = [
    "Graph", "GraphError", "SplitMasks", "dirichlet_energy", "homophily_stats", "laplacian",
    "normalized_operators", "ModelConfig", "evaluate", "train", "PumpConfig", "train_pump",
    "commute_time_matrix", "structural_heterophily",
]
