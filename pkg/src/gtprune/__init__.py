"""Pruning toolkit for graph transformers on a small numpy autodiff engine."""

from .config import RunConfig
from .model import GraphTransformer, ModelConfig, PruneState
from .train import train

__all__ = ["GraphTransformer", "ModelConfig", "PruneState", "RunConfig", "train"]
__version__ = "0.1.0"
