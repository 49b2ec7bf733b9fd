"""Heterogeneous graph attention fusion for segmentation with missing modalities."""

from .autodiff import Tape, Var
from .hetgat import HetGatConfig, HetGatParams, layer_forward
from .pipeline import ModelConfig, init_params, predict, total_loss
from .topology import GraphSpec, ModalityMask, adjacency_for, build_full_adjacency

__all__ = ["Tape", "Var", "HetGatConfig", "HetGatParams", "layer_forward", "ModelConfig",
           "init_params", "predict", "total_loss", "GraphSpec", "ModalityMask",
           "adjacency_for", "build_full_adjacency"]
__version__ = "0.1.0"
