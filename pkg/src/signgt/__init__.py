"""SignGT: a graph Transformer with signed self-attention and a structure-aware FFN."""

from .autodiff import Tape, Tensor, backward, grad_check, tensor_new
from .data import GraphDataset, NodeDataset, generate_csbm, load_graph_dataset, load_node_dataset
from .estimator import SignGTGraphClassifier, SignGTNodeClassifier, StructuralBiasTransformer
from .graph import Graph, Split, StructuralBias, adjacency_power, homophily, normalize_adjacency, stratified_split
from .model import ModelConfig, SignGTModel, model_forward
from .training import RunHistory, TrainConfig, evaluate, fit

__all__ = [
    "Graph",
    "GraphDataset",
    "ModelConfig",
    "NodeDataset",
    "RunHistory",
    "SignGTGraphClassifier",
    "SignGTModel",
    "SignGTNodeClassifier",
    "Split",
    "StructuralBias",
    "StructuralBiasTransformer",
    "Tape",
    "Tensor",
    "TrainConfig",
    "adjacency_power",
    "backward",
    "evaluate",
    "fit",
    "generate_csbm",
    "grad_check",
    "homophily",
    "load_graph_dataset",
    "load_node_dataset",
    "model_forward",
    "normalize_adjacency",
    "stratified_split",
    "tensor_new",
]
