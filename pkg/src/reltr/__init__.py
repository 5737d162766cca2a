"""Relation transformer for scene graph generation, built on a small numpy autodiff core."""

__version__ = "0.1.0"

from .dataset import DatasetFile, Node, SceneSample, load_dataset, save_dataset, split_dataset
from .evaluation import EvalReport, evaluate, predict, recall_at_k
from .model import PREDCLS, SGCLS, ModelConfig, RelationTransformer, load_checkpoint, save_checkpoint
from .synthetic import SyntheticConfig, generate_synthetic
from .train import TrainConfig, train

__all__ = [
    "DatasetFile", "EvalReport", "ModelConfig", "Node", "PREDCLS", "RelationTransformer", "SGCLS",
    "SceneSample", "SyntheticConfig", "TrainConfig", "evaluate", "generate_synthetic", "load_checkpoint",
    "load_dataset", "predict", "recall_at_k", "save_checkpoint", "save_dataset", "split_dataset", "train",
]
