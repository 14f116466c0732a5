"""Relational dynamic memory networks on numpy, with synthetic graph tasks."""

from .autodiff import Parameter, Tape, Tensor
from .graphs import (
    AttributedGraph,
    DatasetInstance,
    DatasetSchema,
    Edge,
    load_dataset,
    normalize_adjacency,
    save_dataset,
    split_dataset,
)
from .model import EpisodeTrace, ModelConfig, RDMN, load_model, save_model
from .tasks import TaskSpec, generate, oracle_label
from .training import EvalReport, TrainConfig, evaluate, nll_loss, train

__version__ = "0.1.0"
