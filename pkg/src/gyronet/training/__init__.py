from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config, parse_config
from .data import Dataset, augment, find_cifar10, load_cifar10, make_blobs
from .loop import CSV_HEADER, TrainingAborted, cross_entropy, evaluate, make_rng, train
from .optim import SGD, Adam, make_optimizer

__all__ = [
    "Adam", "CSV_HEADER", "Checkpoint", "Dataset", "SGD", "TrainConfig", "TrainingAborted",
    "augment", "cross_entropy", "evaluate", "find_cifar10", "load_checkpoint", "load_cifar10",
    "load_config", "make_blobs", "make_optimizer", "make_rng", "parse_config",
    "save_checkpoint", "train",
]
