"""Loss, training loop and evaluation."""

from __future__ import annotations

import csv
import os
import time

import numpy as np

from .. import engine as E
from ..errors import ContractError, NonFiniteError
from ..models import Model, build_model, forward
from .checkpoint import Checkpoint, save_checkpoint
from .config import TrainConfig
from .data import Dataset, augment_batch, find_cifar10, load_cifar10, make_blobs
from .optim import make_optimizer

CSV_HEADER = ("epoch", "train_loss", "train_acc", "test_acc", "wall_seconds", "bn_mode")


class TrainingAborted(NonFiniteError):
    """The loss went non-finite; ``checkpoint`` names the last good state (may be None)."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


def cross_entropy(scores, labels):
    """Mean negative log-softmax of the true class, as a single tape node."""
    s = E.data(scores)
    labels = np.asarray(labels)
    if s.ndim != 2 or labels.shape != (s.shape[0],):
        raise ContractError(f"scores {s.shape} and labels {labels.shape} do not match")
    if labels.size and (labels.min() < 0 or labels.max() >= s.shape[1]):
        raise ContractError(f"labels must lie in [0, {s.shape[1]})")
    shifted = s - s.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(labels))
    loss = np.mean(lse - shifted[rows, labels])

    def vjp(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, labels] -= 1.0
        return (g * p / len(labels),)

    return E.apply("cross_entropy", (scores,), np.asarray(loss), (), vjp)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def load_datasets(config: TrainConfig, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    if config.dataset == "synthetic":
        train = make_blobs(config.synthetic_train, rng, size=config.image_size)
        test = make_blobs(config.synthetic_test, rng, size=config.image_size)
        return train, test
    path = find_cifar10(config.data_path)
    if path is None:
        raise FileNotFoundError(
            "CIFAR-10 binary files not found; set data_path or CIFAR10_DIR"
        )
    test_n = config.test_subset if config.test_subset is not None else (
        None if config.subset is None else config.subset // 2)
    return load_cifar10(path, "train", config.subset), load_cifar10(path, "test", test_n)


def evaluate(model: Model, dataset: Dataset, batch_size: int = 128,
             mode: str = "midpoint") -> float:
    """Top-1 accuracy; batch norm uses the statistics of each evaluation batch."""
    if len(dataset) == 0:
        raise ContractError("empty evaluation set")
    correct = 0
    for start in range(0, len(dataset), batch_size):
        images = dataset.images[start:start + batch_size]
        scores = forward(model, images, mode).data
        correct += int(np.sum(scores.argmax(axis=1) == dataset.labels[start:start + batch_size]))
    return correct / len(dataset)


def train_step(model: Model, optimizer, images, labels, mode: str) -> tuple[float, float]:
    tensors = {k: E.Tensor(v, requires_grad=True) for k, v in model.params.items()}
    with E.Tape() as tape:
        scores = forward(model, images, mode, params=tensors)
        loss = cross_entropy(scores, labels)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteError(f"non-finite loss {value}")
    grads = dict(zip(tensors, tape.gradient(loss, list(tensors.values()))))
    optimizer.step(model.params, grads)
    acc = float(np.mean(scores.data.argmax(axis=1) == labels))
    return value, acc


def _format_row(row: dict) -> list:
    return [row["epoch"], f"{row['train_loss']:.10f}", f"{row['train_acc']:.6f}",
            f"{row['test_acc']:.6f}", f"{row['wall_seconds']:.3f}", row["bn_mode"]]


def train(config: TrainConfig, log=None) -> list[dict]:
    """Train from scratch; write ``metrics.csv`` and per-epoch checkpoints to ``out_dir``.

    All randomness (initialization, data order, augmentation, synthetic data)
    comes from one Philox generator seeded by ``config.seed``.
    """
    rng = make_rng(config.seed)
    train_set, test_set = load_datasets(config, rng)
    model = build_model(config.arch, rng)
    model.metadata["loss"] = "cross_entropy"
    optimizer = make_optimizer(config.optimizer, config.lr, config.weight_decay, config.momentum)
    os.makedirs(config.out_dir, exist_ok=True)
    csv_path = os.path.join(config.out_dir, "metrics.csv")
    last_good = None
    history = []
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(len(train_set))
            losses, accs, sizes = [], [], []
            for start in range(0, len(order), config.batch_size):
                idx = order[start:start + config.batch_size]
                if len(idx) < 2:
                    continue
                images = train_set.images[idx]
                if config.augmentation:
                    images = augment_batch(images, rng)
                try:
                    loss, acc = train_step(model, optimizer, images, train_set.labels[idx],
                                           config.bn_mode)
                except NonFiniteError as exc:
                    raise TrainingAborted(
                        f"epoch {epoch}: {exc}; last good checkpoint: {last_good}", last_good
                    ) from exc
                losses.append(loss)
                accs.append(acc)
                sizes.append(len(idx))
            test_acc = evaluate(model, test_set, max(config.batch_size, 2), config.bn_mode)
            row = {
                "epoch": epoch,
                "train_loss": float(np.average(losses, weights=sizes)),
                "train_acc": float(np.average(accs, weights=sizes)),
                "test_acc": test_acc,
                "wall_seconds": time.perf_counter() - t0,
                "bn_mode": config.bn_mode,
            }
            history.append(row)
            writer.writerow(_format_row(row))
            fh.flush()
            if config.checkpoint_every_epoch:
                path = os.path.join(config.out_dir, f"epoch{epoch:03d}.prn")
                opt = {"kind": optimizer.kind, "step": optimizer.step_count,
                       "hyper": optimizer.hyper(), "state": optimizer.state}
                save_checkpoint(Checkpoint(model, epoch, opt, rng.bit_generator.state), path)
                last_good = path
            if log is not None:
                log(row)
    return history
