"""Optimization loop: normalization, scheduled sampling, Adam, early stopping.

The objective for one sequence is the squared error summed over every
predicted step, warm-up included:

    sum_{t=1}^{tau+T-1} ||u_t - hat-u_t||^2

averaged over the sequences in a batch.  During training the input frame for
t >= tau is the ground truth with probability `teacher_prob` (an inverse
sigmoid schedule in the epoch index), otherwise the model's own previous
prediction; validation always runs closed loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, adam_step, backward
from .datagen import SequenceDataset
from .errors import ConfigError, DataError, DivergenceError
from .evaluation import mae
from .model import UmtnModel


@dataclass
class TrainConfig:
    tau: int
    horizon: int
    lr: float = 0.001
    max_epochs: int = 1000
    early_stop_patience: int = 50
    batch_size: Optional[int] = None  # None: min(32, training-split size)
    scheduled_sampling_k: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ConfigError("max_epochs and early_stop_patience must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1 when given")
        if self.scheduled_sampling_k <= 0:
            raise ConfigError("scheduled_sampling_k must be positive")
        if self.tau < 1 or self.horizon < 1:
            raise ConfigError("tau and horizon must be >= 1")

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "horizon": self.horizon,
            "lr": self.lr,
            "max_epochs": self.max_epochs,
            "early_stop_patience": self.early_stop_patience,
            "batch_size": self.batch_size,
            "scheduled_sampling_k": self.scheduled_sampling_k,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


def normalize_dataset(dataset: SequenceDataset) -> SequenceDataset:
    """Shift and scale every split by the raw training split's mean and std."""
    return dataset.normalize()


def denormalize(values: np.ndarray, dataset: SequenceDataset) -> np.ndarray:
    """Invert normalize_dataset's transform using the stored statistics."""
    return dataset.denormalize_values(values)


def scheduled_sampling_prob(epoch: int, k: float = 50.0) -> float:
    """Inverse sigmoid teacher-forcing schedule k / (k + exp(epoch / k))."""
    if epoch < 0 or k <= 0:
        raise ValueError("need epoch >= 0 and k > 0")
    exponent = epoch / k
    if exponent > 700.0:  # exp would overflow; the probability is 0 anyway
        return 0.0
    return k / (k + math.exp(exponent))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float
    teacher_prob: float


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mae: float = math.inf
    stopped_early: bool = False


def sequence_loss(result, targets: np.ndarray) -> Tensor:
    """Graph-linked sum over steps of the squared error against `targets`.

    `targets` holds u_1 .. u_{tau+T-1}; rows before result.loss_start are
    skipped (only relevant for models that need a frame window).
    """
    start = result.loss_start
    preds = ad.concat(result.tensors[start:])  # (n, steps)
    diff = ad.subtract(preds, Tensor(np.ascontiguousarray(targets[start:].T)))
    return ad.sum(ad.multiply(diff, diff))


def validation_mae(model: UmtnModel, dataset: SequenceDataset, split: str = "val") -> float:
    """Closed-loop forecast MAE averaged over a split's sequences."""
    tau = dataset.tau
    horizon = dataset.horizon
    values = dataset.split_values(split)
    if values.shape[0] == 0:
        raise ConfigError(f"{split} split is empty")
    with ad.no_grad():
        feats = model.spatial_feature_tensors()
        scores = []
        for seq in values:
            res = model.rollout(seq[:tau], horizon, feature_tensors=feats)
            scores.append(mae(seq[tau:], res.predictions))
    return float(np.mean(scores))


def train_loop(model: UmtnModel, dataset: SequenceDataset, config: TrainConfig) -> TrainResult:
    """Adam training with scheduled sampling and best-validation checkpointing.

    The dataset is normalized here if it is not already.  On return the
    model's parameters are the ones that achieved the lowest validation MAE.
    """
    if dataset.sites.content_hash() != model.geometry.site_hash:
        raise DataError("dataset sites do not match the model's geometry")
    if dataset.tau != config.tau or dataset.horizon != config.horizon:
        raise ConfigError(
            f"dataset provides tau={dataset.tau}, horizon={dataset.horizon}; "
            f"config asks for tau={config.tau}, horizon={config.horizon}"
        )
    dataset = normalize_dataset(dataset)
    train_idx = dataset.split_indices("train")
    if train_idx.size == 0 or dataset.split_indices("val").size == 0:
        raise ConfigError("training and validation splits must be nonempty")
    batch_size = config.batch_size or min(32, train_idx.size)
    tau, horizon = config.tau, config.horizon
    rng = np.random.default_rng(config.seed)

    result = TrainResult()
    best_params = model.params.snapshot()
    bad_epochs = 0
    for epoch in range(config.max_epochs):
        teacher_prob = scheduled_sampling_prob(epoch, config.scheduled_sampling_k)
        order = rng.permutation(train_idx)
        loss_total = 0.0
        for start in range(0, order.size, batch_size):
            batch = order[start : start + batch_size]
            feats = model.spatial_feature_tensors()
            per_seq = []
            for idx in batch:
                seq = dataset.sequences[idx]
                rollout = model.rollout(
                    seq[:tau],
                    horizon,
                    teacher_values=seq[: tau + horizon - 1],
                    teacher_prob=teacher_prob,
                    rng=rng,
                    record=True,
                    feature_tensors=feats,
                )
                per_seq.append(sequence_loss(rollout, seq[1 : tau + horizon]))
            total = per_seq[0]
            for extra in per_seq[1:]:
                total = ad.add(total, extra)
            loss = ad.multiply(total, 1.0 / len(batch))
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", at_time=epoch)
            loss_total += value * len(batch)
            backward(loss, model.params)
            adam_step(model.params, lr=config.lr)
        train_loss = loss_total / order.size
        val_mae = validation_mae(model, dataset)
        result.history.append(EpochRecord(epoch, train_loss, val_mae, teacher_prob))
        if val_mae < result.best_val_mae:
            result.best_val_mae = val_mae
            result.best_epoch = epoch
            best_params = model.params.snapshot()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.early_stop_patience:
                result.stopped_early = True
                break
    model.params.load_snapshot(best_params)
    return result
