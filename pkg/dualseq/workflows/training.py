"""
Mini-batch training of the dual recurrent classifier
"""

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Protocol, Sequence

import numpy as np
from tqdm import tqdm

from dualseq.data.records import PatientRecord
from dualseq.errors import ConfigurationError, DimensionError, NumericalError
from dualseq.models.dual_rnn import ModelParams, loss_and_grad
from dualseq.nn.core import ParamVector
from dualseq.settings import TrainConfig

logger = logging.getLogger(__name__)


def _check(params: ParamVector, grads: ParamVector, trainable: Optional[np.ndarray]) -> None:
    if grads.values.shape != params.values.shape:
        raise DimensionError(f"gradient has {grads.values.size} entries, parameters {params.values.size}")
    if trainable is not None and trainable.shape != params.values.shape:
        raise DimensionError("trainable mask does not match the parameters")


def sgd_step(
    params: ParamVector, grads: ParamVector, lr: float, trainable: Optional[np.ndarray] = None
) -> ParamVector:
    """theta - lr * g, leaving entries outside the trainable mask untouched"""
    _check(params, grads, trainable)
    updated = params.values - lr * grads.values
    if trainable is not None:
        updated = np.where(trainable, updated, params.values)
    return params.with_values(updated)


class Optimizer(Protocol):
    def step(self, params: ParamVector, grads: ParamVector, trainable: Optional[np.ndarray] = None) -> ParamVector:
        ...


@dataclass
class SgdOptimizer:
    lr: float

    def step(self, params: ParamVector, grads: ParamVector, trainable: Optional[np.ndarray] = None) -> ParamVector:
        return sgd_step(params, grads, self.lr, trainable)


@dataclass
class AdamOptimizer:
    """Adam with bias-corrected moments; frozen entries keep their value and moments"""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Optional[np.ndarray] = field(default=None, repr=False)
    v: Optional[np.ndarray] = field(default=None, repr=False)

    def step(self, params: ParamVector, grads: ParamVector, trainable: Optional[np.ndarray] = None) -> ParamVector:
        _check(params, grads, trainable)
        if self.m is None or self.v is None:
            self.m = np.zeros_like(params.values)
            self.v = np.zeros_like(params.values)
        g = grads.values if trainable is None else np.where(trainable, grads.values, 0.0)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        updated = params.values - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if trainable is not None:
            updated = np.where(trainable, updated, params.values)
        return params.with_values(updated)


def make_optimizer(cfg: TrainConfig) -> Optimizer:
    if cfg.optimizer == "sgd":
        return SgdOptimizer(cfg.lr)
    if cfg.optimizer == "adam":
        return AdamOptimizer(cfg.lr)
    raise ConfigurationError(f"unknown optimizer '{cfg.optimizer}'")


class TrainResult(NamedTuple):
    model: ModelParams
    history: List[float]


def train(
    model: ModelParams,
    records: Sequence[PatientRecord],
    cfg: TrainConfig,
    rng: np.random.Generator,
    progress: bool = False,
) -> TrainResult:
    """
    Shuffled mini-batch training with dropout and L2

    Args:
        model: Starting parameters (ablated branches stay frozen)
        records: Training patients
        cfg: Learning rate, epochs, batch size, L2 factor, dropout, optimizer
        rng: Parent stream; shuffling and dropout use independent children
        progress: Show a tqdm bar over epochs

    Returns:
        Trained model and the mean batch loss of every epoch

    Raises:
        NumericalError: a batch loss is not finite
    """
    if not records:
        raise ConfigurationError("cannot train on an empty set of patients")
    shuffle_rng, dropout_rng = rng.spawn(2)
    optimizer = make_optimizer(cfg)
    trainable = model.trainable_mask()
    history: List[float] = []

    for epoch in tqdm(range(cfg.epochs), desc="train", unit="epoch", disable=not progress, leave=False):
        order = shuffle_rng.permutation(len(records))
        losses = []
        for start in range(0, len(records), cfg.batch_size):
            batch = [records[i] for i in order[start : start + cfg.batch_size]]
            value, grads, _ = loss_and_grad(
                model, batch, training=True, rng=dropout_rng, dropout=cfg.dropout, l2=cfg.l2
            )
            if not np.isfinite(value) or not np.all(np.isfinite(grads.values)):
                raise NumericalError(f"loss diverged in epoch {epoch + 1} (batch starting at {start})")
            model = model.with_vector(optimizer.step(model.to_vector(), grads, trainable))
            losses.append(value)
        history.append(float(np.mean(losses)))
        if (epoch + 1) % 10 == 0 or epoch == 0:
            logger.info(f"Epoch {epoch + 1}/{cfg.epochs}: loss {history[-1]:.4f}")
    return TrainResult(model, history)
