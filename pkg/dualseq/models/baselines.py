"""
Non-sequential reference models over stacked per-visit features

Each visit becomes [x_c ; most recent x_p (zeros if none) ; sex ; age] and the
sequence structure is ignored. Two learners: L2 logistic regression and a
two-layer tanh network with a sigmoid readout.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from dualseq.data.records import PatientRecord, align_visits
from dualseq.errors import DimensionError, NumericalError
from dualseq.models.dual_rnn import EPS
from dualseq.nn.core import DenseLayer, ParamVector, l2_penalty, stack_backward, stack_forward, with_arrays
from dualseq.settings import CLINICAL_AGE_MEAN, CLINICAL_AGE_STD

logger = logging.getLogger(__name__)

# lr halvings tried before a diverging fit is abandoned
MAX_LR_HALVINGS = 5

M = TypeVar("M")


def stack_features(
    record: PatientRecord, k_p: int, age_mean: float = CLINICAL_AGE_MEAN, age_std: float = CLINICAL_AGE_STD
) -> np.ndarray:
    """(T_c x (k_c + k_p + 2)) stacked visit vectors"""
    slot_index = align_visits(record.answer_times, record.visit_times)
    answers = record.answer_features.reshape(record.n_answers, k_p) if record.n_answers else np.zeros((1, k_p))
    patient = np.where((slot_index >= 0)[:, None], answers[np.maximum(slot_index, 0)], 0.0)
    static = np.broadcast_to(record.static.as_vector(age_mean, age_std), (record.n_visits, 2))
    return np.hstack([record.visit_features, patient, static])


def stack_dataset(
    records: Sequence[PatientRecord], k_p: int, age_mean: float = CLINICAL_AGE_MEAN, age_std: float = CLINICAL_AGE_STD
) -> Tuple[np.ndarray, np.ndarray]:
    """Stacked features and labels of every visit of every record"""
    x = np.vstack([stack_features(r, k_p, age_mean, age_std) for r in records])
    y = np.concatenate([r.labels for r in records]).astype(np.float64)
    return x, y


def _mean_cross_entropy(p: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    """(mean clipped cross entropy, its gradient w.r.t. p)"""
    clipped = np.clip(p, EPS, 1.0 - EPS)
    value = float(-np.mean(y * np.log(clipped) + (1.0 - y) * np.log(1.0 - clipped)))
    inside = (p > EPS) & (p < 1.0 - EPS)
    return value, np.where(inside, -(y / p - (1.0 - y) / (1.0 - p)), 0.0) / p.shape[0]


@dataclass(frozen=True, eq=False)
class LogisticModel:
    weights: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, width: int) -> "LogisticModel":
        return cls(np.zeros(width), np.zeros(1))


def logreg_predict(model: LogisticModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.weights.shape[0]:
        raise DimensionError(f"logistic model expects width {model.weights.shape[0]}, got {x.shape[1]}")
    return stack_forward((DenseLayer(model.weights[None, :], model.bias, "sigmoid", "logreg"),), x)[0][:, 0]


def logreg_loss_and_grad(model: LogisticModel, x: np.ndarray, y: np.ndarray, l2: float) -> Tuple[float, ParamVector]:
    """Mean cross entropy plus l2 * |w|^2"""
    p = logreg_predict(model, x)
    value, d_p = _mean_cross_entropy(p, y)
    d_z = d_p * p * (1.0 - p)
    params = ParamVector.from_module(model)
    penalty, d_penalty = l2_penalty(params, lam=l2)
    grad = params.like({"weights": d_z @ x, "bias": np.array([d_z.sum()])})
    return value + penalty, grad.with_values(grad.values + d_penalty.values)


@dataclass(frozen=True, eq=False)
class FeedForwardNet:
    layers: Tuple[DenseLayer, ...]

    @classmethod
    def init(cls, width: int, hidden: Sequence[int], rng: np.random.Generator) -> "FeedForwardNet":
        layers: List[DenseLayer] = []
        previous = width
        for i, h in enumerate(hidden):
            layers.append(DenseLayer.init(previous, h, "tanh", rng, name=f"ffnn.{i}"))
            previous = h
        layers.append(DenseLayer.init(previous, 1, "sigmoid", rng, name=f"ffnn.{len(hidden)}"))
        return cls(tuple(layers))


def ffnn_predict(model: FeedForwardNet, x: np.ndarray) -> np.ndarray:
    return stack_forward(model.layers, np.atleast_2d(np.asarray(x, dtype=np.float64)))[0][:, 0]


def ffnn_loss_and_grad(model: FeedForwardNet, x: np.ndarray, y: np.ndarray, l2: float) -> Tuple[float, ParamVector]:
    out, inputs = stack_forward(model.layers, x)
    value, d_p = _mean_cross_entropy(out[:, 0], y)
    grads, _ = stack_backward(model.layers, inputs, d_p[:, None])
    params = ParamVector.from_module(model)
    penalty, d_penalty = l2_penalty(params, lam=l2)
    grad = params.like(grads)
    return value + penalty, grad.with_values(grad.values + d_penalty.values)


def _fit(
    init: M,
    loss_and_grad: Callable[[M, np.ndarray, np.ndarray, float], Tuple[float, ParamVector]],
    x: np.ndarray,
    y: np.ndarray,
    l2: float,
    lr: float,
    epochs: int,
    batch_size: int,
    seed: int,
) -> Tuple[M, List[float], float]:
    """Mini-batch gradient descent; restarts with half the rate when the loss stops being finite"""
    if x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise DimensionError(f"{x.shape[0]} rows for {y.shape[0]} labels")
    for _ in range(MAX_LR_HALVINGS + 1):
        rng = np.random.default_rng(seed)
        model, history, diverged = init, [], False
        for _ in range(epochs):
            order = rng.permutation(x.shape[0])
            losses = []
            for start in range(0, x.shape[0], batch_size):
                batch = order[start : start + batch_size]
                value, grad = loss_and_grad(model, x[batch], y[batch], l2)
                if not (np.isfinite(value) and np.all(np.isfinite(grad.values))):
                    diverged = True
                    break
                params = ParamVector.from_module(model)
                model = with_arrays(model, params.with_values(params.values - lr * grad.values).arrays())
                losses.append(value)
            if diverged:
                break
            history.append(float(np.mean(losses)))
        if not diverged:
            return model, history, lr
        logger.warning(f"Baseline fit diverged at lr {lr:g}; retrying with {lr / 2:g}")
        lr /= 2.0
    raise NumericalError(f"baseline fit still diverges after {MAX_LR_HALVINGS} learning-rate halvings")


def logreg_train(
    x: np.ndarray,
    y: np.ndarray,
    l2: float = 0.01,
    lr: float = 0.005,
    epochs: int = 100,
    batch_size: int = 20,
    seed: int = 0,
) -> LogisticModel:
    """
    L2 logistic regression from zero weights

    Args:
        x: (n x d) stacked visit features
        y: Binary labels
        l2: Penalty factor on the weights (bias excluded)
        lr: Learning rate, halved on divergence
        epochs: Passes over the data
        batch_size: Rows per update
        seed: Shuffling seed
    """
    init = LogisticModel.zeros(x.shape[1])
    model, history, _ = _fit(init, logreg_loss_and_grad, x, y, l2, lr, epochs, batch_size, seed)
    if history:
        logger.debug(f"Logistic regression loss {history[0]:.4f} -> {history[-1]:.4f}")
    return model


def ffnn_train(
    x: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    hidden: Sequence[int] = (10, 20),
    l2: float = 0.01,
    lr: float = 0.005,
    epochs: int = 100,
    batch_size: int = 20,
    init: Optional[FeedForwardNet] = None,
) -> FeedForwardNet:
    """Two tanh layers (10, 20) and a sigmoid unit trained like logreg_train"""
    start = init if init is not None else FeedForwardNet.init(x.shape[1], hidden, rng)
    seed = int(rng.integers(0, 2**63 - 1))
    model, history, _ = _fit(start, ffnn_loss_and_grad, x, y, l2, lr, epochs, batch_size, seed)
    if history:
        logger.debug(f"Feed-forward baseline loss {history[0]:.4f} -> {history[-1]:.4f}")
    return model
