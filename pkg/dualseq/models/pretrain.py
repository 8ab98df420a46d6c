"""
Separate pretraining of the input networks

Each input net gets a temporary sigmoid readout and is trained to predict the
visit label straight from single events, ignoring time. Clinician visits use
their own label; a patient answer uses the label of the first visit at or after
it, and answers after the last visit are dropped. Readouts are discarded.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from dualseq.data.records import PatientRecord
from dualseq.errors import CohortValidationError, NumericalError
from dualseq.models.dual_rnn import EPS, InputNet, ModelParams
from dualseq.nn.core import DenseLayer, ParamVector, stack_backward, stack_forward, with_arrays
from dualseq.settings import PretrainConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class _ReadoutStack:
    """Input net layers followed by the temporary readout"""

    layers: Tuple[DenseLayer, ...]


class PretrainResult(NamedTuple):
    net: InputNet
    readout: DenseLayer
    history: List[float]


def clinician_events(records: Sequence[PatientRecord]) -> Tuple[np.ndarray, np.ndarray]:
    """Every visit as (features, own label)"""
    if not records:
        return np.zeros((0, 0)), np.zeros(0)
    return np.vstack([r.visit_features for r in records]), np.concatenate([r.labels for r in records]).astype(float)


def patient_events(records: Sequence[PatientRecord], k_p: int) -> Tuple[np.ndarray, np.ndarray]:
    """Every answer followed by a visit, labelled with that next visit's label"""
    xs, ys = [], []
    for r in records:
        if not r.n_answers:
            continue
        following = np.searchsorted(r.visit_times, r.answer_times, side="left")
        keep = following < r.n_visits
        xs.append(r.answer_features.reshape(r.n_answers, k_p)[keep])
        ys.append(r.labels[following[keep]].astype(float))
    if not xs:
        return np.zeros((0, k_p)), np.zeros(0)
    return np.vstack(xs), np.concatenate(ys)


def _stack_loss_and_grad(stack: _ReadoutStack, x: np.ndarray, y: np.ndarray) -> Tuple[float, ParamVector]:
    out, inputs = stack_forward(stack.layers, x)
    p = out[:, 0]
    clipped = np.clip(p, EPS, 1.0 - EPS)
    value = float(-np.mean(y * np.log(clipped) + (1.0 - y) * np.log(1.0 - clipped)))
    inside = (p > EPS) & (p < 1.0 - EPS)
    d_p = np.where(inside, -(y / p - (1.0 - y) / (1.0 - p)), 0.0) / p.shape[0]
    grads, _ = stack_backward(stack.layers, inputs, d_p[:, None])
    return value, ParamVector.from_module(stack).like(grads)


def pretrain_net(
    net: InputNet, x: np.ndarray, y: np.ndarray, cfg: PretrainConfig, rng: np.random.Generator
) -> PretrainResult:
    """
    Train one input net through a temporary sigmoid readout

    Args:
        net: Net to start from
        x: (n x k) events
        y: Binary targets
        cfg: Epochs, learning rate and batch size
        rng: Stream for the readout initialisation and the shuffling

    Returns:
        Trained net, its readout and the mean loss per epoch
    """
    if x.shape[0] == 0:
        raise CohortValidationError("no labelled events to pretrain on")
    readout = DenseLayer.init(net.out_width, 1, "sigmoid", rng, name="readout")
    stack = _ReadoutStack(net.layers + (readout,))
    history: List[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(x.shape[0])
        losses = []
        for start in range(0, x.shape[0], cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            value, grad = _stack_loss_and_grad(stack, x[batch], y[batch])
            if not np.isfinite(value):
                raise NumericalError(f"pretraining diverged in epoch {epoch + 1}")
            params = ParamVector.from_module(stack)
            stack = with_arrays(stack, params.with_values(params.values - cfg.lr * grad.values).arrays())
            losses.append(value)
        history.append(float(np.mean(losses)))
    if history:
        logger.debug(f"Pretraining loss {history[0]:.4f} -> {history[-1]:.4f} over {len(history)} epochs")
    return PretrainResult(InputNet(stack.layers[:-1]), stack.layers[-1], history)


def readout_accuracy(result: PretrainResult, x: np.ndarray, y: np.ndarray) -> float:
    """Accuracy of net + readout at threshold 0.5"""
    out, _ = stack_forward(result.net.layers + (result.readout,), x)
    return float(np.mean((out[:, 0] >= 0.5) == (y >= 0.5)))


def pretrain_input_nets(
    model: ModelParams, records: Sequence[PatientRecord], cfg: PretrainConfig, rng: np.random.Generator
) -> ModelParams:
    """
    Copy of the model with both input nets pretrained

    The linear input variant is trained jointly only, so it is returned unchanged.

    Raises:
        CohortValidationError: no visits to learn from
    """
    if model.config.input_mode == "linear":
        logger.warning("Linear input nets are trained jointly; skipping pretraining")
        return model
    x_c, y_c = clinician_events(records)
    if x_c.shape[0] == 0:
        raise CohortValidationError("cohort has no labelled visits to pretrain on")
    clinician_rng, patient_rng = rng.spawn(2)
    net_c = pretrain_net(model.input_net_c, x_c, y_c, cfg, clinician_rng).net

    net_p = model.input_net_p
    x_p, y_p = patient_events(records, model.config.k_p)
    if x_p.shape[0]:
        net_p = pretrain_net(model.input_net_p, x_p, y_p, cfg, patient_rng).net
    else:
        logger.warning("No patient answer precedes a visit; patient input net keeps its initialisation")
    logger.info(f"Pretrained input nets on {x_c.shape[0]} visits and {x_p.shape[0]} answers")
    return dataclasses.replace(model, input_net_c=net_c, input_net_p=net_p)
