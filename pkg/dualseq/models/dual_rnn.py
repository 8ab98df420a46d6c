"""
Dual recurrent classifier

Clinician visits and patient answers are embedded by their own input nets and
run through their own recurrent cells. The clinician cell starts from a learned
initial state; the patient outputs optionally pass through windowed attention.
At every visit the clinician output is concatenated with the transformed output
of the most recent answer (zeros when there is none) and the static covariates,
and a small classifier gives the per-visit probability.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from dualseq.data.records import PatientRecord, align_visits, elapsed_channel
from dualseq.errors import CohortValidationError, ConfigurationError, DimensionError
from dualseq.nn.attention import AttentionBlock, AttentionTrace, attend_sequence, attend_sequence_backward
from dualseq.nn.core import (
    DenseLayer,
    ParamVector,
    dropout_apply,
    l2_penalty,
    named_arrays,
    stack_backward,
    stack_forward,
    with_arrays,
)
from dualseq.nn.recurrent import (
    InitialStateNet,
    RnnCell,
    initial_state,
    initial_state_backward,
    rnn_backward,
    rnn_forward,
)
from dualseq.settings import ModelConfig

logger = logging.getLogger(__name__)

# probabilities are clipped to [EPS, 1 - EPS] before the logarithms
EPS = 1e-7

BRANCHES: Dict[str, Tuple[str, ...]] = {
    "clinician": ("input_net_c", "cell_c", "init_net"),
    "patient": ("input_net_p", "cell_p", "attn"),
}


@dataclass(frozen=True, eq=False)
class InputNet:
    """Per-event embedding: tanh layers (nonlinear mode) or one linear layer"""

    layers: Tuple[DenseLayer, ...]

    @property
    def in_width(self) -> int:
        return self.layers[0].in_width

    @property
    def out_width(self) -> int:
        return self.layers[-1].out_width

    @classmethod
    def init(
        cls, in_width: int, widths: Sequence[int], mode: str, rng: np.random.Generator, name: str
    ) -> "InputNet":
        if mode == "linear":
            return cls((DenseLayer.init(in_width, widths[-1], "linear", rng, name=f"{name}.0"),))
        if mode != "nonlinear":
            raise ConfigurationError(f"unknown input mode '{mode}'")
        layers = []
        previous = in_width
        for i, width in enumerate(widths):
            layers.append(DenseLayer.init(previous, width, "tanh", rng, name=f"{name}.{i}"))
            previous = width
        return cls(tuple(layers))


@dataclass(frozen=True, eq=False)
class Classifier:
    """Hidden tanh layer followed by a single sigmoid unit"""

    layers: Tuple[DenseLayer, DenseLayer]

    def __post_init__(self) -> None:
        if len(self.layers) != 2 or self.layers[1].out_width != 1 or self.layers[1].activation != "sigmoid":
            raise DimensionError("classifier is one hidden layer plus a single sigmoid unit")

    @property
    def in_width(self) -> int:
        return self.layers[0].in_width

    @classmethod
    def init(cls, in_width: int, hidden: int, rng: np.random.Generator) -> "Classifier":
        return cls(
            (
                DenseLayer.init(in_width, hidden, "tanh", rng, name="classifier.0"),
                DenseLayer.init(hidden, 1, "sigmoid", rng, name="classifier.1"),
            )
        )


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Every trainable piece of the dual classifier plus its architecture"""

    config: ModelConfig
    input_net_c: InputNet
    input_net_p: InputNet
    cell_c: RnnCell
    cell_p: RnnCell
    init_net: InitialStateNet
    classifier: Classifier
    attn: Optional[AttentionBlock] = None
    ablated: FrozenSet[str] = frozenset()

    def __post_init__(self) -> None:
        cfg = self.config
        if self.input_net_c.in_width != cfg.k_c or self.input_net_p.in_width != cfg.k_p:
            raise DimensionError("input nets do not match the feature widths")
        if self.cell_c.in_width != cfg.rnn_input_width or self.cell_p.in_width != cfg.rnn_input_width:
            raise DimensionError(f"recurrent cells expect input width {cfg.rnn_input_width}")
        if self.init_net.out_width != self.cell_c.hidden_width:
            raise DimensionError("initial-state net output must match the clinician hidden width")
        if self.init_net.in_width != self.input_net_c.out_width + 2:
            raise DimensionError("initial-state net input is [embedded first visit ; sex ; age]")
        if self.attn is not None and self.attn.width != self.cell_p.out_width:
            raise DimensionError("attention block width must equal the patient output width")
        if self.classifier.in_width != self.cell_c.out_width + self.cell_p.out_width + 2:
            raise DimensionError("classifier input must be [clinician output ; patient output ; sex ; age]")
        unknown = set(self.ablated) - set(BRANCHES)
        if unknown:
            raise ConfigurationError(f"unknown branches {sorted(unknown)}")

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        """Glorot-uniform weights and zero biases drawn from rng in a fixed order"""
        input_net_c = InputNet.init(cfg.k_c, cfg.input_hidden, cfg.input_mode, rng, "input_net_c")
        input_net_p = InputNet.init(cfg.k_p, cfg.input_hidden, cfg.input_mode, rng, "input_net_p")
        cell_c = RnnCell.init(cfg.rnn_input_width, cfg.hidden_c, cfg.output_c, rng, name="cell_c")
        cell_p = RnnCell.init(cfg.rnn_input_width, cfg.hidden_p, cfg.output_p, rng, name="cell_p")
        init_net = InitialStateNet.init(cfg.embed_width + 2, cfg.init_hidden, cfg.hidden_c, rng)
        attn = AttentionBlock.init(cfg.output_p, cfg.window, rng) if cfg.attention else None
        classifier = Classifier.init(cfg.merged_width, cfg.classifier_hidden, rng)
        return cls(cfg, input_net_c, input_net_p, cell_c, cell_p, init_net, classifier, attn)

    def to_vector(self) -> ParamVector:
        return ParamVector.from_module(self)

    def with_vector(self, params: ParamVector) -> "ModelParams":
        return with_arrays(self, params.arrays())

    def trainable_mask(self) -> np.ndarray:
        """Scalars that training may update (everything outside ablated branches)"""
        frozen = tuple(f"{prefix}." for branch in self.ablated for prefix in BRANCHES[branch])
        return self.to_vector().mask(lambda name: not name.startswith(frozen))


def ablate(model: ModelParams, branch: str) -> ModelParams:
    """
    Zero and freeze one branch; its slot in the merged vector becomes zeros

    Args:
        model: Model to copy
        branch: "clinician" or "patient"
    """
    if branch not in BRANCHES:
        raise ConfigurationError(f"unknown branch '{branch}', expected one of {sorted(BRANCHES)}")
    prefixes = tuple(f"{p}." for p in BRANCHES[branch])
    zeros = {name: np.zeros_like(a) for name, a in named_arrays(model).items() if name.startswith(prefixes)}
    return dataclasses.replace(with_arrays(model, zeros), ablated=model.ablated | {branch})


class RecordTrace(NamedTuple):
    """Forward intermediates of one record, consumed by the backward pass"""

    record: PatientRecord
    emb_c_inputs: Tuple[np.ndarray, ...]
    rnn_in_c: np.ndarray
    z0: np.ndarray
    h0_c: np.ndarray
    states_c: np.ndarray
    emb_p_inputs: Tuple[np.ndarray, ...]
    rnn_in_p: np.ndarray
    states_p: np.ndarray
    outputs_p: np.ndarray
    attn: Optional[AttentionTrace]
    slot_index: np.ndarray
    merged: np.ndarray
    mask: np.ndarray
    dropout_scale: np.ndarray
    classifier_inputs: Tuple[np.ndarray, ...]
    probs: np.ndarray


def _rnn_inputs(cfg: ModelConfig, embedded: np.ndarray, times: np.ndarray) -> np.ndarray:
    if not cfg.elapsed_time:
        return embedded
    return np.hstack([embedded, elapsed_channel(times)[:, None]])


def _embed(net: InputNet, x: np.ndarray) -> Tuple[np.ndarray, Tuple[np.ndarray, ...]]:
    if x.shape[0] == 0:
        return np.zeros((0, net.out_width)), ()
    return stack_forward(net.layers, x)


def forward_record(
    model: ModelParams,
    record: PatientRecord,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    dropout: float = 0.0,
    mask: Optional[np.ndarray] = None,
) -> RecordTrace:
    """
    Per-visit probabilities of one record plus everything backward needs

    Args:
        model: Model parameters
        record: A valid record
        training: Apply dropout to the merged vectors
        rng: Dropout stream (required when training with dropout and no mask)
        dropout: Drop probability at the classifier input
        mask: Frozen binary dropout mask (T_c x merged width) to reuse instead of sampling

    Returns:
        RecordTrace whose probs field holds the per-visit probabilities
    """
    cfg = model.config
    n_visits = record.n_visits
    if n_visits == 0:
        raise CohortValidationError(f"record {record.id} has no visits")
    x_c = record.visit_features
    x_p = record.answer_features.reshape(record.n_answers, cfg.k_p) if record.n_answers else np.zeros((0, cfg.k_p))
    if x_c.shape[1] != cfg.k_c:
        raise CohortValidationError(f"record {record.id}: visit width {x_c.shape[1]} != {cfg.k_c}")
    static = record.static.as_vector(cfg.age_mean, cfg.age_std)

    out_c, out_p = model.cell_c.out_width, model.cell_p.out_width
    empty = np.zeros((0, 0))

    # clinician branch
    if "clinician" in model.ablated:
        emb_c_inputs: Tuple[np.ndarray, ...] = ()
        rnn_in_c, z0, h0_c, states_c = empty, np.zeros(0), np.zeros(0), empty
        outputs_c = np.zeros((n_visits, out_c))
    else:
        emb_c, emb_c_inputs = _embed(model.input_net_c, x_c)
        rnn_in_c = _rnn_inputs(cfg, emb_c, record.visit_times)
        z0 = np.concatenate([emb_c[0], static])
        h0_c = initial_state(model.init_net, emb_c[0], static)
        states_c, outputs_c = rnn_forward(model.cell_c, rnn_in_c, h0_c)

    # patient branch
    slot_index = align_visits(record.answer_times, record.visit_times)
    attn_trace: Optional[AttentionTrace] = None
    if "patient" in model.ablated or record.n_answers == 0:
        emb_p_inputs: Tuple[np.ndarray, ...] = ()
        rnn_in_p, states_p, outputs_p = empty, empty, np.zeros((0, out_p))
        slot = np.zeros((n_visits, out_p))
        if "patient" in model.ablated:
            slot_index = np.full(n_visits, -1)
    else:
        emb_p, emb_p_inputs = _embed(model.input_net_p, x_p)
        rnn_in_p = _rnn_inputs(cfg, emb_p, record.answer_times)
        states_p, outputs_p = rnn_forward(model.cell_p, rnn_in_p, np.zeros(model.cell_p.hidden_width))
        features_p = outputs_p
        if model.attn is not None:
            attn_trace = attend_sequence(model.attn, outputs_p)
            features_p = attn_trace.o_star
        slot = np.where((slot_index >= 0)[:, None], features_p[np.maximum(slot_index, 0)], 0.0)

    merged = np.hstack([outputs_c, slot, np.broadcast_to(static, (n_visits, 2))])
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != merged.shape:
            raise DimensionError(f"dropout mask shape {mask.shape} != merged shape {merged.shape}")
        dropout_scale = mask / (1.0 - dropout) if training and dropout > 0 else np.ones_like(merged)
        dropped = merged * dropout_scale
    else:
        if training and dropout > 0 and rng is None:
            raise ConfigurationError("training with dropout needs a random generator")
        dropped, mask = dropout_apply(merged, dropout, rng, training)  # type: ignore[arg-type]
        dropout_scale = mask / (1.0 - dropout) if training and dropout > 0 else np.ones_like(merged)

    probs, classifier_inputs = stack_forward(model.classifier.layers, dropped)
    return RecordTrace(
        record=record,
        emb_c_inputs=emb_c_inputs,
        rnn_in_c=rnn_in_c,
        z0=z0,
        h0_c=h0_c,
        states_c=states_c,
        emb_p_inputs=emb_p_inputs,
        rnn_in_p=rnn_in_p,
        states_p=states_p,
        outputs_p=outputs_p,
        attn=attn_trace,
        slot_index=slot_index,
        merged=merged,
        mask=mask,
        dropout_scale=dropout_scale,
        classifier_inputs=classifier_inputs,
        probs=probs[:, 0],
    )


def predict_record(model: ModelParams, record: PatientRecord) -> np.ndarray:
    """Per-visit probabilities at inference (no dropout)"""
    return forward_record(model, record).probs


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Replicated-target cross entropy of one record, weighted by 1 / T_c"""
    p = np.clip(probs, EPS, 1.0 - EPS)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)) / p.shape[0])


def _forward_batch(
    model: ModelParams,
    batch: Sequence[PatientRecord],
    training: bool,
    rng: Optional[np.random.Generator],
    dropout: float,
    masks: Optional[Sequence[np.ndarray]],
) -> List[RecordTrace]:
    if not batch:
        raise ConfigurationError("loss of an empty batch is undefined")
    if masks is not None and len(masks) != len(batch):
        raise DimensionError(f"{len(masks)} dropout masks for {len(batch)} records")
    return [
        forward_record(model, record, training, rng, dropout, None if masks is None else masks[i])
        for i, record in enumerate(batch)
    ]


def loss(
    model: ModelParams,
    batch: Sequence[PatientRecord],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    dropout: float = 0.0,
    l2: float = 0.0,
    masks: Optional[Sequence[np.ndarray]] = None,
) -> float:
    """Sum over records of the 1/T_c-weighted cross entropy, plus the L2 penalty"""
    traces = _forward_batch(model, batch, training, rng, dropout, masks)
    data_term = sum(cross_entropy(t.probs, t.record.labels) for t in traces)
    penalty, _ = l2_penalty(model.to_vector(), lam=l2)
    return data_term + penalty


def _record_grads(model: ModelParams, trace: RecordTrace) -> Dict[str, np.ndarray]:
    grads: Dict[str, np.ndarray] = {}

    def collect(prefix: str, named: Dict[str, np.ndarray]) -> None:
        for name, g in named.items():
            grads[f"{prefix}.{name}"] = g

    probs = trace.probs
    labels = trace.record.labels.astype(np.float64)
    inside = (probs > EPS) & (probs < 1.0 - EPS)
    d_probs = np.where(inside, -(labels / probs - (1.0 - labels) / (1.0 - probs)), 0.0) / probs.shape[0]

    cls_grads, d_dropped = stack_backward(model.classifier.layers, trace.classifier_inputs, d_probs[:, None])
    collect("classifier", cls_grads)
    d_merged = d_dropped * trace.dropout_scale
    out_c, out_p = model.cell_c.out_width, model.cell_p.out_width
    d_out_c = d_merged[:, :out_c]
    d_slot = d_merged[:, out_c : out_c + out_p]

    if "patient" not in model.ablated and trace.outputs_p.shape[0] > 0:
        valid = trace.slot_index >= 0
        d_features = np.zeros_like(trace.outputs_p)
        np.add.at(d_features, trace.slot_index[valid], d_slot[valid])
        d_outputs_p = d_features
        if model.attn is not None and trace.attn is not None:
            attn_grads, d_outputs_p = attend_sequence_backward(model.attn, trace.outputs_p, trace.attn, d_features)
            collect("attn", attn_grads)
        cell_grads, d_rnn_in_p, _ = rnn_backward(
            model.cell_p, trace.rnn_in_p, np.zeros(model.cell_p.hidden_width), trace.states_p, d_outputs_p
        )
        collect("cell_p", cell_grads)
        d_emb_p = d_rnn_in_p[:, : model.input_net_p.out_width]
        net_grads, _ = stack_backward(model.input_net_p.layers, trace.emb_p_inputs, d_emb_p)
        collect("input_net_p", net_grads)

    if "clinician" not in model.ablated:
        cell_grads, d_rnn_in_c, d_h0 = rnn_backward(model.cell_c, trace.rnn_in_c, trace.h0_c, trace.states_c, d_out_c)
        collect("cell_c", cell_grads)
        init_grads, d_z = initial_state_backward(model.init_net, trace.z0, d_h0)
        collect("init_net", init_grads)
        embed_width = model.input_net_c.out_width
        d_emb_c = d_rnn_in_c[:, :embed_width].copy()
        d_emb_c[0] += d_z[:embed_width]
        net_grads, _ = stack_backward(model.input_net_c.layers, trace.emb_c_inputs, d_emb_c)
        collect("input_net_c", net_grads)
    return grads


def backward(model: ModelParams, traces: Sequence[RecordTrace], l2: float = 0.0) -> ParamVector:
    """
    Exact gradient of `loss` for the batch the traces came from (dropout masks frozen)

    Returns:
        ParamVector in the model's layout; ablated branches get exact zeros
    """
    total: Dict[str, np.ndarray] = {}
    for trace in traces:
        for name, g in _record_grads(model, trace).items():
            total[name] = total[name] + g if name in total else g
    params = model.to_vector()
    grad = params.like(total)
    _, l2_grad = l2_penalty(params, lam=l2)
    return grad.with_values(grad.values + l2_grad.values)


def loss_and_grad(
    model: ModelParams,
    batch: Sequence[PatientRecord],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    dropout: float = 0.0,
    l2: float = 0.0,
    masks: Optional[Sequence[np.ndarray]] = None,
) -> Tuple[float, ParamVector, List[RecordTrace]]:
    """One forward and backward pass over a batch; returns (loss, gradient, traces)"""
    traces = _forward_batch(model, batch, training, rng, dropout, masks)
    params = model.to_vector()
    penalty, _ = l2_penalty(params, lam=l2)
    value = sum(cross_entropy(t.probs, t.record.labels) for t in traces) + penalty
    return value, backward(model, traces, l2), traces


def merged_vectors(model: ModelParams, record: PatientRecord) -> np.ndarray:
    """[o_c ; patient slot ; sex ; age] per visit at inference"""
    return forward_record(model, record).merged
