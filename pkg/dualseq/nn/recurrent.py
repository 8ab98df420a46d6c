"""
Basic recurrent cell, full-sequence forward pass, backpropagation through time
and the network that learns the clinician RNN's initial state
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np

from dualseq.data.records import StaticInfo
from dualseq.errors import DimensionError, NumericalError
from dualseq.nn.core import (
    DenseLayer,
    activate,
    activation_backward,
    glorot_uniform,
    stack_backward,
    stack_forward,
)


@dataclass(frozen=True, eq=False)
class RnnCell:
    """h_i = tanh(W_hx x_i + W_hh h_{i-1} + b_h);  o_i = softmax(W_yh h_i + b_y)"""

    w_hx: np.ndarray
    w_hh: np.ndarray
    b_h: np.ndarray
    w_yh: np.ndarray
    b_y: np.ndarray
    name: str = "rnn"

    def __post_init__(self) -> None:
        h = self.b_h.shape[0]
        if self.w_hx.ndim != 2 or self.w_hx.shape[0] != h:
            raise DimensionError(f"{self.name}: w_hx must have {h} rows")
        if self.w_hh.shape != (h, h):
            raise DimensionError(f"{self.name}: w_hh must be {h}x{h}")
        if self.w_yh.ndim != 2 or self.w_yh.shape[1] != h or self.w_yh.shape[0] != self.b_y.shape[0]:
            raise DimensionError(f"{self.name}: w_yh/b_y inconsistent with hidden width {h}")

    @property
    def in_width(self) -> int:
        return self.w_hx.shape[1]

    @property
    def hidden_width(self) -> int:
        return self.b_h.shape[0]

    @property
    def out_width(self) -> int:
        return self.b_y.shape[0]

    @classmethod
    def init(cls, in_width: int, hidden: int, out: int, rng: np.random.Generator, name: str = "rnn") -> "RnnCell":
        return cls(
            w_hx=glorot_uniform(rng, (hidden, in_width), in_width, hidden),
            w_hh=glorot_uniform(rng, (hidden, hidden), hidden, hidden),
            b_h=np.zeros(hidden),
            w_yh=glorot_uniform(rng, (out, hidden), hidden, out),
            b_y=np.zeros(out),
            name=name,
        )


def _check_vector(cell: RnnCell, v: np.ndarray, width: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1:] != (width,):
        raise DimensionError(f"{cell.name}: {what} must have width {width}, got shape {v.shape}")
    return v


def rnn_step(cell: RnnCell, x: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    """One step of the recursion"""
    x = _check_vector(cell, x, cell.in_width, "input")
    h_prev = _check_vector(cell, h_prev, cell.hidden_width, "previous state")
    return activate("tanh", cell.w_hx @ x + cell.w_hh @ h_prev + cell.b_h)


def rnn_output(cell: RnnCell, h: np.ndarray) -> np.ndarray:
    """Softmax readout of a state (or of every row of a state matrix)"""
    h = _check_vector(cell, h, cell.hidden_width, "state")
    return activate("softmax", h @ cell.w_yh.T + cell.b_y)


def rnn_forward(cell: RnnCell, xs: np.ndarray, h0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Run the cell over a whole sequence

    Args:
        cell: Recurrent cell
        xs: (T x in) inputs; T may be 0
        h0: Initial state

    Returns:
        (states, outputs) of shapes (T x h) and (T x out)
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        return np.zeros((0, cell.hidden_width)), np.zeros((0, cell.out_width))
    xs = _check_vector(cell, xs, cell.in_width, "inputs")
    if xs.ndim != 2:
        raise DimensionError(f"{cell.name}: inputs must be a (T x {cell.in_width}) matrix")
    h = _check_vector(cell, h0, cell.hidden_width, "initial state")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(h))):
        raise NumericalError(f"{cell.name}: non-finite inputs or initial state")
    # input projections do not depend on the recursion
    projected = xs @ cell.w_hx.T + cell.b_h
    states = np.empty((xs.shape[0], cell.hidden_width))
    for t in range(xs.shape[0]):
        h = np.tanh(projected[t] + cell.w_hh @ h)
        states[t] = h
    return states, rnn_output(cell, states)


def rnn_backward(
    cell: RnnCell,
    xs: np.ndarray,
    h0: np.ndarray,
    states: np.ndarray,
    d_outputs: np.ndarray,
    d_states_extra: Optional[np.ndarray] = None,
) -> Tuple[Dict[str, np.ndarray], np.ndarray, np.ndarray]:
    """
    Backpropagation through time

    Args:
        cell: Cell used in the forward pass
        xs: Forward inputs (T x in)
        h0: Forward initial state
        states: Forward states (T x h)
        d_outputs: Loss gradient w.r.t. the outputs (T x out)
        d_states_extra: Optional direct loss gradient w.r.t. the states (T x h)

    Returns:
        (grads keyed by cell field, d_xs, d_h0)
    """
    states = np.asarray(states, dtype=np.float64)
    n_steps = states.shape[0]
    xs = np.asarray(xs, dtype=np.float64)
    if n_steps == 0:
        xs = xs.reshape(0, cell.in_width)
    d_outputs = np.asarray(d_outputs, dtype=np.float64)
    if xs.shape != (n_steps, cell.in_width):
        raise DimensionError(f"{cell.name}: inputs {xs.shape} do not match {n_steps} states")
    if n_steps and d_outputs.shape != (n_steps, cell.out_width):
        raise DimensionError(f"{cell.name}: output gradient {d_outputs.shape} does not match {n_steps} steps")
    if d_states_extra is not None and np.shape(d_states_extra) != (n_steps, cell.hidden_width):
        raise DimensionError(f"{cell.name}: state gradient {np.shape(d_states_extra)} does not match states")

    grads = {
        "w_hx": np.zeros_like(cell.w_hx),
        "w_hh": np.zeros_like(cell.w_hh),
        "b_h": np.zeros_like(cell.b_h),
        "w_yh": np.zeros_like(cell.w_yh),
        "b_y": np.zeros_like(cell.b_y),
    }
    if n_steps == 0:
        return grads, np.zeros((0, cell.in_width)), np.zeros(cell.hidden_width)

    h0 = _check_vector(cell, h0, cell.hidden_width, "initial state")
    outputs = rnn_output(cell, states)
    dz_y = activation_backward("softmax", outputs, d_outputs)
    grads["w_yh"] = dz_y.T @ states
    grads["b_y"] = dz_y.sum(axis=0)
    d_states = dz_y @ cell.w_yh
    if d_states_extra is not None:
        d_states = d_states + d_states_extra

    d_pre = np.empty_like(states)
    carry = np.zeros(cell.hidden_width)
    for t in reversed(range(n_steps)):
        d_pre[t] = (d_states[t] + carry) * (1.0 - states[t] * states[t])
        carry = cell.w_hh.T @ d_pre[t]

    previous = np.vstack([h0[None, :], states[:-1]])
    grads["w_hx"] = d_pre.T @ xs
    grads["w_hh"] = d_pre.T @ previous
    grads["b_h"] = d_pre.sum(axis=0)
    return grads, d_pre @ cell.w_hx, carry


@dataclass(frozen=True, eq=False)
class InitialStateNet:
    """Two tanh layers mapping [embedded first visit ; static] to the clinician h0"""

    layers: Tuple[DenseLayer, ...]

    def __post_init__(self) -> None:
        if len(self.layers) != 2:
            raise DimensionError("initial-state net has exactly two layers")
        if self.layers[0].out_width != self.layers[1].in_width:
            raise DimensionError("initial-state net layer widths do not chain")

    @property
    def in_width(self) -> int:
        return self.layers[0].in_width

    @property
    def out_width(self) -> int:
        return self.layers[1].out_width

    @classmethod
    def init(cls, in_width: int, hidden: int, out: int, rng: np.random.Generator) -> "InitialStateNet":
        return cls(
            (
                DenseLayer.init(in_width, hidden, "tanh", rng, name="init_net.0"),
                DenseLayer.init(hidden, out, "tanh", rng, name="init_net.1"),
            )
        )


def _initial_state_input(
    net: InitialStateNet, x_c_embedded_first: np.ndarray, static: Union[StaticInfo, np.ndarray]
) -> np.ndarray:
    static_vec = static.as_vector() if isinstance(static, StaticInfo) else np.asarray(static, dtype=np.float64)
    z = np.concatenate([np.asarray(x_c_embedded_first, dtype=np.float64), static_vec])
    if z.shape != (net.in_width,):
        raise DimensionError(f"initial-state net expects width {net.in_width}, got {z.shape[0]}")
    return z


def initial_state(
    net: InitialStateNet, x_c_embedded_first: np.ndarray, static: Union[StaticInfo, np.ndarray]
) -> np.ndarray:
    """
    Learned clinician h0

    Args:
        net: Initial-state network
        x_c_embedded_first: Input-net embedding of the first visit
        static: StaticInfo (normalised with the default age statistics) or an
            already normalised [sex, age] vector
    """
    z = _initial_state_input(net, x_c_embedded_first, static)
    h0, _ = stack_forward(net.layers, z)
    return h0


def initial_state_backward(
    net: InitialStateNet, z: np.ndarray, d_h0: np.ndarray
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Gradients of the initial-state net at input z = [embedded first visit ; static]"""
    _, inputs = stack_forward(net.layers, z)
    return stack_backward(net.layers, inputs, d_h0)
