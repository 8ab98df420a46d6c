"""
Numeric kernel - dense layers, activations, dropout, L2 penalty and gradient checking

Everything runs in float64. Parameterised objects are frozen dataclasses whose
array fields are discovered by `named_arrays`, so any of them can be flattened
into a `ParamVector` for optimisation, regularisation and gradient checks.
"""

import dataclasses
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Callable, Dict, Literal, Mapping, Tuple, TypeVar, get_args

import numpy as np
from scipy.special import expit
from scipy.special import softmax as _softmax

from dualseq.errors import ConfigurationError, DimensionError, NumericalError

logger = logging.getLogger(__name__)

Activation = Literal["tanh", "sigmoid", "softmax", "relu", "linear"]
ACTIVATIONS = frozenset(get_args(Activation))

# Array field names that hold biases; everything else is a weight for L2
BIAS_NAMES = frozenset({"bias", "b_h", "b_y"})

T = TypeVar("T")


def is_weight_name(name: str) -> bool:
    """True for weight matrices/vectors, False for biases"""
    return name.rsplit(".", 1)[-1] not in BIAS_NAMES


def activate(kind: str, v: np.ndarray) -> np.ndarray:
    """
    Apply an activation elementwise (softmax along the last axis)

    Args:
        kind: One of tanh, sigmoid, softmax, relu, linear
        v: Finite input vector or row-stacked matrix

    Returns:
        Activated copy of v
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"non-finite input to {kind} activation")
    if kind == "tanh":
        return np.tanh(v)
    if kind == "sigmoid":
        return expit(v)
    if kind == "softmax":
        # scipy subtracts the row maximum before exponentiating
        return _softmax(v, axis=-1)
    if kind == "relu":
        return np.maximum(v, 0.0)
    if kind == "linear":
        return v.copy()
    raise ConfigurationError(f"unknown activation '{kind}'")


def activation_backward(kind: str, y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the pre-activation given the activation output y"""
    if kind == "tanh":
        return dy * (1.0 - y * y)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    if kind == "softmax":
        return y * (dy - np.sum(dy * y, axis=-1, keepdims=True))
    if kind == "relu":
        return dy * (y > 0.0)
    if kind == "linear":
        return dy
    raise ConfigurationError(f"unknown activation '{kind}'")


def glorot_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform draw in +-sqrt(6 / (fan_in + fan_out))"""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass(frozen=True, eq=False)
class DenseLayer:
    """Affine map followed by a fixed activation; weights are (out x in)"""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "tanh"
    name: str = "dense"

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"{self.name}: unknown activation '{self.activation}'")
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise DimensionError(f"{self.name}: weights must be a matrix and bias a vector")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise DimensionError(
                f"{self.name}: {self.weights.shape[0]} weight rows but bias of length {self.bias.shape[0]}"
            )

    @property
    def in_width(self) -> int:
        return self.weights.shape[1]

    @property
    def out_width(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def init(
        cls, in_width: int, out_width: int, activation: str, rng: np.random.Generator, name: str = "dense"
    ) -> "DenseLayer":
        weights = glorot_uniform(rng, (out_width, in_width), in_width, out_width)
        return cls(weights, np.zeros(out_width), activation, name)


def _check_width(layer: DenseLayer, x: np.ndarray) -> None:
    if x.ndim not in (1, 2) or x.shape[-1] != layer.in_width:
        raise DimensionError(f"{layer.name}: expected input width {layer.in_width}, got shape {x.shape}")


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """activate(W x + b) for a vector x or for every row of a matrix x"""
    x = np.asarray(x, dtype=np.float64)
    _check_width(layer, x)
    return activate(layer.activation, x @ layer.weights.T + layer.bias)


def dense_backward(layer: DenseLayer, x: np.ndarray, dy: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Reverse-mode gradients of dense_forward

    Args:
        layer: The layer evaluated at x
        x: Input vector or row-stacked matrix
        dy: Upstream gradient, same shape as the layer output

    Returns:
        (dx, dW, db); row gradients are summed into dW and db
    """
    x = np.asarray(x, dtype=np.float64)
    y = dense_forward(layer, x)
    dy = np.asarray(dy, dtype=np.float64)
    if dy.shape != y.shape:
        raise DimensionError(f"{layer.name}: upstream gradient shape {dy.shape} != output shape {y.shape}")
    dz = activation_backward(layer.activation, y, dy)
    if x.ndim == 1:
        return layer.weights.T @ dz, np.outer(dz, x), dz.copy()
    return dz @ layer.weights, dz.T @ x, dz.sum(axis=0)


def dropout_apply(
    v: np.ndarray, p_drop: float, rng: np.random.Generator, training: bool
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Inverted dropout

    Returns:
        (v', mask) where survivors are scaled by 1 / (1 - p_drop); at inference
        v' equals v and the mask is all ones
    """
    if not 0.0 <= p_drop < 1.0:
        raise ConfigurationError(f"dropout probability must lie in [0, 1), got {p_drop}")
    v = np.asarray(v, dtype=np.float64)
    if not training or p_drop == 0.0:
        return v.copy(), np.ones_like(v)
    mask = (rng.random(v.shape) >= p_drop).astype(np.float64)
    return v * mask / (1.0 - p_drop), mask


def named_arrays(obj: Any, prefix: str = "") -> Dict[str, np.ndarray]:
    """
    Collect every array field of a parameter dataclass, recursing into nested
    dataclasses and tuples of dataclasses, in declaration order
    """
    out: Dict[str, np.ndarray] = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if isinstance(value, np.ndarray):
            out[key] = value
        elif dataclasses.is_dataclass(value) and not isinstance(value, type):
            out.update(named_arrays(value, f"{key}."))
        elif isinstance(value, tuple) and value and all(dataclasses.is_dataclass(v) for v in value):
            for i, item in enumerate(value):
                out.update(named_arrays(item, f"{key}.{i}."))
    return out


def with_arrays(obj: T, arrays: Mapping[str, np.ndarray], prefix: str = "") -> T:
    """Copy of a parameter dataclass with the named arrays replaced (others kept)"""
    changes: Dict[str, Any] = {}
    for f in dataclasses.fields(obj):  # type: ignore[arg-type]
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if isinstance(value, np.ndarray):
            if key in arrays:
                new = np.asarray(arrays[key], dtype=np.float64)
                if new.shape != value.shape:
                    raise DimensionError(f"{key}: expected shape {value.shape}, got {new.shape}")
                changes[f.name] = new
        elif dataclasses.is_dataclass(value) and not isinstance(value, type):
            changes[f.name] = with_arrays(value, arrays, f"{key}.")
        elif isinstance(value, tuple) and value and all(dataclasses.is_dataclass(v) for v in value):
            changes[f.name] = tuple(with_arrays(item, arrays, f"{key}.{i}.") for i, item in enumerate(value))
    return dataclasses.replace(obj, **changes)  # type: ignore[type-var]


@dataclass(frozen=True, eq=False)
class ParamVector:
    """
    Flat float64 view of named parameter arrays

    `layout` holds (name, start, stop, shape) per array in a deterministic order,
    so flatten -> unflatten is the identity.
    """

    values: np.ndarray
    layout: Tuple[Tuple[str, int, int, Tuple[int, ...]], ...]

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ParamVector":
        layout = []
        chunks = []
        offset = 0
        for name, arr in arrays.items():
            a = np.asarray(arr, dtype=np.float64)
            layout.append((name, offset, offset + a.size, tuple(a.shape)))
            chunks.append(a.ravel())
            offset += a.size
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, tuple(layout))

    @classmethod
    def from_module(cls, obj: Any) -> "ParamVector":
        return cls.from_arrays(named_arrays(obj))

    @cached_property
    def _index(self) -> Dict[str, Tuple[int, int, Tuple[int, ...]]]:
        return {name: (start, stop, shape) for name, start, stop, shape in self.layout}

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(entry[0] for entry in self.layout)

    def __len__(self) -> int:
        return int(self.values.size)

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def __getitem__(self, name: str) -> np.ndarray:
        start, stop, shape = self._index[name]
        return self.values[start:stop].reshape(shape)

    def arrays(self) -> Dict[str, np.ndarray]:
        """Unflatten into independent arrays"""
        return {name: self.values[start:stop].reshape(shape).copy() for name, start, stop, shape in self.layout}

    def with_values(self, values: np.ndarray) -> "ParamVector":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise DimensionError(f"expected {self.values.size} parameters, got shape {values.shape}")
        return ParamVector(values, self.layout)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros_like(self.values), self.layout)

    def like(self, arrays: Mapping[str, np.ndarray]) -> "ParamVector":
        """Vector with this layout filled from named arrays (absent names are zero)"""
        values = np.zeros_like(self.values)
        for name, arr in arrays.items():
            if name not in self._index:
                raise DimensionError(f"unknown parameter '{name}'")
            start, stop, shape = self._index[name]
            a = np.asarray(arr, dtype=np.float64)
            if a.shape != shape:
                raise DimensionError(f"{name}: expected shape {shape}, got {a.shape}")
            values[start:stop] = a.ravel()
        return ParamVector(values, self.layout)

    def mask(self, predicate: Callable[[str], bool]) -> np.ndarray:
        """Boolean mask over scalars whose array name satisfies predicate"""
        out = np.zeros(self.values.size, dtype=bool)
        for name, start, stop, _ in self.layout:
            if predicate(name):
                out[start:stop] = True
        return out


def l2_penalty(
    params: ParamVector, weight_names: Callable[[str], bool] = is_weight_name, lam: float = 0.01
) -> Tuple[float, ParamVector]:
    """
    lam * sum of squared weights (biases excluded)

    Returns:
        (value, gradient) with gradient 2 * lam * w on weights and 0 elsewhere
    """
    if lam < 0:
        raise ConfigurationError(f"L2 factor must be non-negative, got {lam}")
    w = np.where(params.mask(weight_names), params.values, 0.0)
    return float(lam * np.dot(w, w)), params.with_values(2.0 * lam * w)


def grad_check(
    loss_fn: Callable[[ParamVector], float],
    params: ParamVector,
    analytic: ParamVector,
    eps: float = 1e-5,
) -> float:
    """
    Compare an analytic gradient with central finite differences

    Args:
        loss_fn: Deterministic loss of the parameters (dropout disabled or frozen)
        params: Point at which to check
        analytic: Analytic gradient at params
        eps: Finite-difference step

    Returns:
        max over coordinates of |a - n| / max(|a|, |n|, 1e-8)
    """
    if analytic.values.shape != params.values.shape:
        raise DimensionError("analytic gradient does not match the parameter layout")
    first = loss_fn(params)
    if first != loss_fn(params):
        raise NumericalError("gradient check aborted: loss function is not deterministic")

    theta = params.values
    numeric = np.empty_like(theta)
    for k in range(theta.size):
        shifted = theta.copy()
        shifted[k] = theta[k] + eps
        f_plus = loss_fn(params.with_values(shifted))
        shifted[k] = theta[k] - eps
        f_minus = loss_fn(params.with_values(shifted))
        numeric[k] = (f_plus - f_minus) / (2.0 * eps)

    if theta.size == 0:
        return 0.0
    a = analytic.values
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    rel = np.abs(a - numeric) / denom
    worst = int(np.argmax(rel))
    name = next(n for n, start, stop, _ in params.layout if start <= worst < stop)
    logger.debug(f"Gradient check worst coordinate {worst} ({name}): rel err {rel[worst]:.3e}")
    return float(rel[worst])


def stack_forward(layers: Tuple[DenseLayer, ...], x: np.ndarray) -> Tuple[np.ndarray, Tuple[np.ndarray, ...]]:
    """
    Run dense layers in sequence

    Returns:
        (output, inputs) where inputs[i] is what layer i received
    """
    inputs = []
    out = np.asarray(x, dtype=np.float64)
    for layer in layers:
        inputs.append(out)
        out = dense_forward(layer, out)
    return out, tuple(inputs)


def stack_backward(
    layers: Tuple[DenseLayer, ...], inputs: Tuple[np.ndarray, ...], dy: np.ndarray, prefix: str = "layers"
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """
    Backward pass of stack_forward

    Returns:
        (grads keyed "<prefix>.<i>.weights" / "<prefix>.<i>.bias", gradient w.r.t. the stack input)
    """
    grads: Dict[str, np.ndarray] = {}
    for i in reversed(range(len(layers))):
        dy, dw, db = dense_backward(layers[i], inputs[i], dy)
        grads[f"{prefix}.{i}.weights"] = dw
        grads[f"{prefix}.{i}.bias"] = db
    return grads, dy
