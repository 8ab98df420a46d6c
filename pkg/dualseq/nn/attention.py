"""
Windowed attention over the previous L outputs of the patient RNN

For patient index j the memory Y holds [o_{j-L} ... o_{j-1}] as columns, left
padded with zero columns when fewer than L outputs exist:

    M = tanh(W_Y Y + (W_o o_j) 1^T)
    alpha = softmax(w^T M)
    r = Y alpha^T
    o*_j = tanh(W_r r + W_x o_j)

The sequence-level functions evaluate every index at once on a (T x k x L)
memory tensor; the single-index functions are the one-row case.
"""

from dataclasses import dataclass
from typing import Dict, NamedTuple, Tuple

import numpy as np

from dualseq.errors import DimensionError
from dualseq.nn.core import activate, glorot_uniform


@dataclass(frozen=True, eq=False)
class AttentionBlock:
    w_y: np.ndarray
    w_o: np.ndarray
    w: np.ndarray
    w_r: np.ndarray
    w_x: np.ndarray
    window: int = 1

    def __post_init__(self) -> None:
        k = self.w.shape[0]
        if self.w.ndim != 1:
            raise DimensionError("attention: score vector w must be a vector")
        for name in ("w_y", "w_o", "w_r", "w_x"):
            if getattr(self, name).shape != (k, k):
                raise DimensionError(f"attention: {name} must be {k}x{k}")
        if self.window < 1:
            raise DimensionError(f"attention: window must be at least 1, got {self.window}")

    @property
    def width(self) -> int:
        return self.w.shape[0]

    @classmethod
    def init(cls, width: int, window: int, rng: np.random.Generator) -> "AttentionBlock":
        def square() -> np.ndarray:
            return glorot_uniform(rng, (width, width), width, width)

        return cls(
            w_y=square(),
            w_o=square(),
            w=glorot_uniform(rng, (width,), width, 1),
            w_r=square(),
            w_x=square(),
            window=window,
        )


class AttentionTrace(NamedTuple):
    """Forward intermediates of attend_sequence, all indexed by patient position n"""

    memory: np.ndarray  # (n, k, L)
    m: np.ndarray  # (n, k, L)
    alpha: np.ndarray  # (n, L)
    r: np.ndarray  # (n, k)
    o_star: np.ndarray  # (n, k)


def window_memories(outputs: np.ndarray, window: int) -> np.ndarray:
    """Memory matrices of every index: (T x k x L), column l of entry j is o_{j-L+l} or zeros"""
    outputs = np.asarray(outputs, dtype=np.float64)
    n_steps, width = outputs.shape
    padded = np.vstack([np.zeros((window, width)), outputs])
    memories = np.empty((n_steps, width, window))
    for col in range(window):
        memories[:, :, col] = padded[col : col + n_steps]
    return memories


def window_memory(outputs: np.ndarray, j: int, window: int) -> np.ndarray:
    """(k x L) memory of index j"""
    outputs = np.asarray(outputs, dtype=np.float64)
    if not 0 <= j < outputs.shape[0]:
        raise DimensionError(f"attention: index {j} outside a sequence of {outputs.shape[0]} outputs")
    memory = np.zeros((outputs.shape[1], window))
    for col in range(window):
        source = j - window + col
        if source >= 0:
            memory[:, col] = outputs[source]
    return memory


def _check(block: AttentionBlock, memory: np.ndarray, current: np.ndarray) -> None:
    n, k = current.shape
    if k != block.width:
        raise DimensionError(f"attention: outputs have width {k}, block expects {block.width}")
    if memory.shape != (n, k, block.window):
        raise DimensionError(f"attention: memory shape {memory.shape} != {(n, k, block.window)}")


def _scores(block: AttentionBlock, memory: np.ndarray, current: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    u = np.einsum("ab,nbl->nal", block.w_y, memory) + (current @ block.w_o.T)[:, :, None]
    m = np.tanh(u)
    alpha = activate("softmax", np.einsum("a,nal->nl", block.w, m))
    return m, alpha


def _apply(
    block: AttentionBlock, memory: np.ndarray, alpha: np.ndarray, current: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    r = np.einsum("nal,nl->na", memory, alpha)
    return r, np.tanh(r @ block.w_r.T + current @ block.w_x.T)


def attend_sequence(block: AttentionBlock, outputs: np.ndarray) -> AttentionTrace:
    """Transformed output o*_j for every patient index of one sequence"""
    outputs = np.asarray(outputs, dtype=np.float64)
    memory = window_memories(outputs, block.window)
    _check(block, memory, outputs)
    m, alpha = _scores(block, memory, outputs)
    r, o_star = _apply(block, memory, alpha, outputs)
    return AttentionTrace(memory, m, alpha, r, o_star)


def _backward(
    block: AttentionBlock, current: np.ndarray, trace: AttentionTrace, d_o_star: np.ndarray
) -> Tuple[Dict[str, np.ndarray], np.ndarray, np.ndarray]:
    memory, m, alpha, r, o_star = trace
    dz = d_o_star * (1.0 - o_star * o_star)
    grads = {"w_r": dz.T @ r, "w_x": dz.T @ current}
    d_r = dz @ block.w_r
    d_current = dz @ block.w_x

    d_memory = np.einsum("na,nl->nal", d_r, alpha)
    d_alpha = np.einsum("nal,na->nl", memory, d_r)
    d_s = alpha * (d_alpha - np.sum(alpha * d_alpha, axis=-1, keepdims=True))
    grads["w"] = np.einsum("nal,nl->a", m, d_s)
    d_u = np.einsum("a,nl->nal", block.w, d_s) * (1.0 - m * m)
    grads["w_y"] = np.einsum("nal,nbl->ab", d_u, memory)
    d_memory += np.einsum("ab,nal->nbl", block.w_y, d_u)
    d_u_sum = d_u.sum(axis=2)
    grads["w_o"] = d_u_sum.T @ current
    d_current += d_u_sum @ block.w_o
    return grads, d_memory, d_current


def attend_sequence_backward(
    block: AttentionBlock, outputs: np.ndarray, trace: AttentionTrace, d_o_star: np.ndarray
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """
    Reverse pass of attend_sequence

    Returns:
        (grads keyed by block field, gradient w.r.t. the patient outputs); memory
        gradients are scattered back onto the outputs they were copied from
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    d_o_star = np.asarray(d_o_star, dtype=np.float64)
    if d_o_star.shape != outputs.shape:
        raise DimensionError(f"attention: gradient shape {d_o_star.shape} != outputs {outputs.shape}")
    grads, d_memory, d_outputs = _backward(block, outputs, trace, d_o_star)
    n_steps = outputs.shape[0]
    d_padded = np.zeros((n_steps + block.window, outputs.shape[1]))
    for col in range(block.window):
        d_padded[col : col + n_steps] += d_memory[:, :, col]
    return grads, d_outputs + d_padded[block.window :]


def _single(block: AttentionBlock, memory: np.ndarray, o_j: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    memory = np.asarray(memory, dtype=np.float64)[None]
    current = np.asarray(o_j, dtype=np.float64)[None]
    if current.ndim != 2:
        raise DimensionError("attention: current output must be a vector")
    _check(block, memory, current)
    return memory, current


def attention_scores(block: AttentionBlock, memory: np.ndarray, o_j: np.ndarray) -> np.ndarray:
    """alpha over the L memory columns of one index"""
    memory, current = _single(block, memory, o_j)
    _, alpha = _scores(block, memory, current)
    return alpha[0]


def attention_apply(block: AttentionBlock, memory: np.ndarray, alpha: np.ndarray, o_j: np.ndarray) -> np.ndarray:
    """o*_j from a memory, its weights and the current output"""
    memory, current = _single(block, memory, o_j)
    alpha = np.asarray(alpha, dtype=np.float64).reshape(1, -1)
    if alpha.shape[1] != block.window:
        raise DimensionError(f"attention: {alpha.shape[1]} weights for a window of {block.window}")
    _, o_star = _apply(block, memory, alpha, current)
    return o_star[0]


def attention_backward(
    block: AttentionBlock, memory: np.ndarray, o_j: np.ndarray, d_o_star: np.ndarray
) -> Tuple[Dict[str, np.ndarray], np.ndarray, np.ndarray]:
    """
    Gradients of one index

    Returns:
        (grads for w_y, w_o, w, w_r, w_x; d_memory (k x L); d_o_j)
    """
    memory, current = _single(block, memory, o_j)
    d_o_star = np.asarray(d_o_star, dtype=np.float64).reshape(1, -1)
    if d_o_star.shape != current.shape:
        raise DimensionError(f"attention: gradient width {d_o_star.shape[1]} != {block.width}")
    m, alpha = _scores(block, memory, current)
    r, o_star = _apply(block, memory, alpha, current)
    grads, d_memory, d_current = _backward(block, current, AttentionTrace(memory, m, alpha, r, o_star), d_o_star)
    return grads, d_memory[0], d_current[0]
