"""
Windowed attention over previous patient outputs
"""

import numpy as np
import pytest

from dualseq.errors import DimensionError
from dualseq.nn.attention import (
    AttentionBlock,
    attend_sequence,
    attend_sequence_backward,
    attention_apply,
    attention_backward,
    attention_scores,
    window_memories,
    window_memory,
)
from dualseq.nn.core import ParamVector, with_arrays

from . import assert_gradient


def _direct(block: AttentionBlock, memory: np.ndarray, o_j: np.ndarray):
    """Straight transcription of the attention equations for one index"""
    m = np.tanh(block.w_y @ memory + np.outer(block.w_o @ o_j, np.ones(memory.shape[1])))
    s = block.w @ m
    alpha = np.exp(s - s.max()) / np.exp(s - s.max()).sum()
    r = memory @ alpha
    return alpha, np.tanh(block.w_r @ r + block.w_x @ o_j)


class TestWindowMemory:
    """Memory construction and zero padding"""

    def test_columns_are_previous_outputs(self, rng):
        outputs = rng.standard_normal((5, 2))
        memory = window_memory(outputs, 3, 2)
        np.testing.assert_array_equal(memory[:, 0], outputs[1])
        np.testing.assert_array_equal(memory[:, 1], outputs[2])

    def test_left_padding_with_zeros(self, rng):
        outputs = rng.standard_normal((5, 2))
        memory = window_memory(outputs, 1, 3)
        np.testing.assert_array_equal(memory[:, :2], 0.0)
        np.testing.assert_array_equal(memory[:, 2], outputs[0])

    def test_all_indices_at_once(self, rng):
        outputs = rng.standard_normal((6, 3))
        memories = window_memories(outputs, 3)
        for j in range(6):
            np.testing.assert_array_equal(memories[j], window_memory(outputs, j, 3))

    def test_index_out_of_range(self, rng):
        with pytest.raises(DimensionError):
            window_memory(rng.standard_normal((3, 2)), 3, 1)


class TestAttentionForward:
    """Scores and transformed outputs"""

    def test_matches_direct_formula(self):
        gen = np.random.default_rng(5)
        for _ in range(100):
            window = int(gen.integers(1, 5))
            block = AttentionBlock.init(3, window, gen)
            memory, o_j = gen.standard_normal((3, window)), gen.standard_normal(3)
            alpha, o_star = _direct(block, memory, o_j)
            np.testing.assert_allclose(attention_scores(block, memory, o_j), alpha, atol=1e-12)
            np.testing.assert_allclose(attention_apply(block, memory, alpha, o_j), o_star, atol=1e-12)

    def test_window_one_reduces_to_previous_output(self, rng):
        block = AttentionBlock.init(3, 1, rng)
        outputs = rng.standard_normal((4, 3))
        trace = attend_sequence(block, outputs)
        assert np.all(trace.alpha == 1.0)
        for j in range(1, 4):
            expected = np.tanh(block.w_r @ outputs[j - 1] + block.w_x @ outputs[j])
            np.testing.assert_allclose(trace.o_star[j], expected, atol=1e-12)

    def test_first_index_reads_only_padding(self, rng):
        block = AttentionBlock.init(3, 2, rng)
        trace = attend_sequence(block, rng.standard_normal((4, 3)))
        assert np.all(trace.r[0] == 0.0)

    def test_sequence_matches_single_index(self, rng):
        block = AttentionBlock.init(2, 3, rng)
        outputs = rng.standard_normal((5, 2))
        trace = attend_sequence(block, outputs)
        for j in range(5):
            memory = window_memory(outputs, j, 3)
            alpha = attention_scores(block, memory, outputs[j])
            np.testing.assert_allclose(trace.alpha[j], alpha, atol=1e-14)
            np.testing.assert_allclose(trace.o_star[j], attention_apply(block, memory, alpha, outputs[j]), atol=1e-14)

    def test_wrong_width_raises(self, rng):
        block = AttentionBlock.init(3, 2, rng)
        with pytest.raises(DimensionError):
            attend_sequence(block, rng.standard_normal((4, 2)))
        with pytest.raises(DimensionError):
            attention_scores(block, rng.standard_normal((3, 1)), rng.standard_normal(3))


class TestAttentionBackward:
    """Exact gradients of the attention block"""

    @pytest.mark.parametrize("window", [1, 3])
    def test_sequence_parameter_gradients(self, rng, window):
        block = AttentionBlock.init(3, window, rng)
        outputs, c = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        params = ParamVector.from_module(block)

        def loss_fn(p: ParamVector) -> float:
            return float(np.sum(attend_sequence(with_arrays(block, p.arrays()), outputs).o_star * c))

        grads, _ = attend_sequence_backward(block, outputs, attend_sequence(block, outputs), c)
        assert_gradient(loss_fn, params, params.like(grads))

    def test_sequence_output_gradients(self, rng):
        block = AttentionBlock.init(3, 2, rng)
        outputs, c = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        _, d_outputs = attend_sequence_backward(block, outputs, attend_sequence(block, outputs), c)
        eps = 1e-6
        for j, a in [(0, 0), (1, 2), (3, 1)]:
            step = np.zeros_like(outputs)
            step[j, a] = eps
            plus = np.sum(attend_sequence(block, outputs + step).o_star * c)
            minus = np.sum(attend_sequence(block, outputs - step).o_star * c)
            assert abs((plus - minus) / (2 * eps) - d_outputs[j, a]) < 1e-8

    def test_single_index_memory_gradient(self, rng):
        block = AttentionBlock.init(3, 2, rng)
        memory, o_j, c = rng.standard_normal((3, 2)), rng.standard_normal(3), rng.standard_normal(3)
        _, d_memory, d_o_j = attention_backward(block, memory, o_j, c)
        assert d_memory.shape == (3, 2)
        assert d_o_j.shape == (3,)
        eps = 1e-6
        step = np.zeros_like(memory)
        step[1, 0] = eps

        def value(mem: np.ndarray) -> float:
            return float(np.dot(attention_apply(block, mem, attention_scores(block, mem, o_j), o_j), c))

        assert abs((value(memory + step) - value(memory - step)) / (2 * eps) - d_memory[1, 0]) < 1e-8
