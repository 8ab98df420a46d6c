"""
Exact t-SNE: perplexity calibration, affinities and the embedding loop
"""

import logging

import numpy as np
import pytest
from scipy.cluster.vq import kmeans2

from dualseq.errors import DimensionError, NumericalError
from dualseq.settings import TsneConfig
from dualseq.workflows.tsne import (
    conditional_probabilities,
    joint_probabilities,
    kl_divergence,
    squared_distances,
    tsne,
)

FAST = TsneConfig(perplexity=5.0, iters=60, exaggeration_iters=20)


def _entropy(row: np.ndarray) -> float:
    row = row[row > 0]
    return float(-np.sum(row * np.log(row)))


class TestAffinities:
    """Per-point bandwidths and the symmetric joint"""

    def test_rows_hit_the_perplexity(self, rng):
        x = rng.standard_normal((40, 6))
        p_cond, residuals = conditional_probabilities(squared_distances(x), 8.0)
        np.testing.assert_allclose(p_cond.sum(axis=1), 1.0, rtol=1e-12)
        assert not np.diag(p_cond).any()
        assert residuals.max() <= 1e-5
        for i in (0, 17, 39):
            assert abs(_entropy(p_cond[i]) - np.log(8.0)) < 2e-5

    def test_joint_is_symmetric_and_normalised(self, rng):
        p_cond, _ = conditional_probabilities(squared_distances(rng.standard_normal((25, 3))), 5.0)
        joint = joint_probabilities(p_cond)
        np.testing.assert_allclose(joint, joint.T)
        assert joint.sum() == pytest.approx(1.0, abs=1e-12)

    def test_kl_divergence(self):
        p = np.array([[0.0, 0.25], [0.25, 0.5]])
        q = np.array([[0.1, 0.2], [0.3, 0.4]])
        assert kl_divergence(p, p) == 0.0
        expected = 0.25 * np.log(0.25 / 0.2) + 0.25 * np.log(0.25 / 0.3) + 0.5 * np.log(0.5 / 0.4)
        assert kl_divergence(p, q) == pytest.approx(expected)
        assert kl_divergence(p, q) > 0.0


class TestTsne:
    """Embedding loop"""

    def test_output_shapes(self, rng):
        result = tsne(rng.standard_normal((30, 4)), FAST, np.random.default_rng(0))
        assert result.coords.shape == (30, 2)
        assert len(result.kl_history) == FAST.iters
        assert result.entropy_residuals.shape == (30,)
        np.testing.assert_allclose(result.coords.mean(axis=0), 0.0, atol=1e-10)
        assert all(kl >= 0.0 for kl in result.kl_history)

    def test_deterministic(self, rng):
        x = rng.standard_normal((20, 3))
        a = tsne(x, FAST, np.random.default_rng(5))
        b = tsne(x, FAST, np.random.default_rng(5))
        np.testing.assert_array_equal(a.coords, b.coords)

    def test_perplexity_lowered_for_small_inputs(self, rng, caplog):
        with caplog.at_level(logging.WARNING):
            result = tsne(rng.standard_normal((20, 3)), FAST.model_copy(update={"perplexity": 30.0}), rng)
        assert result.perplexity == pytest.approx(19.0 / 3.0)
        assert "too large for 20 points" in caplog.text

    def test_duplicate_points(self, rng):
        x = np.vstack([rng.standard_normal((10, 3)), np.zeros((3, 3))])
        result = tsne(x, FAST, rng)
        assert np.all(np.isfinite(result.coords))

    def test_rejects_bad_input(self, rng):
        with pytest.raises(DimensionError):
            tsne(rng.standard_normal((4, 3)), FAST, rng)
        with pytest.raises(DimensionError):
            tsne(rng.standard_normal(10), FAST, rng)
        x = rng.standard_normal((10, 3))
        x[2, 1] = np.nan
        with pytest.raises(NumericalError):
            tsne(x, FAST, rng)

    @pytest.mark.slow
    def test_separates_two_clusters(self):
        gen = np.random.default_rng(11)
        labels = np.repeat([0, 1], 100)
        x = gen.standard_normal((200, 10)) + 8.0 * labels[:, None]
        cfg = TsneConfig(perplexity=30.0)
        result = tsne(x, cfg, gen)
        _, assigned = kmeans2(result.coords, 2, minit="++", seed=3)
        agreement = np.mean(assigned == labels)
        assert max(agreement, 1.0 - agreement) >= 0.95
        kl = np.asarray(result.kl_history)
        assert kl[-1] < kl[cfg.exaggeration_iters]
        # at most 1e-3 of growth per step over the final 100 iterations
        assert np.all(np.diff(kl[-101:]) <= 1e-3)
