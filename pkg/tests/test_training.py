"""
Optimisers and the mini-batch training loop
"""

import numpy as np
import pytest

from dualseq.errors import ConfigurationError, DimensionError, NumericalError
from dualseq.models.dual_rnn import ablate
from dualseq.nn.core import ParamVector
from dualseq.settings import TrainConfig
from dualseq.workflows.training import AdamOptimizer, SgdOptimizer, make_optimizer, sgd_step, train


def _theta(*values: float) -> ParamVector:
    return ParamVector.from_arrays({"theta": np.array(values)})


class TestSgdStep:
    """theta - lr * g"""

    def test_single_step(self):
        out = sgd_step(_theta(1.0), _theta(2.0), 0.005)
        assert out.values[0] == pytest.approx(0.99, abs=1e-15)

    def test_frozen_entries_untouched(self):
        out = sgd_step(_theta(1.0, 1.0), _theta(2.0, 2.0), 0.5, trainable=np.array([True, False]))
        assert out.values.tolist() == [0.0, 1.0]

    def test_layout_mismatch(self):
        with pytest.raises(DimensionError):
            sgd_step(_theta(1.0), _theta(1.0, 2.0), 0.1)

    def test_minimises_a_bowl(self):
        params = _theta(3.0, -2.0)
        for _ in range(200):
            params = sgd_step(params, params.with_values(2.0 * params.values), 0.1)
        assert np.abs(params.values).max() < 1e-6


class TestOptimizers:
    """Optimizer selection and Adam"""

    def test_make_optimizer(self):
        assert isinstance(make_optimizer(TrainConfig()), SgdOptimizer)
        assert isinstance(make_optimizer(TrainConfig(optimizer="adam")), AdamOptimizer)

    def test_adam_minimises_a_bowl(self):
        opt = AdamOptimizer(lr=0.1)
        params = _theta(3.0, -2.0)
        for _ in range(500):
            params = opt.step(params, params.with_values(2.0 * params.values))
        assert np.abs(params.values).max() < 0.1

    def test_adam_first_step_is_lr_sized(self):
        out = AdamOptimizer(lr=0.01).step(_theta(1.0, 1.0), _theta(5.0, -0.1))
        np.testing.assert_allclose(out.values, [0.99, 1.01], atol=1e-6)


class TestTrain:
    """Epoch loop over the dual classifier"""

    def test_zero_epochs_is_identity(self, tiny_model, tiny_cohort, tiny_train_config, rng):
        result = train(tiny_model, tiny_cohort.records, tiny_train_config.model_copy(update={"epochs": 0}), rng)
        assert result.history == []
        np.testing.assert_array_equal(result.model.to_vector().values, tiny_model.to_vector().values)

    def test_zero_learning_rate_gives_flat_history(self, tiny_model, tiny_cohort, tiny_train_config, rng):
        cfg = tiny_train_config.model_copy(update={"lr": 0.0, "dropout": 0.0, "epochs": 3})
        result = train(tiny_model, tiny_cohort.records, cfg, rng)
        np.testing.assert_allclose(result.history, [result.history[0]] * 3, rtol=1e-12)

    def test_deterministic(self, tiny_model, tiny_cohort, tiny_train_config):
        a = train(tiny_model, tiny_cohort.records, tiny_train_config, np.random.default_rng(8))
        b = train(tiny_model, tiny_cohort.records, tiny_train_config, np.random.default_rng(8))
        np.testing.assert_array_equal(a.model.to_vector().values, b.model.to_vector().values)
        assert a.history == b.history

    def test_loss_goes_down(self, tiny_model, tiny_cohort, tiny_train_config, rng):
        cfg = tiny_train_config.model_copy(update={"lr": 0.05, "dropout": 0.0, "epochs": 15})
        result = train(tiny_model, tiny_cohort.records, cfg, rng)
        assert result.history[-1] < result.history[0]

    def test_ablated_branch_stays_zero(self, tiny_model, tiny_cohort, tiny_train_config, rng):
        model = ablate(tiny_model, "patient")
        result = train(model, tiny_cohort.records, tiny_train_config, rng)
        vector = result.model.to_vector()
        frozen = vector.mask(lambda n: n.startswith(("input_net_p.", "cell_p.", "attn.")))
        assert not vector.values[frozen].any()
        assert result.model.ablated == frozenset({"patient"})

    def test_adam_training_runs(self, tiny_model, tiny_cohort, tiny_train_config, rng):
        cfg = tiny_train_config.model_copy(update={"optimizer": "adam"})
        result = train(tiny_model, tiny_cohort.records, cfg, rng)
        assert len(result.history) == cfg.epochs

    def test_non_finite_loss_raises(self, tiny_model, tiny_cohort, tiny_train_config, rng, monkeypatch):
        params = tiny_model.to_vector()
        monkeypatch.setattr(
            "dualseq.workflows.training.loss_and_grad", lambda *args, **kwargs: (float("nan"), params, [])
        )
        with pytest.raises(NumericalError, match="epoch 1"):
            train(tiny_model, tiny_cohort.records, tiny_train_config, rng)

    def test_empty_training_set(self, tiny_model, tiny_train_config, rng):
        with pytest.raises(ConfigurationError):
            train(tiny_model, [], tiny_train_config, rng)


@pytest.mark.slow
class TestDefaultRun:
    """Pretraining plus training with the default settings on the default planted-signal cohort"""

    def test_loss_halves(self, default_classifier):
        history = default_classifier.history
        assert len(history) == TrainConfig().epochs
        assert np.all(np.isfinite(history))
        assert history[-1] < 0.5 * history[0]
