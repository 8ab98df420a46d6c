"""
Input-net pretraining
"""

import logging

import numpy as np
import pytest

from dualseq.data.records import ClinicianVisit, PatientAnswer, PatientRecord, StaticInfo
from dualseq.data.synth import generate_cohort
from dualseq.errors import CohortValidationError
from dualseq.models.dual_rnn import ModelParams
from dualseq.models.factory import fit_model_config
from dualseq.models.pretrain import (
    clinician_events,
    patient_events,
    pretrain_input_nets,
    pretrain_net,
    readout_accuracy,
)
from dualseq.settings import PretrainConfig, TrainConfig
from dualseq.workflows.training import train

from .conftest import K_C, K_P


class TestEventLabels:
    """Which label each single event is trained against"""

    def test_answer_takes_label_of_next_visit(self):
        record = PatientRecord(
            id="p",
            static=StaticInfo(1, 30.0),
            visits=tuple(ClinicianVisit(t=t, x=np.zeros(K_C), y=y) for t, y in ((2.0, 0), (5.0, 1), (9.0, 1))),
            answers=tuple(PatientAnswer(t=t, x=np.full(K_P, t)) for t in (1.0, 2.0, 6.0, 10.0)),
        )
        x, y = patient_events([record], K_P)
        assert y.tolist() == [0.0, 0.0, 1.0]
        assert x[:, 0].tolist() == [1.0, 2.0, 6.0]

    def test_clinician_events_stack_every_visit(self, tiny_cohort):
        x, y = clinician_events(tiny_cohort.records)
        assert x.shape == (tiny_cohort.n_visits, K_C)
        assert set(y.tolist()) == {0.0, 1.0}

    def test_no_answers(self, tiny_cohort):
        records = [r for r in tiny_cohort if r.n_answers == 0]
        x, y = patient_events(records, K_P)
        assert x.shape == (0, K_P)
        assert y.shape == (0,)


class TestPretrainNet:
    """Single-net pretraining through a temporary readout"""

    def test_loss_decreases_on_separable_events(self, tiny_model):
        gen = np.random.default_rng(0)
        x = gen.standard_normal((200, K_C))
        y = (x[:, 0] > 0).astype(float)
        result = pretrain_net(tiny_model.input_net_c, x, y, PretrainConfig(epochs=30, lr=0.5, batch_size=20), gen)
        assert len(result.history) == 30
        assert result.history[-1] < result.history[0]
        assert readout_accuracy(result, x, y) > 0.9

    def test_zero_epochs_keeps_net(self, tiny_model, rng):
        x = rng.standard_normal((10, K_C))
        result = pretrain_net(tiny_model.input_net_c, x, np.ones(10), PretrainConfig(epochs=0), rng)
        assert result.history == []
        for before, after in zip(tiny_model.input_net_c.layers, result.net.layers):
            np.testing.assert_array_equal(before.weights, after.weights)

    def test_no_events(self, tiny_model, rng):
        with pytest.raises(CohortValidationError):
            pretrain_net(tiny_model.input_net_c, np.zeros((0, K_C)), np.zeros(0), PretrainConfig(), rng)


class TestPretrainInputNets:
    """Both input nets of a model"""

    def test_only_input_nets_change(self, tiny_model, tiny_cohort, tiny_pretrain_config, rng):
        model = pretrain_input_nets(tiny_model, tiny_cohort.records, tiny_pretrain_config, rng)
        before, after = tiny_model.to_vector(), model.to_vector()
        changed = before.values != after.values
        inputs = before.mask(lambda n: n.startswith(("input_net_c.", "input_net_p.")))
        assert changed.any()
        assert not (changed & ~inputs).any()

    def test_deterministic(self, tiny_model, tiny_cohort, tiny_pretrain_config):
        a = pretrain_input_nets(tiny_model, tiny_cohort.records, tiny_pretrain_config, np.random.default_rng(5))
        b = pretrain_input_nets(tiny_model, tiny_cohort.records, tiny_pretrain_config, np.random.default_rng(5))
        np.testing.assert_array_equal(a.to_vector().values, b.to_vector().values)

    def test_linear_inputs_are_not_pretrained(self, tiny_model_config, tiny_cohort, tiny_pretrain_config, rng, caplog):
        model = ModelParams.init(tiny_model_config.model_copy(update={"input_mode": "linear"}), rng)
        with caplog.at_level(logging.WARNING):
            result = pretrain_input_nets(model, tiny_cohort.records, tiny_pretrain_config, rng)
        assert result is model
        assert "skipping pretraining" in caplog.text

    def test_empty_cohort(self, tiny_model, tiny_pretrain_config, rng):
        with pytest.raises(CohortValidationError):
            pretrain_input_nets(tiny_model, [], tiny_pretrain_config, rng)


class TestPretrainedStart:
    """Pretrained input nets give the classifier a better starting point"""

    def test_early_loss_below_random_start(self, tiny_synth_config, tiny_model_config, tiny_pretrain_config):
        cohort, _ = generate_cohort(tiny_synth_config.model_copy(update={"n_patients": 120}))
        init = ModelParams.init(fit_model_config(tiny_model_config, cohort), np.random.default_rng(2))
        pretrained = pretrain_input_nets(
            init, cohort.records, tiny_pretrain_config.model_copy(update={"epochs": 20}), np.random.default_rng(3)
        )
        cfg = TrainConfig(epochs=3, lr=0.05, batch_size=10, dropout=0.0)
        from_random = train(init, cohort.records, cfg, np.random.default_rng(4)).history
        from_pretrained = train(pretrained, cohort.records, cfg, np.random.default_rng(4)).history
        assert np.mean(from_pretrained) < np.mean(from_random)
