"""
Pytest configuration and fixtures: seeded generators, tiny configurations,
cohorts and models small enough for finite-difference checks, and the default
planted-signal cohort shared by the slow checks
"""

import logging
from typing import Tuple

import numpy as np
import pytest

from dualseq.data.records import Cohort
from dualseq.data.synth import SynthLatents, generate_cohort
from dualseq.log import PACKAGE_LOGGER
from dualseq.models.dual_rnn import ModelParams
from dualseq.models.factory import DualRnnClassifier, fit_model_config
from dualseq.seeding import named_stream
from dualseq.settings import ModelConfig, PretrainConfig, RunConfig, SynthConfig, TrainConfig, TsneConfig

from . import make_record

K_C = 4
K_P = 3


@pytest.fixture(autouse=True)
def propagate_package_logs():
    """Let caplog see package records even after a CLI test configured logging"""
    logger = logging.getLogger(PACKAGE_LOGGER)
    logger.propagate = True
    logger.setLevel(logging.NOTSET)
    yield
    logger.propagate = True


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    return ModelConfig(
        k_c=K_C,
        k_p=K_P,
        input_hidden=(5, 4),
        hidden_c=3,
        hidden_p=2,
        init_hidden=3,
        classifier_hidden=3,
        attention=True,
        window=2,
    )


@pytest.fixture
def tiny_model(tiny_model_config: ModelConfig) -> ModelParams:
    return ModelParams.init(tiny_model_config, np.random.default_rng(7))


@pytest.fixture
def tiny_train_config() -> TrainConfig:
    return TrainConfig(epochs=2, batch_size=4, dropout=0.5, k_folds=2, train_fraction=0.5, validation_fraction=0.25)


@pytest.fixture
def tiny_pretrain_config() -> PretrainConfig:
    return PretrainConfig(epochs=2, lr=0.05, batch_size=8)


@pytest.fixture
def tiny_run_config(
    tiny_model_config: ModelConfig, tiny_train_config: TrainConfig, tiny_pretrain_config: PretrainConfig
) -> RunConfig:
    return RunConfig(
        model=tiny_model_config,
        train=tiny_train_config,
        pretrain=tiny_pretrain_config,
        tsne=TsneConfig(perplexity=5.0, iters=40, exaggeration_iters=10),
    )


@pytest.fixture
def tiny_synth_config() -> SynthConfig:
    return SynthConfig(
        n_patients=40,
        k_c=6,
        k_p=4,
        n_signal_c=2,
        n_signal_p=2,
        mean_visits=3.0,
        max_visits=8,
        mean_answers=6.0,
        min_answers=1,
        max_answers=20,
        rate_tolerance=0.05,
        seed=3,
    )


@pytest.fixture
def tiny_cohort() -> Cohort:
    """16 patients, four per length bucket, both labels present"""
    gen = np.random.default_rng(99)
    records = []
    for i in range(16):
        n_visits = i % 4 + 1 if i % 4 < 3 else 5
        labels = np.array([(i + v) % 2 for v in range(n_visits)])
        records.append(make_record(gen, n_visits, int(gen.integers(0, 6)), K_C, K_P, f"p{i:05d}", labels))
    return Cohort(
        records=tuple(records),
        k_c=K_C,
        k_p=K_P,
        feature_names_c=tuple(f"clinician_{k:02d}" for k in range(K_C)),
        feature_names_p=tuple(f"patient_{k:02d}" for k in range(K_P)),
    )


@pytest.fixture(scope="session")
def default_synthetic() -> Tuple[Cohort, SynthLatents]:
    """The default 1000-patient planted-signal cohort and its latents"""
    return generate_cohort(SynthConfig())


@pytest.fixture(scope="session")
def default_classifier(default_synthetic: Tuple[Cohort, SynthLatents]) -> DualRnnClassifier:
    """Dual classifier pretrained and trained with the default settings on the whole default cohort"""
    cohort, _ = default_synthetic
    classifier = DualRnnClassifier(fit_model_config(ModelConfig(), cohort), TrainConfig(), PretrainConfig())
    return classifier.fit(cohort.records, named_stream(0, "train"))
