"""
Model Factory - every evaluated model family behind one fit/predict interface
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Protocol, Sequence, Union

import numpy as np

from dualseq.data.records import Cohort, PatientRecord
from dualseq.errors import ConfigurationError
from dualseq.models.baselines import (
    FeedForwardNet,
    LogisticModel,
    ffnn_predict,
    ffnn_train,
    logreg_predict,
    logreg_train,
    stack_dataset,
    stack_features,
)
from dualseq.models.dual_rnn import ModelParams, ablate, predict_record
from dualseq.models.pretrain import pretrain_input_nets
from dualseq.settings import ModelConfig, PretrainConfig, TrainConfig
from dualseq.workflows.training import train

logger = logging.getLogger(__name__)


class ModelFamily(Enum):
    """Model variants compared in a report"""

    ATTENTION = "attention"
    NO_ATTENTION = "no-attention"
    LINEAR_INPUTS = "linear-inputs"
    CLINICIAN_ONLY = "clinician-only"
    PATIENT_ONLY = "patient-only"
    LOGREG = "logreg"
    NN = "nn"


BASELINE_FAMILIES = frozenset({ModelFamily.LOGREG, ModelFamily.NN})


@dataclass(frozen=True)
class FamilySpec:
    family: ModelFamily
    window: int = 1

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ConfigurationError(f"attention window must be at least 1, got {self.window}")

    @property
    def label(self) -> str:
        """Row name in report tables"""
        if self.family == ModelFamily.ATTENTION:
            return f"attention-L{self.window}"
        return self.family.value


class VisitClassifier(Protocol):
    def fit(self, records: Sequence[PatientRecord], rng: np.random.Generator) -> "VisitClassifier":
        ...

    def predict(self, record: PatientRecord) -> np.ndarray:
        ...


@dataclass
class DualRnnClassifier:
    """Dual recurrent model, optionally pretrained and with one branch ablated"""

    model_cfg: ModelConfig
    train_cfg: TrainConfig
    pretrain_cfg: PretrainConfig
    ablated_branch: Optional[str] = None
    progress: bool = False
    model: Optional[ModelParams] = None
    history: List[float] = field(default_factory=list)

    def fit(self, records: Sequence[PatientRecord], rng: np.random.Generator) -> "DualRnnClassifier":
        init_rng, pretrain_rng, train_rng = rng.spawn(3)
        model = ModelParams.init(self.model_cfg, init_rng)
        if self.train_cfg.pretrain:
            model = pretrain_input_nets(model, records, self.pretrain_cfg, pretrain_rng)
        if self.ablated_branch is not None:
            model = ablate(model, self.ablated_branch)
        self.model, self.history = train(model, records, self.train_cfg, train_rng, self.progress)
        return self

    def predict(self, record: PatientRecord) -> np.ndarray:
        if self.model is None:
            raise ConfigurationError("classifier used before fit")
        return predict_record(self.model, record)


@dataclass
class BaselineClassifier:
    """Logistic regression or feed-forward net over stacked visit features"""

    family: ModelFamily
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    model: Optional[Union[LogisticModel, FeedForwardNet]] = None

    def fit(self, records: Sequence[PatientRecord], rng: np.random.Generator) -> "BaselineClassifier":
        cfg = self.model_cfg
        x, y = stack_dataset(records, cfg.k_p, cfg.age_mean, cfg.age_std)
        t = self.train_cfg
        if self.family == ModelFamily.LOGREG:
            seed = int(rng.integers(0, 2**63 - 1))
            self.model = logreg_train(x, y, t.l2, t.lr, t.epochs, t.batch_size, seed)
        else:
            self.model = ffnn_train(x, y, rng, cfg.input_hidden, t.l2, t.lr, t.epochs, t.batch_size)
        return self

    def predict(self, record: PatientRecord) -> np.ndarray:
        cfg = self.model_cfg
        x = stack_features(record, cfg.k_p, cfg.age_mean, cfg.age_std)
        if isinstance(self.model, LogisticModel):
            return logreg_predict(self.model, x)
        if isinstance(self.model, FeedForwardNet):
            return ffnn_predict(self.model, x)
        raise ConfigurationError("classifier used before fit")


def fit_model_config(cfg: ModelConfig, cohort: Cohort) -> ModelConfig:
    """Model configuration with the cohort's feature widths and age normalisation"""
    return cfg.model_copy(
        update={"k_c": cohort.k_c, "k_p": cohort.k_p, "age_mean": cohort.age_mean, "age_std": cohort.age_std}
    )


class ModelFactory:
    """Factory for the classifiers of every family"""

    @classmethod
    def model_config(cls, spec: FamilySpec, base: ModelConfig) -> ModelConfig:
        """Architecture of a recurrent family derived from the base configuration"""
        if spec.family == ModelFamily.ATTENTION:
            return base.model_copy(update={"attention": True, "window": spec.window})
        if spec.family == ModelFamily.LINEAR_INPUTS:
            return base.model_copy(update={"attention": False, "input_mode": "linear"})
        if spec.family in (ModelFamily.NO_ATTENTION, ModelFamily.CLINICIAN_ONLY, ModelFamily.PATIENT_ONLY):
            return base.model_copy(update={"attention": False})
        return base

    @classmethod
    def create(
        cls,
        spec: FamilySpec,
        model_cfg: ModelConfig,
        train_cfg: TrainConfig,
        pretrain_cfg: PretrainConfig,
        progress: bool = False,
    ) -> VisitClassifier:
        """
        Create an unfitted classifier

        Args:
            spec: Family and attention window
            model_cfg: Base architecture (widths must match the cohort)
            train_cfg: Optimisation settings, shared by the baselines
            pretrain_cfg: Input-net pretraining settings
            progress: Show epoch progress bars

        Returns:
            Object with fit(records, rng) and predict(record)
        """
        if spec.family in BASELINE_FAMILIES:
            return BaselineClassifier(spec.family, model_cfg, train_cfg)
        ablated = {ModelFamily.CLINICIAN_ONLY: "patient", ModelFamily.PATIENT_ONLY: "clinician"}.get(spec.family)
        return DualRnnClassifier(cls.model_config(spec, model_cfg), train_cfg, pretrain_cfg, ablated, progress)

    @classmethod
    def parse(cls, name: str, window: int = 1) -> FamilySpec:
        """FamilySpec from a family name such as "attention" or "logreg" """
        try:
            family = ModelFamily(name.lower())
        except ValueError as e:
            choices = ", ".join(f.value for f in ModelFamily)
            raise ConfigurationError(f"unknown model family '{name}' (expected one of {choices})") from e
        return FamilySpec(family, window)
