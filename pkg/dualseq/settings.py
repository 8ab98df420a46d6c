"""
Configuration - pydantic models for every pipeline stage plus environment settings

Defaults are the reference hyperparameters; `config.yaml` ships the
same values so a run can be tuned without touching code.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from dualseq.errors import ConfigurationError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).parent.joinpath("config.yaml")

# Cohort statistics of the original clinical sample, used to normalise age
CLINICAL_AGE_MEAN = 43.32
CLINICAL_AGE_STD = 12.6


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SynthConfig(_Section):
    """Planted-signal cohort generator"""

    n_patients: int = Field(1000, ge=1)
    k_c: int = Field(93, ge=2)
    k_p: int = Field(24, ge=2)
    n_signal_c: int = Field(8, ge=1)
    n_signal_p: int = Field(4, ge=1)
    # clinician sequence lengths: a point mass at 1 plus a shifted log-normal
    mean_visits: float = Field(7.87, gt=1.0)
    single_visit_fraction: float = Field(0.35, ge=0.0, lt=1.0)
    visit_sigma: float = Field(1.0, gt=0.0)
    max_visits: int = Field(119, ge=2)
    mean_visit_gap_days: float = Field(35.0, gt=0.0)
    # patient sequence lengths: min_answers plus a log-normal
    mean_answers: float = Field(19.66, gt=0.0)
    min_answers: int = Field(3, ge=0)
    answer_sigma: float = Field(1.0, gt=0.0)
    max_answers: int = Field(858, ge=1)
    rho: float = Field(0.97, gt=0.0, lt=1.0)
    sigma_c: float = Field(0.5, ge=0.0)
    sigma_p: float = Field(0.3, ge=0.0)
    w_c: float = 1.0
    w_delta: float = 3.0
    label_noise: float = Field(0.1, ge=0.0)
    threshold: Optional[float] = None
    positive_rate: float = Field(0.15, gt=0.0, lt=1.0)
    rate_tolerance: float = Field(0.01, gt=0.0)
    max_bisection_steps: int = Field(60, ge=1)
    age_mean: float = CLINICAL_AGE_MEAN
    age_std: float = Field(CLINICAL_AGE_STD, gt=0.0)
    female_fraction: float = Field(0.647, ge=0.0, le=1.0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_widths(self) -> "SynthConfig":
        if self.n_signal_c > self.k_c or self.n_signal_p > self.k_p:
            raise ValueError("signal feature counts cannot exceed feature widths")
        if self.mean_answers <= self.min_answers:
            raise ValueError("mean_answers must exceed min_answers")
        if self.max_answers < self.min_answers:
            raise ValueError("max_answers must be at least min_answers")
        return self


class ModelConfig(_Section):
    """Dual recurrent classifier architecture"""

    k_c: int = Field(93, ge=1)
    k_p: int = Field(24, ge=1)
    input_mode: Literal["nonlinear", "linear"] = "nonlinear"
    input_hidden: Tuple[int, ...] = (10, 20)
    hidden_c: int = Field(10, ge=1)
    hidden_p: int = Field(5, ge=1)
    out_c: Optional[int] = Field(None, ge=1)
    out_p: Optional[int] = Field(None, ge=1)
    init_hidden: int = Field(10, ge=1)
    classifier_hidden: int = Field(10, ge=1)
    attention: bool = True
    window: int = Field(1, ge=1)
    elapsed_time: bool = True
    age_mean: float = CLINICAL_AGE_MEAN
    age_std: float = Field(CLINICAL_AGE_STD, gt=0.0)

    @model_validator(mode="after")
    def _check_input_hidden(self) -> "ModelConfig":
        if not self.input_hidden or any(w < 1 for w in self.input_hidden):
            raise ValueError("input_hidden must list positive layer widths")
        return self

    @property
    def output_c(self) -> int:
        return self.out_c or self.hidden_c

    @property
    def output_p(self) -> int:
        return self.out_p or self.hidden_p

    @property
    def embed_width(self) -> int:
        return self.input_hidden[-1]

    @property
    def rnn_input_width(self) -> int:
        return self.embed_width + (1 if self.elapsed_time else 0)

    @property
    def merged_width(self) -> int:
        return self.output_c + self.output_p + 2


class TrainConfig(_Section):
    """Mini-batch training and cross-validation protocol"""

    lr: float = Field(0.005, ge=0.0)
    epochs: int = Field(100, ge=0)
    batch_size: int = Field(20, ge=1)
    l2: float = Field(0.01, ge=0.0)
    dropout: float = Field(0.6, ge=0.0)
    k_folds: int = Field(4, ge=2)
    train_fraction: float = Field(0.75, gt=0.0, lt=1.0)
    validation_fraction: float = Field(0.2, gt=0.0, lt=1.0)
    optimizer: Literal["sgd", "adam"] = "sgd"
    pretrain: bool = True
    threshold_step: float = Field(0.01, gt=0.0, lt=1.0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_protocol(self) -> "TrainConfig":
        if self.dropout >= 1.0:
            raise ValueError("dropout is a drop probability and must be below 1")
        if abs(self.train_fraction - (1.0 - 1.0 / self.k_folds)) > 1e-9:
            raise ValueError(
                f"train_fraction {self.train_fraction} is inconsistent with {self.k_folds} folds"
            )
        return self


class PretrainConfig(_Section):
    """Separate pretraining of the input networks"""

    epochs: int = Field(20, ge=0)
    lr: float = Field(0.05, ge=0.0)
    batch_size: int = Field(32, ge=1)


class TsneConfig(_Section):
    """Exact t-SNE of the merged latent space"""

    perplexity: float = Field(100.0, gt=1.0)
    lr: float = Field(10.0, gt=0.0)
    iters: int = Field(1000, ge=1)
    exaggeration: float = Field(12.0, ge=1.0)
    exaggeration_iters: int = Field(250, ge=0)
    momentum_initial: float = Field(0.5, ge=0.0, lt=1.0)
    momentum_final: float = Field(0.8, ge=0.0, lt=1.0)
    tolerance: float = Field(1e-5, gt=0.0)
    max_bisection_steps: int = Field(50, ge=1)


class RunConfig(_Section):
    """All sections of a configuration file"""

    synth: SynthConfig = SynthConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    pretrain: PretrainConfig = PretrainConfig()
    tsne: TsneConfig = TsneConfig()


class Settings(BaseSettings):
    """Runtime settings read from the environment (prefix DUALSEQ_) or a .env file"""

    model_config = SettingsConfigDict(env_prefix="DUALSEQ_", env_file=".env", extra="ignore")

    log_level: str = "INFO"
    config_path: Optional[Path] = None
    progress: bool = False


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Load a YAML configuration file over the built-in defaults

    Args:
        path: YAML file with optional sections synth/model/train/pretrain/tsne;
            the packaged config.yaml when None
        overrides: Extra values merged per section after the file, e.g.
            {"synth": {"seed": 3}}

    Returns:
        Validated run configuration
    """
    source = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    try:
        raw = yaml.safe_load(source.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigurationError(f"cannot read configuration {source}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigurationError(f"configuration {source} must be a mapping of sections")

    for section, values in (overrides or {}).items():
        merged = dict(raw.get(section) or {})
        merged.update(values)
        raw[section] = merged

    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration {source}: {e}") from e
    logger.debug(f"Loaded configuration from {source}")
    return config
