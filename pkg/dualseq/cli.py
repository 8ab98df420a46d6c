"""
Command-line interface

    dualseq gen        synthetic cohort (+ latents sidecar)
    dualseq pretrain   initial model with pretrained input nets
    dualseq train      trained model checkpoint + loss history
    dualseq evaluate   stratified k-fold report tables for one or more model families
    dualseq relevance  ranked first-layer feature relevance
    dualseq embed      t-SNE of the merged latent vectors

Global options (--config, --seed, --out, --verbose) go before the command.
"""

import logging
import sys
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import click
import pandas as pd
import typer
from rich.console import Console
from rich.table import Table

from dualseq.data.cohort_io import read_cohort, write_cohort
from dualseq.data.records import ALL_BUCKETS, Cohort
from dualseq.data.synth import generate_cohort, write_latents
from dualseq.errors import (
    CheckpointError,
    CohortValidationError,
    ConfigurationError,
    DimensionError,
    GenerationError,
    NumericalError,
)
from dualseq.log import configure_logging
from dualseq.models.checkpoint import load_checkpoint, save_checkpoint
from dualseq.models.dual_rnn import ModelParams
from dualseq.models.factory import FamilySpec, ModelFactory, ModelFamily, fit_model_config
from dualseq.models.pretrain import pretrain_input_nets
from dualseq.seeding import named_stream
from dualseq.settings import RunConfig, Settings, load_config
from dualseq.workflows.evaluation import EvalReport, format_cell, stratified_report, write_report_tables
from dualseq.workflows.interpret import export_embedding, feature_relevance, latent_points, write_relevance
from dualseq.workflows.metrics import METRICS
from dualseq.workflows.training import train as train_model
from dualseq.workflows.tsne import tsne

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_USAGE = 64

app = typer.Typer(add_completion=False, no_args_is_help=True, help="Dual-sequence visit classifier pipeline")
console = Console(stderr=True)


class Branch(str, Enum):
    CLINICIAN = "clinician"
    PATIENT = "patient"


class Baseline(str, Enum):
    LOGREG = "logreg"
    NN = "nn"


class Method(str, Enum):
    NORM = "norm"
    MAX = "max"


@dataclass
class RunContext:
    config: RunConfig
    seed: Optional[int]
    out: Path
    progress: bool

    @property
    def run_seed(self) -> int:
        return self.seed if self.seed is not None else self.config.train.seed

    def output(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out.joinpath(name)


def _context(ctx: typer.Context) -> RunContext:
    if not isinstance(ctx.obj, RunContext):
        raise ConfigurationError("command invoked without global options")
    return ctx.obj


@app.callback()
def main_options(
    ctx: typer.Context,
    config: Optional[Path] = typer.Option(None, "--config", help="YAML configuration file"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Seed for every random stream"),
    out: Path = typer.Option(Path("."), "--out", help="Output directory"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
) -> None:
    settings = Settings()
    configure_logging("DEBUG" if verbose else settings.log_level)
    cfg = load_config(config or settings.config_path)
    ctx.obj = RunContext(cfg, seed, out, settings.progress)


def _read_cohort(path: Path) -> Cohort:
    if not path.is_file():
        raise CohortValidationError(f"cohort file {path} does not exist")
    return read_cohort(path)


def _load_checkpoint(path: Path) -> ModelParams:
    if not path.is_file():
        raise CheckpointError(f"checkpoint file {path} does not exist")
    return load_checkpoint(path)


def _initial_model(run: RunContext, cohort: Cohort, pretrain: bool) -> ModelParams:
    cfg = run.config
    model = ModelParams.init(fit_model_config(cfg.model, cohort), named_stream(run.run_seed, "init"))
    if pretrain:
        model = pretrain_input_nets(model, cohort.records, cfg.pretrain, named_stream(run.run_seed, "pretrain"))
    return model


@app.command()
def gen(
    ctx: typer.Context,
    patients: Optional[int] = typer.Option(None, "--patients", min=1, help="Override the cohort size"),
) -> None:
    """Generate a synthetic cohort with a planted signal"""
    run = _context(ctx)
    overrides: Dict[str, int] = {}
    if run.seed is not None:
        overrides["seed"] = run.seed
    if patients is not None:
        overrides["n_patients"] = patients
    synth_cfg = run.config.synth.model_copy(update=overrides)
    cohort, latents = generate_cohort(synth_cfg)
    write_cohort(cohort, run.output("cohort.jsonl"))
    write_latents(latents, run.output("latents.jsonl"))


@app.command()
def pretrain(
    ctx: typer.Context,
    cohort: Path = typer.Option(..., "--cohort", help="Cohort JSONL"),
) -> None:
    """Initialise a model and pretrain its input nets"""
    run = _context(ctx)
    model = _initial_model(run, _read_cohort(cohort), pretrain=True)
    save_checkpoint(model, run.output("pretrained.json"))


@app.command()
def train(
    ctx: typer.Context,
    cohort: Path = typer.Option(..., "--cohort", help="Cohort JSONL"),
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", help="Start model"),
) -> None:
    """Train the dual classifier on a whole cohort"""
    run = _context(ctx)
    data = _read_cohort(cohort)
    if checkpoint is not None:
        model = _load_checkpoint(checkpoint)
        if model.config.k_c != data.k_c or model.config.k_p != data.k_p:
            raise DimensionError(
                f"checkpoint widths ({model.config.k_c}, {model.config.k_p}) do not match the cohort "
                f"({data.k_c}, {data.k_p})"
            )
    else:
        model = _initial_model(run, data, pretrain=run.config.train.pretrain)
    result = train_model(model, data.records, run.config.train, named_stream(run.run_seed, "train"), run.progress)
    save_checkpoint(result.model, run.output("model.json"))
    history = pd.DataFrame({"epoch": range(1, len(result.history) + 1), "loss": result.history})
    history.to_csv(run.output("loss_history.csv"), index=False, float_format="%.17g")
    if result.history:
        logger.info(f"Training loss {result.history[0]:.4f} -> {result.history[-1]:.4f}")


def _family_specs(
    windows: Sequence[int],
    no_attention: bool,
    linear_inputs: bool,
    ablate: Sequence[Branch],
    baselines: Sequence[Baseline],
) -> List[FamilySpec]:
    specs = [FamilySpec(ModelFamily.ATTENTION, w) for w in windows]
    if no_attention:
        specs.append(FamilySpec(ModelFamily.NO_ATTENTION))
    if linear_inputs:
        specs.append(FamilySpec(ModelFamily.LINEAR_INPUTS))
    # ablating a branch leaves the other one
    only = {Branch.CLINICIAN: ModelFamily.PATIENT_ONLY, Branch.PATIENT: ModelFamily.CLINICIAN_ONLY}
    specs.extend(FamilySpec(only[b]) for b in ablate)
    specs.extend(ModelFactory.parse(b.value) for b in baselines)
    return specs


def _print_reports(reports: Sequence[EvalReport]) -> None:
    table = Table(title="Test metrics over all visits (mean±std, %)")
    table.add_column("model")
    for metric in METRICS:
        table.add_column(metric, justify="right")
    for report in reports:
        table.add_row(report.variant, *[format_cell(report.cell(m, ALL_BUCKETS)) for m in METRICS])
    console.print(table)


@app.command()
def evaluate(
    ctx: typer.Context,
    cohort: Path = typer.Option(..., "--cohort", help="Cohort JSONL"),
    attention: Optional[List[int]] = typer.Option(None, "--attention", min=1, help="Attention window L (repeatable)"),
    no_attention: bool = typer.Option(False, "--no-attention", help="Dual model without attention"),
    linear_inputs: bool = typer.Option(False, "--linear-inputs", help="Single linear input layers"),
    ablate: Optional[List[Branch]] = typer.Option(None, "--ablate", help="Drop one branch (repeatable)"),
    baseline: Optional[List[Baseline]] = typer.Option(None, "--baseline", help="Non-sequential baseline (repeatable)"),
    jobs: int = typer.Option(1, "--jobs", min=1, help="Worker processes for the folds"),
) -> None:
    """Stratified k-fold report for the selected model families"""
    run = _context(ctx)
    specs = _family_specs(attention or [], no_attention, linear_inputs, ablate or [], baseline or [])
    if not specs:
        specs = [FamilySpec(ModelFamily.ATTENTION, run.config.model.window)]
    data = _read_cohort(cohort)
    reports = [stratified_report(spec, data, run.config, run.run_seed, jobs) for spec in specs]
    write_report_tables(reports, run.out)
    _print_reports(reports)


@app.command()
def relevance(
    ctx: typer.Context,
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Trained model"),
    cohort: Optional[Path] = typer.Option(None, "--cohort", help="Feature names"),
    source: Branch = typer.Option(Branch.CLINICIAN, "--source", help="Input net to analyse"),
    method: Method = typer.Option(Method.NORM, "--method", help="Column norm or largest absolute weight"),
) -> None:
    """Rank input features by first-layer weights"""
    run = _context(ctx)
    model = _load_checkpoint(checkpoint)
    width = model.config.k_c if source == Branch.CLINICIAN else model.config.k_p
    if cohort is not None:
        data = _read_cohort(cohort)
        names = list(data.feature_names_c if source == Branch.CLINICIAN else data.feature_names_p)
    else:
        names = [f"{source.value}_{k:02d}" for k in range(width)]
    rows = feature_relevance(model, names, source.value, method.value)  # type: ignore[arg-type]
    write_relevance(rows, run.output(f"relevance_{source.value}.csv"))


@app.command()
def embed(
    ctx: typer.Context,
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Trained model"),
    cohort: Path = typer.Option(..., "--cohort", help="Cohort JSONL"),
) -> None:
    """Embed every visit's merged latent vector with t-SNE"""
    run = _context(ctx)
    model = _load_checkpoint(checkpoint)
    points = latent_points(model, _read_cohort(cohort).records)
    result = tsne(points.vectors, run.config.tsne, named_stream(run.run_seed, "tsne"))
    export_embedding(result.coords, points, run.output("embedding.csv"))
    kl = pd.DataFrame({"iteration": range(1, len(result.kl_history) + 1), "kl": result.kl_history})
    kl.to_csv(run.output("tsne_kl.csv"), index=False)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the CLI and map failures to exit codes

    Returns:
        0 on success, 2 for invalid input or configuration, 3 for numerical or
        generation failures, 64 for usage errors
    """
    command = typer.main.get_command(app)
    try:
        result = command.main(args=list(argv) if argv is not None else None, prog_name="dualseq", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_VALIDATION
    except (ConfigurationError, CohortValidationError, CheckpointError, DimensionError) as e:
        logger.error(str(e))
        return EXIT_VALIDATION
    except (NumericalError, GenerationError) as e:
        logger.error(str(e))
        return EXIT_NUMERICAL
    except click.Abort:
        return 1
    return result if isinstance(result, int) else EXIT_OK


def main() -> None:
    sys.exit(run())
