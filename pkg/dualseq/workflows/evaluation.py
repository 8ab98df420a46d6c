"""
Stratified cross-validation and report tables

Patients are split into folds with the same proportion of clinician-sequence
length buckets. In each fold a validation slice of the training patients picks
the decision threshold, the model trains on the rest, and every visit of the
held-out patients is scored, per bucket and overall.
"""

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.model_selection import KFold, StratifiedKFold, train_test_split

from dualseq.data.records import ALL_BUCKETS, BUCKETS, Cohort, PatientRecord, length_bucket
from dualseq.errors import ConfigurationError
from dualseq.models.factory import FamilySpec, ModelFactory, VisitClassifier, fit_model_config
from dualseq.seeding import named_stream
from dualseq.settings import RunConfig
from dualseq.workflows.metrics import METRICS, score_all, select_threshold, threshold_grid, threshold_sweep

logger = logging.getLogger(__name__)

REPORT_BUCKETS: Tuple[str, ...] = BUCKETS + (ALL_BUCKETS,)
SPLITS = ("train", "test")

Fold = Tuple[np.ndarray, np.ndarray]


def _split_seed(rng: np.random.Generator) -> int:
    """Integer random_state for scikit-learn splitters drawn from a named stream"""
    return int(rng.integers(2**32 - 1))


def kfold_split(cohort: Union[Cohort, Sequence[str]], k: int, rng: np.random.Generator) -> List[Fold]:
    """
    Length-stratified k-fold partition

    Args:
        cohort: Cohort, or the length bucket of every patient
        k: Number of folds (at least 2)
        rng: Shuffling stream

    Returns:
        k pairs (train indices, held-out indices); held-out sets partition the cohort
    """
    if k < 2:
        raise ConfigurationError(f"k-fold split needs k >= 2, got {k}")
    labels = np.asarray(cohort.buckets() if isinstance(cohort, Cohort) else list(cohort))
    if labels.size < k:
        raise ConfigurationError(f"{labels.size} patients cannot fill {k} folds")
    names, counts = np.unique(labels, return_counts=True)
    for bucket, count in zip(names, counts):
        if count < k:
            logger.warning(f"Length bucket {bucket} has {count} patients for {k} folds")
    seed = _split_seed(rng)
    placeholder = np.zeros(labels.size)
    if counts.max() < k:
        logger.warning(f"No length bucket fills {k} folds; splitting without stratification")
        folds = KFold(n_splits=k, shuffle=True, random_state=seed).split(placeholder)
        return [(train, test) for train, test in folds]
    with warnings.catch_warnings():
        # small buckets are reported above
        warnings.simplefilter("ignore", UserWarning)
        folds = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed).split(placeholder, labels)
        return [(train, test) for train, test in folds]


def stratified_holdout(
    indices: np.ndarray, buckets: Sequence[str], fraction: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split indices into (fit, validation) keeping bucket proportions

    At least one patient goes to validation whenever two or more are available.
    Buckets too small to stratify fall back to a plain shuffled split.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size < 2:
        return np.sort(indices), np.empty(0, dtype=np.int64)
    labels = np.asarray([buckets[i] for i in indices])
    n_val = min(max(1, int(round(fraction * indices.size))), indices.size - 1)
    seed = _split_seed(rng)
    try:
        fit, validation = train_test_split(indices, test_size=n_val, stratify=labels, random_state=seed)
    except ValueError as err:
        logger.debug(f"Validation slice of {indices.size} patients is not stratified: {err}")
        fit, validation = train_test_split(indices, test_size=n_val, random_state=seed)
    return np.sort(fit), np.sort(validation)


@dataclass
class FoldResult:
    fold: int
    threshold: float
    # split -> bucket -> metric -> value (nan when the bucket is empty or the metric undefined)
    scores: Dict[str, Dict[str, Dict[str, float]]]
    sweep: pd.DataFrame
    history: List[float] = field(default_factory=list)


@dataclass
class EvalReport:
    """Per-fold results of one model variant with mean and population std across folds"""

    variant: str
    folds: List[FoldResult]

    @property
    def thresholds(self) -> List[float]:
        return [f.threshold for f in self.folds]

    def values(self, metric: str, bucket: str, split: str = "test") -> np.ndarray:
        return np.array([f.scores[split][bucket][metric] for f in self.folds], dtype=np.float64)

    def cell(self, metric: str, bucket: str, split: str = "test") -> Optional[Tuple[float, float]]:
        """(mean, std) over the folds where the value exists; None when absent everywhere"""
        values = self.values(metric, bucket, split)
        values = values[np.isfinite(values)]
        if values.size == 0:
            return None
        return float(values.mean()), float(values.std(ddof=0))

    def summary(self, split: str = "test") -> pd.DataFrame:
        """Metrics x buckets table of "mean±std" cells in percent, "-" when absent"""
        table = {b: [format_cell(self.cell(m, b, split)) for m in METRICS] for b in REPORT_BUCKETS}
        return pd.DataFrame(table, index=list(METRICS))

    def mean_sweep(self) -> pd.DataFrame:
        frames = [f.sweep for f in self.folds]
        return pd.concat(frames).groupby("threshold", sort=True).mean().reset_index()


def format_cell(cell: Optional[Tuple[float, float]]) -> str:
    if cell is None:
        return "-"
    return f"{100.0 * cell[0]:.2f}±{100.0 * cell[1]:.2f}"


def _bucket_scores(
    classifier: VisitClassifier, records: Sequence[PatientRecord], threshold: float
) -> Tuple[Dict[str, Dict[str, float]], np.ndarray, np.ndarray]:
    """Metrics per bucket (visits are the unit) plus the pooled scores and labels"""
    per_bucket: Dict[str, Tuple[List[np.ndarray], List[np.ndarray]]] = {b: ([], []) for b in BUCKETS}
    for record in records:
        scores, labels = per_bucket[length_bucket(record.n_visits)]
        scores.append(classifier.predict(record))
        labels.append(record.labels)
    out: Dict[str, Dict[str, float]] = {}
    pooled_s: List[np.ndarray] = []
    pooled_y: List[np.ndarray] = []
    for bucket in BUCKETS:
        scores, labels = per_bucket[bucket]
        if not scores:
            out[bucket] = {m: float("nan") for m in METRICS}
            continue
        s, y = np.concatenate(scores), np.concatenate(labels)
        out[bucket] = score_all(s, y, threshold)
        pooled_s.append(s)
        pooled_y.append(y)
    s_all, y_all = np.concatenate(pooled_s), np.concatenate(pooled_y)
    out[ALL_BUCKETS] = score_all(s_all, y_all, threshold)
    return out, s_all, y_all


def run_fold(
    spec: FamilySpec, cohort: Cohort, cfg: RunConfig, seed: int, fold: int, train_idx: np.ndarray, test_idx: np.ndarray
) -> FoldResult:
    """Fit on one fold's training patients and score both splits"""
    rng = named_stream(seed, "fold", fold)
    split_rng, fit_rng = rng.spawn(2)
    buckets = cohort.buckets()
    fit_idx, val_idx = stratified_holdout(train_idx, buckets, cfg.train.validation_fraction, split_rng)
    records = cohort.records
    model_cfg = fit_model_config(cfg.model, cohort)
    classifier = ModelFactory.create(spec, model_cfg, cfg.train, cfg.pretrain)
    logger.info(f"{spec.label} fold {fold + 1}: fit {fit_idx.size}, validation {val_idx.size}, test {test_idx.size}")
    classifier.fit([records[i] for i in fit_idx], fit_rng)

    grid = threshold_grid(cfg.train.threshold_step)
    if val_idx.size:
        val_s = np.concatenate([classifier.predict(records[i]) for i in val_idx])
        val_y = np.concatenate([records[i].labels for i in val_idx])
        threshold = select_threshold(val_s, val_y, grid)
    else:
        logger.warning(f"{spec.label} fold {fold + 1}: no validation patients; using threshold 0.5")
        threshold = 0.5

    train_scores, _, _ = _bucket_scores(classifier, [records[i] for i in fit_idx], threshold)
    test_scores, test_s, test_y = _bucket_scores(classifier, [records[i] for i in test_idx], threshold)
    history = list(getattr(classifier, "history", []))
    return FoldResult(
        fold=fold,
        threshold=threshold,
        scores={"train": train_scores, "test": test_scores},
        sweep=threshold_sweep(test_s, test_y, grid),
        history=history,
    )


def stratified_report(spec: FamilySpec, cohort: Cohort, cfg: RunConfig, seed: int, jobs: int = 1) -> EvalReport:
    """
    k-fold evaluation of one model family

    Args:
        spec: Model family and attention window
        cohort: Patients to split
        cfg: Model, training, pretraining and protocol settings
        seed: Run seed; folds and per-fold streams derive from it
        jobs: Worker processes for the folds; results do not depend on it

    Returns:
        EvalReport with train and test scores of every fold
    """
    folds = kfold_split(cohort, cfg.train.k_folds, named_stream(seed, "folds"))
    args = [(spec, cohort, cfg, seed, f, tr, te) for f, (tr, te) in enumerate(folds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_fold, *zip(*args)))
    else:
        results = [run_fold(*a) for a in args]
    report = EvalReport(spec.label, results)
    cell = report.cell("recall", ALL_BUCKETS)
    logger.info(f"{spec.label}: test recall (all) {format_cell(cell)}")
    return report


def write_report_tables(reports: Sequence[EvalReport], out_dir: Union[str, Path]) -> List[Path]:
    """
    Write table_<metric>.csv (variants x buckets, test split), metrics_<variant>.csv
    (metrics x train/test, all buckets) and sweep_<variant>.csv

    Returns:
        Written paths
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    for metric in METRICS:
        rows = [
            {"model": r.variant, **{b: format_cell(r.cell(metric, b)) for b in REPORT_BUCKETS}} for r in reports
        ]
        path = out_dir.joinpath(f"table_{metric}.csv")
        pd.DataFrame(rows, columns=["model", *REPORT_BUCKETS]).to_csv(path, index=False)
        written.append(path)
    for r in reports:
        frame = pd.DataFrame(
            {split: [format_cell(r.cell(m, ALL_BUCKETS, split)) for m in METRICS] for split in SPLITS},
            index=pd.Index(list(METRICS), name="metric"),
        )
        path = out_dir.joinpath(f"metrics_{r.variant}.csv")
        frame.to_csv(path)
        written.append(path)
        path = out_dir.joinpath(f"sweep_{r.variant}.csv")
        r.mean_sweep().to_csv(path, index=False)
        written.append(path)
    logger.info(f"Wrote {len(written)} report files to {out_dir}")
    return written
