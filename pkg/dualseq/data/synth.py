"""
Synthetic cohorts with a planted label mechanism

Every patient has a latent risk that follows an AR(1) process sampled at the
irregular times of both event streams. A few clinician and patient features are
noisy affine read-outs of that risk; all others are pure noise. A visit is
positive when the clinician risk estimate plus a weighted *change* between the
two latest answers (at or before the visit) crosses a calibrated threshold, so a
model has to compare consecutive answers to recover the signal.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from dualseq.data.records import (
    ClinicianVisit,
    Cohort,
    PatientAnswer,
    PatientRecord,
    StaticInfo,
    align_visits,
)
from dualseq.errors import GenerationError
from dualseq.seeding import named_stream
from dualseq.settings import SynthConfig

logger = logging.getLogger(__name__)

# first visit falls within this many days of intake
FIRST_VISIT_WINDOW = 14.0
AGE_RANGE = (18.0, 90.0)


@dataclass(frozen=True, eq=False)
class PatientLatents:
    """Stored risk path and label noise of one generated patient"""

    id: str
    visit_risk: np.ndarray
    answer_risk: np.ndarray
    noise: np.ndarray


@dataclass(frozen=True, eq=False)
class SynthLatents:
    """Everything needed to re-evaluate the planted labels of a cohort"""

    signal_c: np.ndarray
    loadings_c: np.ndarray
    signal_p: np.ndarray
    loadings_p: np.ndarray
    threshold: float
    patients: Dict[str, PatientLatents]


def signal_estimate(x: np.ndarray, signal: np.ndarray, loadings: np.ndarray) -> np.ndarray:
    """Least-squares risk estimate sum(a_k x_k) / sum(a_k^2) over the signal features of each row"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        return np.zeros(0)
    return x[:, signal] @ loadings / float(loadings @ loadings)


def visit_scores(record: PatientRecord, cfg: SynthConfig, latents: SynthLatents) -> np.ndarray:
    """w_c * clinician estimate + w_delta * (latest - previous answer estimate) per visit"""
    s_c = signal_estimate(record.visit_features, latents.signal_c, latents.loadings_c)
    delta = np.zeros(record.n_visits)
    if record.n_answers >= 2:
        s_p = signal_estimate(record.answer_features, latents.signal_p, latents.loadings_p)
        latest = align_visits(record.answer_times, record.visit_times)
        has_pair = latest >= 1
        delta[has_pair] = s_p[latest[has_pair]] - s_p[latest[has_pair] - 1]
    return cfg.w_c * s_c + cfg.w_delta * delta


def _labels(scores: np.ndarray, noise: np.ndarray, threshold: float, label_noise: float) -> np.ndarray:
    return (scores + label_noise * abs(threshold) * noise > threshold).astype(np.int64)


def planted_oracle(record: PatientRecord, cfg: SynthConfig, latents: SynthLatents) -> np.ndarray:
    """
    Recompute the labels of a generated record from the stored latents

    This is a feature-level oracle: scores are re-derived from the record's
    observed features with the stored signal loadings, then the stored label
    noise and threshold are applied. The stored risk paths are not read.

    Raises:
        GenerationError: the record has no stored latents
    """
    stored = latents.patients.get(record.id)
    if stored is None:
        raise GenerationError(f"no latents stored for record {record.id}")
    if stored.noise.shape[0] != record.n_visits:
        raise GenerationError(
            f"latents of {record.id} cover {stored.noise.shape[0]} visits, record has {record.n_visits}"
        )
    return _labels(visit_scores(record, cfg, latents), stored.noise, latents.threshold, cfg.label_noise)


def _visit_count(cfg: SynthConfig, rng: np.random.Generator) -> int:
    if rng.random() < cfg.single_visit_fraction:
        return 1
    # mean of the multi-visit component so that the mixture mean matches the target
    tail_mean = (cfg.mean_visits - cfg.single_visit_fraction) / (1.0 - cfg.single_visit_fraction) - 2.0
    mu = np.log(max(tail_mean, 1e-3)) - 0.5 * cfg.visit_sigma**2
    return int(min(2 + round(rng.lognormal(mu, cfg.visit_sigma)), cfg.max_visits))


def _answer_count(cfg: SynthConfig, rng: np.random.Generator) -> int:
    mu = np.log(cfg.mean_answers - cfg.min_answers) - 0.5 * cfg.answer_sigma**2
    return int(min(cfg.min_answers + round(rng.lognormal(mu, cfg.answer_sigma)), cfg.max_answers))


def _risk_path(times: np.ndarray, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Stationary unit-variance AR(1) with decay rho ** dt between consecutive times"""
    risk = np.empty(times.shape[0])
    if times.shape[0] == 0:
        return risk
    shocks = rng.standard_normal(times.shape[0])
    risk[0] = shocks[0]
    decay = rho ** np.diff(times)
    for k in range(1, times.shape[0]):
        risk[k] = decay[k - 1] * risk[k - 1] + np.sqrt(1.0 - decay[k - 1] ** 2) * shocks[k]
    return risk


def _features(
    n_rows: int, width: int, risk: np.ndarray, signal: np.ndarray, loadings: np.ndarray, sigma: float,
    rng: np.random.Generator,
) -> np.ndarray:
    x = rng.standard_normal((n_rows, width))
    x[:, signal] = risk[:, None] * loadings[None, :] + sigma * rng.standard_normal((n_rows, signal.shape[0]))
    return x


def _draw_patient(
    index: int, cfg: SynthConfig, structure: Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
) -> Tuple[PatientRecord, PatientLatents]:
    """One patient with placeholder labels; its stream depends only on (seed, index)"""
    signal_c, loadings_c, signal_p, loadings_p = structure
    rng = named_stream(cfg.seed, "generation", index)
    n_visits = _visit_count(cfg, rng)
    n_answers = _answer_count(cfg, rng)

    gaps = rng.exponential(cfg.mean_visit_gap_days, size=n_visits) + 1.0
    visit_t = rng.uniform(0.0, FIRST_VISIT_WINDOW) + np.concatenate([[0.0], np.cumsum(gaps[:-1])])
    horizon = visit_t[-1] + gaps[-1]
    answer_t = np.unique(rng.uniform(0.0, horizon, size=n_answers))
    origin = min(visit_t[0], answer_t[0]) if answer_t.size else visit_t[0]
    visit_t, answer_t = visit_t - origin, answer_t - origin

    # merged timeline; visits sort before answers at equal times
    times = np.concatenate([visit_t, answer_t])
    order = np.argsort(times, kind="stable")
    merged = np.empty_like(times)
    merged[order] = _risk_path(times[order], cfg.rho, rng)
    visit_risk, answer_risk = merged[:n_visits], merged[n_visits:]

    x_c = _features(n_visits, cfg.k_c, visit_risk, signal_c, loadings_c, cfg.sigma_c, rng)
    x_p = _features(answer_t.shape[0], cfg.k_p, answer_risk, signal_p, loadings_p, cfg.sigma_p, rng)
    noise = rng.standard_normal(n_visits)
    static = StaticInfo(
        sex=int(rng.random() < cfg.female_fraction),
        age=float(np.clip(rng.normal(cfg.age_mean, cfg.age_std), *AGE_RANGE)),
    )

    record_id = f"p{index:05d}"
    record = PatientRecord(
        id=record_id,
        static=static,
        visits=tuple(ClinicianVisit(t=float(t), x=x, y=0) for t, x in zip(visit_t, x_c)),
        answers=tuple(PatientAnswer(t=float(t), x=x) for t, x in zip(answer_t, x_p)),
    )
    return record, PatientLatents(record_id, visit_risk, answer_risk, noise)


def _draw_structure(cfg: SynthConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    rng = named_stream(cfg.seed, "structure")

    def pick(width: int, count: int) -> Tuple[np.ndarray, np.ndarray]:
        signal = np.sort(rng.choice(width, size=count, replace=False))
        loadings = rng.uniform(0.5, 1.5, size=count) * rng.choice([-1.0, 1.0], size=count)
        return signal, loadings

    signal_c, loadings_c = pick(cfg.k_c, cfg.n_signal_c)
    signal_p, loadings_p = pick(cfg.k_p, cfg.n_signal_p)
    return signal_c, loadings_c, signal_p, loadings_p


def calibrate_threshold(scores: np.ndarray, noise: np.ndarray, cfg: SynthConfig) -> float:
    """
    Bisect the label threshold until the positive visit rate hits the target

    Raises:
        GenerationError: target not reached within the configured number of steps
    """
    if scores.size == 0:
        raise GenerationError("cannot calibrate a threshold without visits")
    lo, hi = float(scores.min()) - 1.0, float(scores.max()) + 1.0
    rate = float("nan")
    for step in range(cfg.max_bisection_steps):
        mid = 0.5 * (lo + hi)
        rate = float(_labels(scores, noise, mid, cfg.label_noise).mean())
        if abs(rate - cfg.positive_rate) <= cfg.rate_tolerance:
            logger.debug(f"Threshold {mid:.6f} gives positive rate {rate:.4f} after {step + 1} steps")
            return mid
        if rate > cfg.positive_rate:
            lo = mid
        else:
            hi = mid
    raise GenerationError(
        f"positive rate {cfg.positive_rate} +- {cfg.rate_tolerance} not reached after "
        f"{cfg.max_bisection_steps} bisection steps (last rate {rate:.4f})"
    )


def generate_cohort(cfg: SynthConfig) -> Tuple[Cohort, SynthLatents]:
    """
    Generate a labelled cohort and the latents that explain its labels

    Output depends only on the configuration (including its seed).

    Returns:
        (cohort, latents)
    """
    structure = _draw_structure(cfg)
    drawn = [_draw_patient(i, cfg, structure) for i in range(cfg.n_patients)]
    provisional = SynthLatents(*structure, threshold=0.0, patients={lat.id: lat for _, lat in drawn})

    scores = [visit_scores(record, cfg, provisional) for record, _ in drawn]
    if cfg.threshold is None:
        threshold = calibrate_threshold(np.concatenate(scores), np.concatenate([lat.noise for _, lat in drawn]), cfg)
    else:
        threshold = cfg.threshold
    latents = SynthLatents(*structure, threshold=threshold, patients=provisional.patients)

    records: List[PatientRecord] = []
    for (record, lat), score in zip(drawn, scores):
        labels = _labels(score, lat.noise, threshold, cfg.label_noise)
        visits = tuple(ClinicianVisit(t=v.t, x=v.x, y=int(y)) for v, y in zip(record.visits, labels))
        records.append(PatientRecord(id=record.id, static=record.static, visits=visits, answers=record.answers))

    cohort = Cohort(
        records=tuple(records),
        k_c=cfg.k_c,
        k_p=cfg.k_p,
        feature_names_c=tuple(f"clinician_{k:02d}" for k in range(cfg.k_c)),
        feature_names_p=tuple(f"patient_{k:02d}" for k in range(cfg.k_p)),
        age_mean=cfg.age_mean,
        age_std=cfg.age_std,
    )
    n_pos = int(sum(r.labels.sum() for r in records))
    logger.info(
        f"Generated {len(cohort)} patients, {cohort.n_visits} visits "
        f"({n_pos / max(cohort.n_visits, 1):.3f} positive), threshold {threshold:.4f}"
    )
    return cohort, latents


class _LatentsHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    signal_c: List[int]
    loadings_c: List[float]
    signal_p: List[int]
    loadings_p: List[float]
    threshold: float


class _PatientLatentsLine(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    visit_risk: List[float]
    answer_risk: List[float]
    noise: List[float]


def write_latents(latents: SynthLatents, path: Union[str, Path]) -> Path:
    """Sidecar JSONL next to a generated cohort: structure header, then one line per patient"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "signal_c": latents.signal_c.tolist(),
        "loadings_c": latents.loadings_c.tolist(),
        "signal_p": latents.signal_p.tolist(),
        "loadings_p": latents.loadings_p.tolist(),
        "threshold": float(latents.threshold),
    }
    lines = [json.dumps(header, separators=(",", ":"))]
    for lat in latents.patients.values():
        lines.append(
            json.dumps(
                {
                    "id": lat.id,
                    "visit_risk": lat.visit_risk.tolist(),
                    "answer_risk": lat.answer_risk.tolist(),
                    "noise": lat.noise.tolist(),
                },
                separators=(",", ":"),
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_latents(path: Union[str, Path]) -> SynthLatents:
    path = Path(path)
    try:
        lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
        if not lines:
            raise GenerationError(f"latents file {path} is empty")
        header = _LatentsHeader.model_validate_json(lines[0])
        patients = {}
        for raw in lines[1:]:
            line = _PatientLatentsLine.model_validate_json(raw)
            patients[line.id] = PatientLatents(
                line.id, np.array(line.visit_risk), np.array(line.answer_risk), np.array(line.noise)
            )
    except (OSError, ValidationError) as e:
        raise GenerationError(f"cannot read latents {path}: {e}") from e
    return SynthLatents(
        signal_c=np.array(header.signal_c, dtype=np.int64),
        loadings_c=np.array(header.loadings_c),
        signal_p=np.array(header.signal_p, dtype=np.int64),
        loadings_p=np.array(header.loadings_p),
        threshold=header.threshold,
        patients=patients,
    )
