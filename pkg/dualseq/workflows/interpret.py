"""
Interpretation of a trained dual classifier

Feature relevance reads the first layer of an input net: each input feature
fans out to every hidden unit, and its weight column summarises how strongly the
network listens to it. Latent points are the merged per-visit vectors that feed
the classifier, exported together with a 2-D embedding for plotting.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from dualseq.data.records import PatientRecord
from dualseq.errors import ConfigurationError, DimensionError, NumericalError
from dualseq.models.dual_rnn import ModelParams, forward_record

logger = logging.getLogger(__name__)

Source = Literal["clinician", "patient"]
RelevanceMethod = Literal["norm", "max"]

EMBEDDING_COLUMNS = ["id", "visit", "x", "y", "label", "prob"]


def feature_relevance(
    model: ModelParams,
    feature_names: Sequence[str],
    source: Source = "clinician",
    method: RelevanceMethod = "norm",
) -> List[Tuple[str, float]]:
    """
    Rank input features by their first-layer weights

    Args:
        model: Trained model
        feature_names: Names of the source's input features, in column order
        source: Which input net to read
        method: "norm" for the L2 norm of each feature's weight column,
            "max" for its largest absolute weight

    Returns:
        (name, score) pairs, highest first; scores are divided by the maximum so the top one is 1.0
    """
    net = {"clinician": model.input_net_c, "patient": model.input_net_p}.get(source)
    if net is None:
        raise ConfigurationError(f"unknown source '{source}', expected clinician or patient")
    weights = net.layers[0].weights
    if len(feature_names) != weights.shape[1]:
        raise DimensionError(f"{len(feature_names)} feature names for a layer of input width {weights.shape[1]}")
    if method == "norm":
        raw = np.linalg.norm(weights, axis=0)
    elif method == "max":
        raw = np.abs(weights).max(axis=0)
    else:
        raise ConfigurationError(f"unknown relevance method '{method}'")
    top = raw.max()
    if not top > 0:
        raise NumericalError(f"{source} input layer has all-zero weights; nothing to rank")
    scores = raw / top
    order = np.argsort(-scores, kind="stable")
    return [(feature_names[i], float(scores[i])) for i in order]


def write_relevance(rows: Sequence[Tuple[str, float]], path: Union[str, Path]) -> Path:
    """CSV with columns rank,score,feature (rank starts at 1)"""
    frame = pd.DataFrame(
        {
            "rank": np.arange(1, len(rows) + 1),
            "score": [score for _, score in rows],
            "feature": [name for name, _ in rows],
        }
    )
    path = Path(path)
    frame.to_csv(path, index=False)
    logger.info(f"Wrote relevance of {len(rows)} features to {path}")
    return path


@dataclass(frozen=True, eq=False)
class LatentPoints:
    vectors: np.ndarray
    labels: np.ndarray
    probs: np.ndarray
    ids: List[str]
    visits: np.ndarray

    def __len__(self) -> int:
        return self.vectors.shape[0]


def latent_points(model: ModelParams, records: Sequence[PatientRecord]) -> LatentPoints:
    """One merged [o_c ; patient slot ; sex ; age] vector per visit, in record order, without dropout"""
    vectors, labels, probs, ids, visits = [], [], [], [], []
    for record in records:
        trace = forward_record(model, record)
        vectors.append(trace.merged)
        labels.append(record.labels)
        probs.append(trace.probs)
        ids.extend([record.id] * record.n_visits)
        visits.append(np.arange(record.n_visits))
    if not vectors:
        empty = np.zeros(0, dtype=np.int64)
        return LatentPoints(np.zeros((0, model.config.merged_width)), empty, np.zeros(0), [], empty)
    return LatentPoints(
        np.vstack(vectors), np.concatenate(labels), np.concatenate(probs), ids, np.concatenate(visits)
    )


def export_embedding(coords: np.ndarray, points: LatentPoints, path: Union[str, Path]) -> Path:
    """
    Write the embedding with its per-visit metadata

    Columns: id, visit, x, y, label, prob. Coordinates are written with full
    precision so parsing them back recovers the floats.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise DimensionError(f"embedding coordinates must be (n x 2), got {coords.shape}")
    if coords.shape[0] != len(points):
        raise DimensionError(f"{coords.shape[0]} coordinates for {len(points)} latent points")
    frame = pd.DataFrame(
        {
            "id": points.ids,
            "visit": points.visits,
            "x": coords[:, 0],
            "y": coords[:, 1],
            "label": points.labels,
            "prob": points.probs,
        },
        columns=EMBEDDING_COLUMNS,
    )
    path = Path(path)
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Wrote {len(frame)} embedded points to {path}")
    return path
