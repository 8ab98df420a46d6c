"""
Model checkpoints as versioned JSON text

Every named parameter array is stored with its shape and its values written
with the shortest round-trip float repr, so save -> load is bit-exact and equal
models give byte-identical files.
"""

import dataclasses
import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
from pydantic import ValidationError

from dualseq.errors import CheckpointError
from dualseq.models.dual_rnn import BRANCHES, ModelParams
from dualseq.nn.core import named_arrays, with_arrays
from dualseq.settings import ModelConfig

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dualseq-checkpoint"
CHECKPOINT_VERSION = 1


def checkpoint_dict(model: ModelParams) -> Dict[str, Any]:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.model_dump(mode="json"),
        "ablated": sorted(model.ablated),
        "arrays": {
            name: {"shape": list(a.shape), "values": a.ravel().tolist()} for name, a in named_arrays(model).items()
        },
    }


def save_checkpoint(model: ModelParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_dict(model), indent=1, allow_nan=False) + "\n", encoding="utf-8")
    logger.info(f"Saved checkpoint to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    """
    Rebuild a model from a checkpoint file

    Raises:
        CheckpointError: unreadable file, foreign format, unsupported version or
            arrays that do not match the stored architecture
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(raw, dict) or raw.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a dualseq checkpoint")
    if raw.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {raw.get('version')} (expected {CHECKPOINT_VERSION})")

    try:
        config = ModelConfig.model_validate(raw["config"])
    except (KeyError, ValidationError) as e:
        raise CheckpointError(f"invalid model configuration in {path}: {e}") from e
    ablated = frozenset(raw.get("ablated", []))
    if not ablated <= set(BRANCHES):
        raise CheckpointError(f"unknown ablated branches {sorted(ablated - set(BRANCHES))}")

    # the skeleton only provides names and shapes; every value is overwritten
    skeleton = ModelParams.init(config, np.random.default_rng(0))
    expected = named_arrays(skeleton)
    stored = raw.get("arrays", {})
    if set(stored) != set(expected):
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        raise CheckpointError(f"checkpoint arrays do not match the architecture (missing {missing}, extra {extra})")

    arrays = {}
    for name, entry in stored.items():
        values = np.array(entry["values"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if shape != expected[name].shape or values.size != int(np.prod(shape)):
            raise CheckpointError(f"{name}: stored shape {shape} does not match {expected[name].shape}")
        arrays[name] = values.reshape(shape)
    return dataclasses.replace(with_arrays(skeleton, arrays), ablated=ablated)
