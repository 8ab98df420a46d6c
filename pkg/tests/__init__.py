"""
Shared helpers for the dualseq test suite
"""

from typing import Callable, Optional

import numpy as np

from dualseq.data.records import ClinicianVisit, PatientAnswer, PatientRecord, StaticInfo
from dualseq.nn.core import ParamVector


def make_record(
    rng: np.random.Generator,
    n_visits: int,
    n_answers: int,
    k_c: int = 4,
    k_p: int = 3,
    record_id: str = "p00000",
    labels: Optional[np.ndarray] = None,
) -> PatientRecord:
    """Random valid record with strictly increasing event times"""
    visit_t = np.cumsum(rng.uniform(1.0, 10.0, size=n_visits))
    answer_t = np.sort(rng.uniform(0.0, visit_t[-1] + 5.0, size=n_answers)) if n_answers else np.zeros(0)
    answer_t = np.unique(answer_t)
    if labels is None:
        labels = rng.integers(0, 2, size=n_visits)
    return PatientRecord(
        id=record_id,
        static=StaticInfo(sex=int(rng.integers(0, 2)), age=float(rng.uniform(20.0, 70.0))),
        visits=tuple(
            ClinicianVisit(t=float(t), x=rng.standard_normal(k_c), y=int(y)) for t, y in zip(visit_t, labels)
        ),
        answers=tuple(PatientAnswer(t=float(t), x=rng.standard_normal(k_p)) for t in answer_t),
    )


def numeric_gradient(loss_fn: Callable[[ParamVector], float], params: ParamVector, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of loss_fn at params"""
    theta = params.values
    out = np.empty_like(theta)
    for k in range(theta.size):
        shifted = theta.copy()
        shifted[k] = theta[k] + eps
        f_plus = loss_fn(params.with_values(shifted))
        shifted[k] = theta[k] - eps
        out[k] = (f_plus - loss_fn(params.with_values(shifted))) / (2.0 * eps)
    return out


def assert_gradient(
    loss_fn: Callable[[ParamVector], float],
    params: ParamVector,
    analytic: ParamVector,
    rtol: float = 1e-5,
    atol: float = 1e-8,
) -> None:
    """Analytic gradient agrees with finite differences; atol absorbs roundoff on near-zero coordinates"""
    np.testing.assert_allclose(analytic.values, numeric_gradient(loss_fn, params), rtol=rtol, atol=atol)
