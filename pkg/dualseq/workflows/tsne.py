"""
Exact t-SNE

Every point gets its own Gaussian bandwidth, found by bisection so that the
entropy of its conditional neighbour distribution equals log(perplexity). The
symmetrised affinities are matched by a Student-t kernel in two dimensions with
gradient descent, per-coordinate gains, momentum and early exaggeration.
"""

import logging
from typing import List, NamedTuple, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform

from dualseq.errors import DimensionError, NumericalError
from dualseq.settings import TsneConfig

logger = logging.getLogger(__name__)

MACHINE_EPSILON = np.finfo(np.double).eps
DUPLICATE_JITTER = 1e-10
MIN_GAIN = 0.01
MIN_POINTS = 5


class TsneResult(NamedTuple):
    coords: np.ndarray
    kl_history: List[float]
    entropy_residuals: np.ndarray
    perplexity: float


def squared_distances(points: np.ndarray) -> np.ndarray:
    return squareform(pdist(points, "sqeuclidean"))


def _row_entropy(row: np.ndarray, beta: float) -> Tuple[float, np.ndarray]:
    """Entropy and normalised Gaussian weights of one row (shifted by its minimum for stability)"""
    shifted = row - row.min()
    weights = np.exp(-shifted * beta)
    total = weights.sum()
    p = weights / total
    return float(np.log(total) + beta * np.dot(shifted, p)), p


def conditional_probabilities(
    sq_distances: np.ndarray, perplexity: float, tolerance: float = 1e-5, max_steps: int = 50
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row-stochastic P(j|i) with per-row precision found by bisection

    Args:
        sq_distances: (n x n) squared distances
        perplexity: Target effective neighbour count
        tolerance: Allowed |entropy - log(perplexity)|
        max_steps: Bisection steps per row

    Returns:
        (P, |entropy - log(perplexity)| per row); P has a zero diagonal and rows summing to 1
    """
    n = sq_distances.shape[0]
    target = np.log(perplexity)
    p_cond = np.zeros((n, n))
    residuals = np.zeros(n)
    others = ~np.eye(n, dtype=bool)
    unconverged = 0
    for i in range(n):
        row = sq_distances[i, others[i]]
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_steps):
            entropy, p = _row_entropy(row, beta)
            diff = entropy - target
            if abs(diff) <= tolerance:
                break
            # entropy falls as precision grows
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
        else:
            entropy, p = _row_entropy(row, beta)
            diff = entropy - target
        if abs(diff) > tolerance:
            unconverged += 1
        p_cond[i, others[i]] = p
        residuals[i] = abs(diff)
    if unconverged:
        logger.warning(f"Perplexity bisection did not converge for {unconverged} of {n} points")
    return p_cond, residuals


def joint_probabilities(p_cond: np.ndarray) -> np.ndarray:
    """(P + P^T) / 2n, summing to 1"""
    return (p_cond + p_cond.T) / (2.0 * p_cond.shape[0])


def _student_t(coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(Q, unnormalised kernel 1 / (1 + |y_i - y_j|^2)) with zero diagonals"""
    kernel = 1.0 / (1.0 + squared_distances(coords))
    np.fill_diagonal(kernel, 0.0)
    return np.maximum(kernel / kernel.sum(), MACHINE_EPSILON), kernel


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _prepare(points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise DimensionError(f"t-SNE expects an (n x d) array, got shape {x.shape}")
    if x.shape[0] < MIN_POINTS:
        raise DimensionError(f"t-SNE needs at least {MIN_POINTS} points, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise NumericalError("t-SNE input contains non-finite values")
    if np.unique(x, axis=0).shape[0] < x.shape[0]:
        logger.debug("Duplicate points found; adding jitter")
        x = x + DUPLICATE_JITTER * rng.standard_normal(x.shape)
    return x


def tsne(points: np.ndarray, cfg: TsneConfig, rng: np.random.Generator) -> TsneResult:
    """
    Embed points in two dimensions

    Args:
        points: (n x d) input vectors
        cfg: Perplexity, learning rate, iterations, exaggeration and momentum schedule
        rng: Stream for the initial layout and duplicate jitter

    Returns:
        TsneResult with final coordinates, the KL divergence (against the
        un-exaggerated affinities) at every iteration, per-point calibration
        residuals and the perplexity actually used
    """
    x = _prepare(points, rng)
    n = x.shape[0]
    perplexity = cfg.perplexity
    if n <= 3 * perplexity:
        perplexity = (n - 1) / 3.0
        logger.warning(f"Perplexity {cfg.perplexity:g} too large for {n} points; using {perplexity:g}")

    p_cond, residuals = conditional_probabilities(
        squared_distances(x), perplexity, cfg.tolerance, cfg.max_bisection_steps
    )
    p = np.maximum(joint_probabilities(p_cond), MACHINE_EPSILON)
    np.fill_diagonal(p, 0.0)

    coords = 1e-4 * rng.standard_normal((n, 2))
    update = np.zeros_like(coords)
    gains = np.ones_like(coords)
    history: List[float] = []
    for it in range(cfg.iters):
        exaggeration = cfg.exaggeration if it < cfg.exaggeration_iters else 1.0
        momentum = cfg.momentum_initial if it < cfg.exaggeration_iters else cfg.momentum_final
        q, kernel = _student_t(coords)
        weights = (exaggeration * p - q) * kernel
        grad = 4.0 * (weights.sum(axis=1)[:, None] * coords - weights @ coords)

        same_sign = (grad > 0) == (update > 0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, MIN_GAIN, out=gains)
        update = momentum * update - cfg.lr * gains * grad
        coords = coords + update
        coords -= coords.mean(axis=0)

        history.append(kl_divergence(p, _student_t(coords)[0]))
        if not np.isfinite(history[-1]):
            raise NumericalError(f"t-SNE diverged at iteration {it + 1}")
        if (it + 1) % 250 == 0:
            logger.info(f"t-SNE iteration {it + 1}/{cfg.iters}: KL {history[-1]:.4f}")
    return TsneResult(coords, history, residuals, perplexity)
