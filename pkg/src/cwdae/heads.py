"""Per-column decoder heads.

Continuous columns get a monotone piecewise-linear quantile function
``Q(alpha) = intercept + sum_k softplus(beta_k) * overlap(alpha, segment_k)``
on an equally spaced knot grid; discrete columns get softmax probabilities,
sampled with straight-through Gumbel-Softmax during training and with the
Gumbel-max trick at generation time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import NonFiniteError, Tensor, as_tensor, straight_through

LOG_FLOOR = 1e-12


def knots(n_knots: int) -> np.ndarray:
    """Segment edges d_0=0 < d_1 < ... < d_M < d_{M+1}=1 (length M+2)."""
    return np.arange(n_knots + 2) / (n_knots + 1.0)


def segment_weights(alpha, n_knots: int) -> np.ndarray:
    """Overlap of [0, alpha] with each of the M+1 segments.

    Returns shape ``alpha.shape + (M+1,)``.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any((alpha < 0) | (alpha > 1)) or not np.all(np.isfinite(alpha)):
        raise ValueError("quantile levels must lie in [0, 1]")
    d = knots(n_knots)
    lo, hi = d[:-1], d[1:]
    return np.clip(np.minimum(alpha[..., None], hi) - lo, 0.0, None)


@dataclass
class SplineParams:
    """Raw head output for one continuous column: intercept and M+1 raw slopes."""

    intercept: float
    raw_slopes: np.ndarray

    @property
    def n_knots(self) -> int:
        return len(self.raw_slopes) - 1

    def slopes(self) -> np.ndarray:
        return np.logaddexp(0.0, np.asarray(self.raw_slopes, dtype=np.float64))


def quantile(sp: SplineParams, alpha) -> np.ndarray | float:
    """Evaluate the spline quantile function at ``alpha`` in [0, 1]."""
    w = segment_weights(alpha, sp.n_knots)
    out = sp.intercept + w @ sp.slopes()
    return float(out) if np.ndim(out) == 0 else out


def quantile_batch(intercept: Tensor, raw_slopes: Tensor, alpha: np.ndarray) -> Tensor:
    """Differentiable batch form: intercept (n,), raw_slopes (n, M+1), alpha (n,)."""
    w = segment_weights(alpha, raw_slopes.shape[1] - 1)
    return intercept + (raw_slopes.softplus() * w).sum(axis=1)


def gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.gumbel(0.0, 1.0, size=shape)


def gumbel_softmax_st(logits, temperature: float, rng: np.random.Generator | None = None,
                      noise: np.ndarray | None = None, hard: bool = True) -> Tensor:
    """Relaxed categorical sample over the last axis.

    With ``hard=True`` the forward value is an exact one-hot at
    ``argmax(logits + G)`` and gradients flow through
    ``softmax((logits + G) / temperature)``. ``hard=False`` returns the soft
    sample itself. Pass ``noise`` to fix the Gumbel draws.
    """
    logits = as_tensor(logits)
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if logits.shape[-1] < 2:
        raise ValueError("categorical heads need at least two levels")
    if not np.all(np.isfinite(logits.data)):
        raise NonFiniteError("non-finite logits")
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required")
        noise = gumbel(rng, logits.shape)
    soft = ((logits + noise) * (1.0 / temperature)).softmax(axis=-1)
    if not hard:
        return soft
    idx = np.argmax(logits.data + noise, axis=-1)
    one_hot = np.zeros(logits.shape)
    np.put_along_axis(one_hot, idx[..., None], 1.0, axis=-1)
    return straight_through(soft, one_hot)


def gumbel_max_sample(probs, rng: np.random.Generator) -> np.ndarray | int:
    """argmax(log p + G): an exact draw from Categorical(p) over the last axis."""
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < 0) or not np.allclose(probs.sum(axis=-1), 1.0, atol=1e-9):
        raise ValueError("probabilities must lie on the simplex")
    scores = np.log(np.maximum(probs, LOG_FLOOR)) + gumbel(rng, probs.shape)
    idx = np.argmax(scores, axis=-1)
    return int(idx) if idx.ndim == 0 else idx


@dataclass(frozen=True)
class AnnealSchedule:
    floor: float = 0.2
    initial: float = 10.0
    decay: float = 0.025

    def __post_init__(self):
        if not self.floor > 0:
            raise ValueError(f"temperature floor must be positive, got {self.floor}")


def temperature(schedule: AnnealSchedule, epoch: int) -> float:
    """max(initial * exp(-decay * epoch), floor)."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return float(max(schedule.initial * math.exp(-schedule.decay * epoch), schedule.floor))
