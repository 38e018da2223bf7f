"""Feature and score normalization.

Features are Z-scored with statistics from the training split. Base-learner
scores go through a two-sided min-max map: a lower and an upper threshold are
placed so that roughly rho/2 percent of the training scores fall beyond each
one, and scores are then min-max scaled between them. Clipping to [0, 1] is
optional: it creates ties among scores beyond a threshold, which costs ranking
quality, so the benchmark pipeline leaves it off by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

RHO_GRID = tuple(range(1, 11))


@dataclass(frozen=True)
class ZScoreState:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.mean.shape[0]:
            raise ValueError(
                f"expected {self.mean.shape[0]} feature columns, got shape {X.shape}"
            )
        return (X - self.mean) / self.std


def zscore_fit(X) -> ZScoreState:
    """Fit per-column mean and population std; constant columns get std 1."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"cannot fit Z-score on an empty matrix (shape {X.shape})")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    # summation error can leave a tiny nonzero std on an exactly constant column
    constant = np.ptp(X, axis=0) == 0.0
    mean = np.where(constant, X[0], mean)
    std = np.where(constant | (std == 0.0), 1.0, std)
    mean.setflags(write=False)
    std.setflags(write=False)
    return ZScoreState(mean=mean, std=std)


def zscore_apply(X, state: ZScoreState) -> np.ndarray:
    return state.apply(X)


@dataclass(frozen=True)
class TwoSidedMinMaxState:
    """Fitted thresholds; with ``clip=False`` scores beyond them map outside [0, 1]."""

    lower: float
    upper: float
    rho: int
    clip: bool = True

    @property
    def degenerate(self) -> bool:
        return not self.upper > self.lower

    def apply(self, scores) -> np.ndarray:
        scores = np.asarray(scores, dtype=np.float64)
        if self.degenerate:
            return np.full(scores.shape, 0.5)
        out = (scores - self.lower) / (self.upper - self.lower)
        return np.clip(out, 0.0, 1.0) if self.clip else out


def tail_count(m: int, rho: int) -> int:
    """Number of order statistics cut per tail, ``max(1, round(m * rho / 200))``.

    Halves round up, not to even.
    """
    return max(1, math.floor(m * rho / 200.0 + 0.5))


def tsmm_fit(scores, rho: int, clip: bool = True) -> TwoSidedMinMaxState:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size < 2:
        raise ValueError("two-sided min-max needs at least 2 scores")
    if rho not in RHO_GRID:
        raise ValueError(f"rho must be an integer percentage in 1..10, got {rho!r}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite entries")
    k = min(tail_count(scores.size, rho), scores.size)
    ordered = np.sort(scores)
    return TwoSidedMinMaxState(lower=float(ordered[k - 1]), upper=float(ordered[-k]), rho=int(rho), clip=clip)


def tsmm_apply(score, state: TwoSidedMinMaxState):
    out = state.apply(score)
    return float(out) if np.ndim(out) == 0 else out
