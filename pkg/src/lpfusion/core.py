"""Linear fusion of one-class classifier scores.

A sample is described by a vector ``s`` of R per-classifier scores, and the
ensemble decision is the weighted sum ``h = s @ omega`` compared against a
threshold. Training minimizes the hinge loss ``sum_i max(0, 1 - y_i s_i @ omega)``
subject to ``||omega||_p <= 1``; see :mod:`lpfusion.solver`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .normalize import TwoSidedMinMaxState

TARGET = 1
ANOMALY = -1


def as_score_matrix(S) -> np.ndarray:
    """Validate and return ``S`` as a 2-D float64 array of shape (n, R)."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim == 1:
        S = S[np.newaxis, :]
    if S.ndim != 2 or S.shape[0] < 1 or S.shape[1] < 1:
        raise ValueError(f"score matrix must be n x R with n, R >= 1, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("score matrix contains non-finite entries")
    return S


def as_labels(y, n: int | None = None) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if not np.all((y == 1.0) | (y == -1.0)):
        raise ValueError("labels must be +1 (target) or -1 (anomaly)")
    if n is not None and y.shape[0] != n:
        raise ValueError(f"expected {n} labels, got {y.shape[0]}")
    return y


def _check_weights(omega, R: int) -> np.ndarray:
    omega = np.asarray(omega, dtype=np.float64).ravel()
    if omega.shape[0] != R:
        raise ValueError(f"dimension mismatch: expected R={R} weights, got {omega.shape[0]}")
    if not np.all(np.isfinite(omega)):
        raise ValueError("weights contain non-finite entries")
    return omega


def _prepare(S, y, omega):
    S = as_score_matrix(S)
    y = as_labels(y, S.shape[0])
    omega = _check_weights(omega, S.shape[1])
    return S, y, omega


def lp_norm(x, p: float) -> float:
    x = np.abs(np.asarray(x, dtype=np.float64))
    if np.isinf(p):
        return float(x.max(initial=0.0))
    m = x.max(initial=0.0)
    if m == 0.0:
        return 0.0
    # scale by the max entry so large p cannot overflow
    return float(m * np.sum((x / m) ** p) ** (1.0 / p))


def margins(S, y, omega) -> np.ndarray:
    """Per-sample slack ``1 - y_i s_i @ omega``."""
    S, y, omega = _prepare(S, y, omega)
    return 1.0 - y * (S @ omega)


def hinge_objective(S, y, omega) -> float:
    return float(np.maximum(0.0, margins(S, y, omega)).sum())


def hinge_subgradient(S, y, omega) -> np.ndarray:
    """Subgradient of :func:`hinge_objective` at ``omega``.

    Only samples with strictly positive slack contribute; a sample sitting
    exactly on the margin adds nothing.
    """
    S, y, omega = _prepare(S, y, omega)
    active = (1.0 - y * (S @ omega)) > 0.0
    return -(y[active, np.newaxis] * S[active]).sum(axis=0)


def smoothed_hinge_gradient(S, y, omega, mu: float) -> np.ndarray:
    """Gradient of the Huber-smoothed hinge with width ``mu``.

    Each sample contributes ``-y_i s_i * clip(slack_i / mu, 0, 1)``; as
    ``mu -> 0`` this tends to :func:`hinge_subgradient`.
    """
    if mu <= 0.0:
        return hinge_subgradient(S, y, omega)
    S, y, omega = _prepare(S, y, omega)
    a = np.clip((1.0 - y * (S @ omega)) / mu, 0.0, 1.0)
    return -((a * y)[:, np.newaxis] * S).sum(axis=0)


def least_squares_objective(S, y, omega) -> float:
    return float(np.sum(margins(S, y, omega) ** 2))


def least_squares_gradient(S, y, omega) -> np.ndarray:
    S, y, omega = _prepare(S, y, omega)
    r = 1.0 - y * (S @ omega)
    return -2.0 * ((r * y)[:, np.newaxis] * S).sum(axis=0)


LOSSES = {
    "hinge": (hinge_objective, hinge_subgradient),
    "least_squares": (least_squares_objective, least_squares_gradient),
}


@dataclass(frozen=True)
class FusionModel:
    """A fitted fusion rule.

    Attributes:
        weights: Fusion weight vector of length R.
        p: Norm parameter the weights were trained under.
        threshold: Decision threshold on the fused score.
        orientation: Per-classifier sign mapping raw scores to target-positive
            scores (-1 for novelty scores, +1 for similarity scores).
        normalizers: Per-classifier two-sided min-max states, applied after
            orientation. ``None`` means scores are already normalized.
    """

    weights: np.ndarray
    p: float
    threshold: float = 1.0
    orientation: np.ndarray | None = None
    normalizers: tuple[TwoSidedMinMaxState, ...] | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).ravel()
        if w.size < 1 or not np.all(np.isfinite(w)):
            raise ValueError("weights must be a non-empty finite vector")
        if not self.p >= 1.0:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if lp_norm(w, self.p) > 1.0 + 1e-9:
            raise ValueError(f"weights violate ||w||_p <= 1 (norm {lp_norm(w, self.p)!r})")
        if not np.isfinite(self.threshold):
            raise ValueError("threshold must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.orientation is not None:
            o = np.array(self.orientation, dtype=np.float64).ravel()
            if o.shape != w.shape or not np.all(np.abs(o) == 1.0):
                raise ValueError("orientation must hold one +1/-1 entry per classifier")
            o.setflags(write=False)
            object.__setattr__(self, "orientation", o)
        if self.normalizers is not None:
            if len(self.normalizers) != w.size:
                raise ValueError("need one score normalizer per classifier")
            object.__setattr__(self, "normalizers", tuple(self.normalizers))

    @property
    def n_classifiers(self) -> int:
        return self.weights.size

    def transform(self, raw) -> np.ndarray:
        """Map raw base-learner scores to oriented, normalized scores."""
        raw = np.asarray(raw, dtype=np.float64)
        single = raw.ndim == 1
        S = np.atleast_2d(raw)
        if S.shape[1] != self.n_classifiers:
            raise ValueError(
                f"dimension mismatch: expected R={self.n_classifiers} scores, got {S.shape[1]}"
            )
        if not np.all(np.isfinite(S)):
            raise ValueError("scores contain non-finite entries")
        if self.orientation is not None:
            S = S * self.orientation
        if self.normalizers is not None:
            S = np.column_stack([st.apply(S[:, j]) for j, st in enumerate(self.normalizers)])
        return S[0] if single else S

    def decision_function(self, raw) -> np.ndarray | float:
        """Fused score of raw score vector(s)."""
        return self.transform(raw) @ self.weights

    def predict(self, raw):
        h = self.decision_function(raw)
        return np.where(h > self.threshold, TARGET, ANOMALY)


def fused_score(s, model) -> float:
    """Inner product of an already-normalized score vector with the weights.

    ``model`` may be a :class:`FusionModel` or a bare weight vector.
    """
    omega = model.weights if isinstance(model, FusionModel) else np.asarray(model, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64).ravel()
    if s.shape[0] != omega.shape[0]:
        raise ValueError(f"dimension mismatch: expected R={omega.shape[0]} scores, got {s.shape[0]}")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores contain non-finite entries")
    return float(s @ omega)


def predict(s, model: FusionModel) -> int:
    """Label a single raw score vector: +1 iff its fused score exceeds the threshold."""
    if not isinstance(model, FusionModel):
        raise TypeError("predict needs a fitted FusionModel")
    return int(model.predict(np.asarray(s, dtype=np.float64).ravel()))
