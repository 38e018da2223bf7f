"""Frank-Wolfe solver for the lp-ball constrained fusion problem.

    minimize  sum_i max(0, 1 - y_i s_i @ w)   subject to  ||w||_p <= 1

Each iteration takes a subgradient ``g``, calls the linear minimization
oracle ``z = argmin_{||z||_p <= 1} z @ g`` (closed form on lp balls) and
moves ``w <- (1 - gamma) w + gamma z`` with the open-loop step
``gamma = 2 / (2 + t)``. The Frank-Wolfe gap ``(w - z) @ g`` upper-bounds
``f(w) - f*`` for any subgradient of a convex ``f`` and doubles as the
stopping certificate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import core

logger = logging.getLogger(__name__)

P_GRID = (32 / 31, 16 / 15, 8 / 7, 4 / 3, 2.0, 4.0, 8.0, 10.0, 100.0)

TERMINATION_REASONS = ("max-iters", "gap", "precision", "zero-subgradient")


@dataclass(frozen=True)
class SolverConfig:
    """Settings for :func:`fw_solve`.

    Attributes:
        p: Norm parameter, ``1 <= p <= inf``.
        max_iters: Iteration budget T.
        gap_tol: Stop once the duality gap drops to this value.
        precision_tol: Stop once the largest absolute change between
            consecutive iterates drops to this value. 0 disables it.
        loss: ``"hinge"`` or ``"least_squares"``.
        smoothing: Initial Huber width for the hinge search direction
            (decays as 1/sqrt(t)); 0 gives plain subgradient steps.
    """

    p: float = 2.0
    max_iters: int = 1000
    gap_tol: float = 1e-6
    precision_tol: float = 0.0
    loss: str = "hinge"
    smoothing: float = 0.3

    def __post_init__(self):
        if not self.p >= 1.0:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not (self.gap_tol >= 0.0 and self.precision_tol >= 0.0 and self.smoothing >= 0.0):
            raise ValueError("tolerances and smoothing must be non-negative")
        if self.loss not in core.LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; choose from {sorted(core.LOSSES)}")


@dataclass(frozen=True)
class IterationRecord:
    t: int
    objective: float
    gap: float
    step: float


@dataclass
class SolveTrace:
    """Per-iteration history of a Frank-Wolfe run.

    ``final_objective`` and ``final_gap`` are evaluated at the returned point,
    which after a moving iteration is one step past the last record.
    """

    records: list[IterationRecord] = field(default_factory=list)
    reason: str = "max-iters"
    final_objective: float = float("nan")
    final_gap: float = float("nan")
    iterates: list[np.ndarray] | None = None

    def __len__(self):
        return len(self.records)

    def as_array(self) -> np.ndarray:
        """Rows of ``(t, objective, gap, step)``."""
        return np.array([(r.t, r.objective, r.gap, r.step) for r in self.records], dtype=np.float64)


def step_size(t: int) -> float:
    return 2.0 / (2.0 + t)


def initial_weights(R: int, p: float) -> np.ndarray:
    """Uniform point on the unit lp sphere, ``R**(-1/p) * 1`` (all ones for p = inf)."""
    if np.isinf(p):
        return np.ones(R)
    return np.full(R, float(R) ** (-1.0 / p))


def lmo_lp_ball(g, p: float) -> np.ndarray | None:
    """Minimize ``z @ g`` over the unit lp ball.

    Returns ``None`` when ``g`` is identically zero (every feasible point is
    optimal, so the caller is at a stationary point).

    For ``1 < p < inf`` the minimizer is
    ``-sign(g) |g|**(1/(p-1)) / || |g|**(1/(p-1)) ||_p``. The power is taken
    on ``|g| / max|g|`` so that exponents like 31 (p = 32/31) cannot overflow.
    ``p == 1`` returns a signed unit vector at the first index of max ``|g|``;
    ``p == inf`` returns ``-sign(g)``.
    """
    g = np.asarray(g, dtype=np.float64).ravel()
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient contains non-finite entries")
    if not p >= 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    return _lmo(g, p)


def _lmo(g: np.ndarray, p: float) -> np.ndarray | None:
    d = np.abs(g)
    d_max = d.max(initial=0.0)
    if d_max == 0.0:
        return None
    if p == 1.0:
        k = int(np.argmax(d))
        z = np.zeros_like(g)
        z[k] = -np.sign(g[k])
        return z
    if np.isinf(p):
        return -np.sign(g)
    u = (d / d_max) ** (1.0 / (p - 1.0))
    # max(u) == 1, so this norm is well scaled
    u /= np.sum(u**p) ** (1.0 / p)
    return -np.sign(g) * u


def duality_gap(omega, z, g) -> float:
    omega = np.asarray(omega, dtype=np.float64).ravel()
    z = np.asarray(z, dtype=np.float64).ravel()
    g = np.asarray(g, dtype=np.float64).ravel()
    if not omega.shape == z.shape == g.shape:
        raise ValueError(f"dimension mismatch: {omega.shape}, {z.shape}, {g.shape}")
    return float((omega - z) @ g)


def frank_wolfe(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    lmo: Callable[[np.ndarray], np.ndarray | None],
    x0: np.ndarray,
    max_iters: int,
    gap_tol: float = 0.0,
    precision_tol: float = 0.0,
    step: Callable[[int, np.ndarray, np.ndarray, np.ndarray], float] | None = None,
    search_gradient: Callable[[np.ndarray, int], np.ndarray] | None = None,
    keep_iterates: bool = False,
) -> tuple[np.ndarray, SolveTrace]:
    """Generic Frank-Wolfe loop over ``t = 1..max_iters``.

    ``gradient`` is the (sub)gradient used for the duality-gap certificate.
    ``search_gradient(x, t)``, when given, replaces it for choosing the FW
    vertex. ``step(t, x, direction, grad)`` overrides the default
    ``2 / (2 + t)``. Iterations that terminate (stationary or gap reached) are
    recorded but do not move the iterate.
    """
    x = np.array(x0, dtype=np.float64)
    trace = SolveTrace(iterates=[x.copy()] if keep_iterates else None)
    for t in range(1, max_iters + 1):
        g = gradient(x)
        z_cert = lmo(g)
        gamma = step_size(t)
        if z_cert is None:
            trace.records.append(IterationRecord(t, objective(x), 0.0, gamma))
            trace.reason = "zero-subgradient"
            break
        gap = duality_gap(x, z_cert, g)
        if gap <= gap_tol:
            trace.records.append(IterationRecord(t, objective(x), gap, gamma))
            trace.reason = "gap"
            break
        if search_gradient is None:
            h, z = g, z_cert
        else:
            h = search_gradient(x, t)
            z = lmo(h)
            if z is None:
                z = z_cert
        if step is not None:
            gamma = step(t, x, z - x, h)
        trace.records.append(IterationRecord(t, objective(x), gap, gamma))
        x_new = (1.0 - gamma) * x + gamma * z
        change = float(np.max(np.abs(x_new - x)))
        x = x_new
        if keep_iterates:
            trace.iterates.append(x.copy())
        if precision_tol > 0.0 and change <= precision_tol:
            trace.reason = "precision"
            break
    g = gradient(x)
    z = lmo(g)
    trace.final_objective = objective(x)
    trace.final_gap = 0.0 if z is None else duality_gap(x, z, g)
    return x, trace


def fw_solve(S, y, cfg: SolverConfig | None = None, keep_iterates: bool = False):
    """Learn fusion weights for oriented, normalized scores ``S`` and labels ``y``.

    Starts from ``R**(-1/p) * 1`` and runs Frank-Wolfe with the lp-ball
    oracle. For the hinge loss with ``cfg.smoothing > 0`` the vertex at
    iteration t is chosen from the gradient of a Huber-smoothed hinge of
    width ``smoothing / sqrt(t)``; plain subgradients make Frank-Wolfe stall
    on kinks of the piecewise-linear objective. ``smoothing=0`` uses the
    subgradient directly. The recorded gap always comes from the exact
    subgradient, so it bounds ``f(w) - f*`` either way.

    Returns ``(weights, trace)``.
    """
    cfg = cfg or SolverConfig()
    S = core.as_score_matrix(S)
    y = core.as_labels(y, S.shape[0])
    p = cfg.p
    # inputs are validated once; the closures below mirror core.LOSSES without re-checking
    YS = y[:, np.newaxis] * S

    if cfg.loss == "hinge":
        def objective(w):
            return float(np.maximum(1.0 - YS @ w, 0.0).sum())

        def gradient(w):
            return -YS[(1.0 - YS @ w) > 0.0].sum(axis=0)
    else:
        def objective(w):
            return float(np.sum((1.0 - YS @ w) ** 2))

        def gradient(w):
            return -2.0 * ((1.0 - YS @ w) @ YS)

    search = None
    if cfg.loss == "hinge" and cfg.smoothing > 0.0:
        mu0 = cfg.smoothing

        def search(w, t):
            return -(np.clip((1.0 - YS @ w) * (np.sqrt(t) / mu0), 0.0, 1.0) @ YS)

    omega, trace = frank_wolfe(
        objective=objective,
        gradient=gradient,
        lmo=lambda g: _lmo(g, p),
        x0=initial_weights(S.shape[1], p),
        max_iters=int(cfg.max_iters),
        gap_tol=cfg.gap_tol,
        precision_tol=cfg.precision_tol,
        search_gradient=search,
        keep_iterates=keep_iterates,
    )
    logger.debug("fw_solve p=%g stopped (%s) after %d iterations", p, trace.reason, len(trace))
    return omega, trace


def _project_to_ball(X: np.ndarray, p: float) -> np.ndarray:
    if np.isinf(p):
        norms = np.abs(X).max(axis=1)
    else:
        m = np.abs(X).max(axis=1, keepdims=True)
        m = np.where(m > 0, m, 1.0)
        norms = m[:, 0] * np.sum((np.abs(X) / m) ** p, axis=1) ** (1.0 / p)
    scale = np.where(norms > 1.0, norms, 1.0)
    return X / scale[:, np.newaxis]


def sampling_oracle(S, y, p: float, budget: int = 10**4, seed: int = 0, chunk: int = 1 << 16,
                    loss: str = "hinge"):
    """Brute-force minimum of the fusion objective over the lp ball.

    Draws ``budget`` uniform points in ``[-1, 1]**R``, pulls those outside the
    ball back onto its boundary, and also evaluates the uniform starting point
    and every signed unit vector. Only meant for R <= 4.

    Returns ``(w_best, f_best)``.
    """
    S = core.as_score_matrix(S)
    y = core.as_labels(y, S.shape[0])
    R = S.shape[1]
    if R > 4:
        raise ValueError(f"sampling oracle is desk-scale only (R <= 4), got R={R}")
    if budget < 1:
        raise ValueError("budget must be positive")
    objective = core.LOSSES[loss][0]

    eye = np.eye(R)
    fixed = np.vstack([initial_weights(R, p), eye, -eye])
    YS = y[:, np.newaxis] * S

    def batch_values(W):
        slack = 1.0 - W @ YS.T
        if loss == "hinge":
            return np.maximum(slack, 0.0).sum(axis=1)
        return (slack**2).sum(axis=1)

    vals = batch_values(fixed)
    i = int(np.argmin(vals))
    best_w, best_f = fixed[i].copy(), float(vals[i])

    rng = np.random.default_rng(seed)
    remaining = int(budget)
    while remaining > 0:
        m = min(chunk, remaining)
        W = _project_to_ball(rng.uniform(-1.0, 1.0, size=(m, R)), p)
        vals = batch_values(W)
        i = int(np.argmin(vals))
        if vals[i] < best_f:
            best_w, best_f = W[i].copy(), float(vals[i])
        remaining -= m
    # recompute with the scalar path so both sides agree to the last bit
    return best_w, float(objective(S, y, best_w))
