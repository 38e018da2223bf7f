"""One-class base learners that turn feature vectors into novelty scores.

Every scorer returns larger values for more anomalous inputs:

* GMM: minimum Mahalanobis distance to the components of a 3-component
  Gaussian mixture fitted by EM.
* KPCA: squared feature-space reconstruction error after projecting onto the
  leading q kernel principal components.
* GP: one minus the predictive mean of a kernel regression onto the constant
  target 1.
* SVDD: squared feature-space distance to the center of the minimum
  enclosing ball (hard margin), whose dual is solved by Frank-Wolfe.

All kernels are RBF, ``exp(-||x - x'||**2 / (2 sigma**2))``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .solver import frank_wolfe

logger = logging.getLogger(__name__)

SIGMA_GRID = (0.01, 0.1, 0.5, 1.0, 10.0)
LEARNERS = ("gmm", "svdd", "gp", "kpca")


def kpca_q_grid(n: int) -> tuple[int, ...]:
    """Subspace sizes 2, 6, 10, ... up to n."""
    return tuple(range(2, n + 1, 4)) or (n,)


def rbf_kernel(x, x2, sigma: float) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    x2 = np.asarray(x2, dtype=np.float64).ravel()
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {x2.shape[0]}")
    if not sigma > 0:
        raise ValueError(f"kernel width must be positive, got {sigma}")
    return float(np.exp(-np.sum((x - x2) ** 2) / (2.0 * sigma**2)))


def rbf_gram(A, B, sigma: float) -> np.ndarray:
    """Kernel matrix between the rows of ``A`` and ``B``."""
    if not sigma > 0:
        raise ValueError(f"kernel width must be positive, got {sigma}")
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]} features")
    return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * sigma**2))


def _as_features(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[np.newaxis, :]
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError(f"expected a non-empty n x d feature matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite entries")
    return X


# ---------------------------------------------------------------- GMM


@dataclass(frozen=True)
class GmmModel:
    means: np.ndarray  # (k, d)
    covariances: np.ndarray  # (k, d, d), regularized
    weights: np.ndarray  # (k,)
    n_iter: int = 0
    converged: bool = False

    def mahalanobis(self, X) -> np.ndarray:
        """Distances of every row of ``X`` to every component, shape (m, k)."""
        X = _as_features(X)
        out = np.empty((X.shape[0], self.means.shape[0]))
        for j, (mu, cov) in enumerate(zip(self.means, self.covariances)):
            L = np.linalg.cholesky(cov)
            diff = linalg.solve_triangular(L, (X - mu).T, lower=True)
            out[:, j] = np.sqrt(np.sum(diff**2, axis=0))
        return out

    def score(self, X) -> np.ndarray:
        return self.mahalanobis(X).min(axis=1)


def _regularize(cov: np.ndarray) -> np.ndarray:
    d = cov.shape[0]
    eps = 1e-6 * np.trace(cov) / d
    if not eps > 0:
        eps = 1e-6
    return cov + eps * np.eye(d)


def _log_gauss(X, mu, cov):
    d = X.shape[1]
    L = np.linalg.cholesky(cov)
    diff = linalg.solve_triangular(L, (X - mu).T, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (np.sum(diff**2, axis=0) + logdet + d * np.log(2.0 * np.pi))


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    for _ in range(1, k):
        d2 = cdist(X, np.array(centers), "sqeuclidean").min(axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(n)])
        else:
            centers.append(X[rng.choice(n, p=d2 / total)])
    return np.array(centers)


def gmm_fit(X, n_components: int = 3, seed: int = 0, max_iter: int = 200, tol: float = 1e-8) -> GmmModel:
    """Fit a full-covariance Gaussian mixture by EM, seeded k-means++ style."""
    X = _as_features(X)
    n, d = X.shape
    k = n_components
    if n < k:
        warnings.warn(f"only {n} samples; fitting {n} mixture components instead of {k}",
                      RuntimeWarning, stacklevel=2)
        k = n
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(X, k, rng)
    labels = cdist(X, centers, "sqeuclidean").argmin(axis=1)
    resp = np.zeros((n, k))
    resp[np.arange(n), labels] = 1.0

    means = np.zeros((k, d))
    covs = np.zeros((k, d, d))
    weights = np.full(k, 1.0 / k)
    prev_ll = -np.inf
    converged = False
    it = 0
    global_cov = np.atleast_2d(np.cov(X.T, bias=True)) if n > 1 else np.eye(d)
    for it in range(1, max_iter + 1):
        # M step; an empty component keeps its previous parameters
        nk = resp.sum(axis=0)
        for j in range(k):
            if nk[j] <= 1e-10:
                if it == 1:
                    means[j], covs[j] = centers[j], _regularize(global_cov)
                continue
            mu = resp[:, j] @ X / nk[j]
            diff = X - mu
            means[j] = mu
            covs[j] = _regularize((resp[:, j, np.newaxis] * diff).T @ diff / nk[j])
        weights = np.maximum(nk, 1e-300) / nk.sum()
        # E step
        log_p = np.column_stack([_log_gauss(X, means[j], covs[j]) for j in range(k)]) + np.log(weights)
        norm = logsumexp(log_p, axis=1)
        resp = np.exp(log_p - norm[:, np.newaxis])
        ll = float(norm.mean())
        if abs(ll - prev_ll) < tol:
            converged = True
            break
        prev_ll = ll
    return GmmModel(means=means, covariances=covs, weights=weights, n_iter=it, converged=converged)


def gmm_score(x, model: GmmModel):
    out = model.score(x)
    return float(out[0]) if np.ndim(x) == 1 else out


# ---------------------------------------------------------------- KPCA


@dataclass(frozen=True)
class KpcaModel:
    """Kernel PCA fitted on ``X``; ``alphas`` are eigenvectors scaled by 1/sqrt(eigenvalue)."""

    X: np.ndarray
    sigma: float
    q: int
    eigenvalues: np.ndarray  # all retained (positive) eigenvalues, descending
    alphas: np.ndarray  # (n, n_retained)
    col_means: np.ndarray
    grand_mean: float

    def with_q(self, q: int) -> KpcaModel:
        if q < 1 or q > self.X.shape[0]:
            raise ValueError(f"subspace dimension must be in 1..{self.X.shape[0]}, got {q}")
        return replace(self, q=q)

    def _projections(self, X):
        k = rbf_gram(X, self.X, self.sigma)
        row_means = k.mean(axis=1, keepdims=True)
        kc = k - row_means - self.col_means + self.grand_mean
        self_sim = 1.0 - 2.0 * row_means[:, 0] + self.grand_mean
        return self_sim, kc @ self.alphas

    def score(self, X) -> np.ndarray:
        self_sim, proj = self._projections(_as_features(X))
        q = min(self.q, proj.shape[1])
        return np.maximum(self_sim - np.sum(proj[:, :q] ** 2, axis=1), 0.0)

    def score_all_q(self, X, qs) -> np.ndarray:
        """Reconstruction errors for several subspace sizes at once, shape (m, len(qs))."""
        self_sim, proj = self._projections(_as_features(X))
        csum = np.concatenate([np.zeros((proj.shape[0], 1)), np.cumsum(proj**2, axis=1)], axis=1)
        cols = [csum[:, min(q, proj.shape[1])] for q in qs]
        return np.maximum(self_sim[:, np.newaxis] - np.column_stack(cols), 0.0)


def kpca_fit(X, sigma: float, q: int) -> KpcaModel:
    X = _as_features(X)
    n = X.shape[0]
    if q < 1 or q > n:
        raise ValueError(f"subspace dimension q={q} must be in 1..n={n}")
    K = rbf_gram(X, X, sigma)
    col_means = K.mean(axis=0)
    grand = float(K.mean())
    Kc = K - col_means[np.newaxis, :] - col_means[:, np.newaxis] + grand
    vals, vecs = np.linalg.eigh((Kc + Kc.T) / 2.0)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    keep = vals > 1e-12 * max(vals[0], 1e-300)
    vals, vecs = vals[keep], vecs[:, keep]
    return KpcaModel(
        X=X, sigma=float(sigma), q=int(q), eigenvalues=vals,
        alphas=vecs / np.sqrt(vals), col_means=col_means, grand_mean=grand,
    )


def kpca_score(x, model: KpcaModel):
    out = model.score(x)
    return float(out[0]) if np.ndim(x) == 1 else out


# ---------------------------------------------------------------- GP


@dataclass(frozen=True)
class GpModel:
    X: np.ndarray
    sigma: float
    weights: np.ndarray  # (K + jitter I)^-1 1
    jitter: float

    def mean(self, X) -> np.ndarray:
        return rbf_gram(_as_features(X), self.X, self.sigma) @ self.weights

    def score(self, X) -> np.ndarray:
        return np.maximum(1.0 - self.mean(X), 0.0)


def gp_fit(X, sigma: float, jitter: float = 1e-6, max_jitter: float = 1e-1) -> GpModel:
    """Regress the constant 1 with an RBF Gaussian process.

    The jitter grows tenfold until the Cholesky factorization succeeds.
    """
    X = _as_features(X)
    K = rbf_gram(X, X, sigma)
    eye = np.eye(X.shape[0])
    j = jitter
    while True:
        try:
            c = linalg.cho_factor(K + j * eye, lower=True)
            break
        except linalg.LinAlgError:
            j *= 10.0
            if j > max_jitter:
                raise np.linalg.LinAlgError(
                    f"GP kernel matrix not positive definite even with jitter {max_jitter}"
                ) from None
    if j != jitter:
        logger.info("GP jitter escalated to %g", j)
    w = linalg.cho_solve(c, np.ones(X.shape[0]))
    return GpModel(X=X, sigma=float(sigma), weights=w, jitter=j)


def gp_score(x, model: GpModel):
    out = model.score(x)
    return float(out[0]) if np.ndim(x) == 1 else out


# ---------------------------------------------------------------- SVDD


@dataclass(frozen=True)
class SvddModel:
    X: np.ndarray
    sigma: float
    alpha: np.ndarray
    center_norm: float  # alpha' K alpha

    def score(self, X) -> np.ndarray:
        k = rbf_gram(_as_features(X), self.X, self.sigma)
        return np.maximum(1.0 - 2.0 * (k @ self.alpha) + self.center_norm, 0.0)


def svdd_dual_objective(alpha, K) -> float:
    """``sum_i alpha_i K_ii - alpha' K alpha`` (to be maximized)."""
    return float(alpha @ np.diag(K) - alpha @ K @ alpha)


def svdd_fit(X, sigma: float, max_iters: int = 200) -> SvddModel:
    """Hard-margin SVDD; the dual is maximized over the simplex by Frank-Wolfe.

    The simplex oracle picks the vertex with the largest dual gradient and the
    step is the exact line search of the quadratic.
    """
    X = _as_features(X)
    n = X.shape[0]
    K = rbf_gram(X, X, sigma)
    diag = np.diag(K).copy()

    def lmo(g):
        z = np.zeros(n)
        z[int(np.argmin(g))] = 1.0
        return z

    def line_search(t, a, direction, g):
        curv = direction @ K @ direction
        slope = g @ direction
        if curv <= 0.0:
            return 1.0 if slope < 0 else 0.0
        return float(np.clip(-slope / (2.0 * curv), 0.0, 1.0))

    # minimize the negated dual
    alpha, _ = frank_wolfe(
        objective=lambda a: -svdd_dual_objective(a, K),
        gradient=lambda a: 2.0 * K @ a - diag,
        lmo=lmo,
        x0=np.full(n, 1.0 / n),
        max_iters=max_iters,
        gap_tol=1e-12,
        step=line_search,
    )
    alpha = np.maximum(alpha, 0.0)
    alpha /= alpha.sum()
    return SvddModel(X=X, sigma=float(sigma), alpha=alpha, center_norm=float(alpha @ K @ alpha))


def svdd_score(x, model: SvddModel):
    out = model.score(x)
    return float(out[0]) if np.ndim(x) == 1 else out


# ---------------------------------------------------------------- dispatch


def fit_learner(name: str, X, sigma: float | None = None, q: int | None = None, seed: int = 0):
    """Fit one base learner by name; returns an object with ``score(X)``."""
    if name == "gmm":
        return gmm_fit(X, seed=seed)
    if sigma is None:
        raise ValueError(f"{name} needs a kernel width sigma")
    if name == "svdd":
        return svdd_fit(X, sigma)
    if name == "gp":
        return gp_fit(X, sigma)
    if name == "kpca":
        X = _as_features(X)
        return kpca_fit(X, sigma, X.shape[0] if q is None else q)
    raise ValueError(f"unknown learner {name!r}; choose from {LEARNERS}")
