"""Metrics, split protocol, model selection and benchmark runs.

Protocol per repeat: targets are split 70/20/10 into train/validation/test
and negatives 50/50 into validation/test. In the non-pure scenario half of
the validation negatives move to training. Base learners are fitted on the
training targets, their hyperparameters picked by validation AUC, and the
fusion parameters (p, rho) are then grid-searched on validation AUC.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import __version__
from .core import FusionModel, as_labels, as_score_matrix
from .datasets import Dataset
from .learners import LEARNERS, SIGMA_GRID, fit_learner, kpca_fit, kpca_q_grid
from .normalize import RHO_GRID, ZScoreState, tsmm_fit, zscore_fit
from .solver import P_GRID, SolverConfig, fw_solve

logger = logging.getLogger(__name__)

SCENARIOS = ("pure", "nonpure")
NOVELTY = -1.0


# ---------------------------------------------------------------- metrics


def auc(pos_scores, neg_scores) -> float:
    """Mann-Whitney estimate of P(pos > neg), ties counted as one half."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs at least one positive and one negative score")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise ValueError("AUC scores must be finite")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def gmean(tp: int, fn: int, tn: int, fp: int) -> float:
    if tp + fn < 1 or tn + fp < 1:
        raise ValueError("G-mean needs at least one sample of each class")
    return float(np.sqrt((tp / (tp + fn)) * (tn / (tn + fp))))


def confusion(scores, y, threshold: float) -> dict:
    """Counts for the rule "target iff score > threshold"."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    pred = scores > threshold
    return {
        "tp": int(np.sum(pred & (y == 1))),
        "fn": int(np.sum(~pred & (y == 1))),
        "tn": int(np.sum(~pred & (y == -1))),
        "fp": int(np.sum(pred & (y == -1))),
    }


def best_gmean_threshold(scores, y) -> float:
    """Threshold maximizing G-mean of "target iff score > threshold".

    Candidates sit below the minimum, between consecutive distinct scores and
    at the maximum; the smallest maximizer wins.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    u = np.unique(scores)
    cands = np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2.0, [u[-1]]])
    pos = np.sort(scores[y == 1])
    neg = np.sort(scores[y == -1])
    tpr = 1.0 - np.searchsorted(pos, cands, side="right") / pos.size
    tnr = np.searchsorted(neg, cands, side="right") / neg.size
    return float(cands[int(np.argmax(np.sqrt(tpr * tnr)))])


def _metrics(scores, y, threshold) -> dict:
    c = confusion(scores, y, threshold)
    return {
        "auc": auc(scores[y == 1], scores[y == -1]),
        "gmean": gmean(**c),
        "threshold": float(threshold),
        **c,
    }


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    repeat: int
    scenario: str
    train_targets: np.ndarray
    val_targets: np.ndarray
    test_targets: np.ndarray
    train_negatives: np.ndarray
    val_negatives: np.ndarray
    test_negatives: np.ndarray

    @property
    def train(self) -> np.ndarray:
        return np.concatenate([self.train_targets, self.train_negatives])

    @property
    def val(self) -> np.ndarray:
        return np.concatenate([self.val_targets, self.val_negatives])

    @property
    def test(self) -> np.ndarray:
        return np.concatenate([self.test_targets, self.test_negatives])

    def sizes(self) -> dict:
        return {k: int(len(getattr(self, k))) for k in (
            "train_targets", "val_targets", "test_targets",
            "train_negatives", "val_negatives", "test_negatives")}


def _split_sizes(n: int, parts: tuple[int, ...]) -> list[int]:
    """Floor of ``n * part / sum(parts)``; leftovers go one each to the earlier parts."""
    total = sum(parts)
    sizes = [n * k // total for k in parts]
    for i in range(n - sum(sizes)):
        sizes[i % len(sizes)] += 1
    return sizes


def make_splits(y, scenario: str = "pure", n_repeats: int = 10, seed: int = 0) -> list[SplitPlan]:
    if scenario not in SCENARIOS:
        raise ValueError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
    y = as_labels(y)
    targets = np.flatnonzero(y == 1.0)
    negatives = np.flatnonzero(y == -1.0)
    if targets.size < 10 or negatives.size < 2:
        raise ValueError(
            f"dataset too small: need >= 10 targets and >= 2 negatives, "
            f"got {targets.size} and {negatives.size}"
        )
    t_tr, t_va, _ = _split_sizes(targets.size, (7, 2, 1))
    n_va, _ = _split_sizes(negatives.size, (1, 1))
    rng = np.random.default_rng(seed)
    plans = []
    for r in range(n_repeats):
        pt = rng.permutation(targets)
        pn = rng.permutation(negatives)
        val_neg, test_neg = pn[:n_va], pn[n_va:]
        train_neg = pn[:0]
        if scenario == "nonpure":
            move = val_neg.size // 2
            train_neg, val_neg = val_neg[:move], val_neg[move:]
        plans.append(SplitPlan(
            seed=seed, repeat=r, scenario=scenario,
            train_targets=np.sort(pt[:t_tr]),
            val_targets=np.sort(pt[t_tr:t_tr + t_va]),
            test_targets=np.sort(pt[t_tr + t_va:]),
            train_negatives=np.sort(train_neg),
            val_negatives=np.sort(val_neg),
            test_negatives=np.sort(test_neg),
        ))
    return plans


# ---------------------------------------------------------------- fusion fitting


@dataclass(frozen=True)
class BenchmarkConfig:
    n_repeats: int = 10
    seed: int = 0
    p_grid: tuple[float, ...] = P_GRID
    rho_grid: tuple[int, ...] = RHO_GRID
    sigma_grid: tuple[float, ...] = SIGMA_GRID
    q_grid: tuple[int, ...] | None = None  # None: 2, 6, 10, ... up to n_train
    learners: tuple[str, ...] = LEARNERS
    max_iters: int = 1000
    gap_tol: float = 1e-6
    precision_tol: float = 0.0
    smoothing: float = 0.3
    loss: str = "hinge"
    clip_scores: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.n_repeats < 1:
            raise ValueError("n_repeats must be >= 1")
        if not self.p_grid or any(not p >= 1 for p in self.p_grid):
            raise ValueError("p grid values must be >= 1")
        if not self.rho_grid or any(r not in RHO_GRID for r in self.rho_grid):
            raise ValueError("rho grid values must be integers in 1..10")
        if not self.sigma_grid or any(not s > 0 for s in self.sigma_grid):
            raise ValueError("kernel widths must be positive")
        if self.q_grid is not None and any(q < 1 for q in self.q_grid):
            raise ValueError("subspace dimensions must be >= 1")
        unknown = set(self.learners) - set(LEARNERS)
        if unknown or not self.learners:
            raise ValueError(f"unknown learners {sorted(unknown)}; choose from {LEARNERS}")
        # validates the solver settings
        self.solver(2.0)

    def solver(self, p: float) -> SolverConfig:
        return SolverConfig(p=p, max_iters=self.max_iters, gap_tol=self.gap_tol,
                            precision_tol=self.precision_tol, loss=self.loss,
                            smoothing=self.smoothing)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


def fit_fusion(raw, y, orientation, p: float, rho: int, solver: SolverConfig | None = None,
               clip: bool = False):
    """Fit normalizers on the training targets, then solve for the weights.

    Returns ``(FusionModel, SolveTrace)``.
    """
    S = as_score_matrix(raw)
    y = as_labels(y, S.shape[0])
    orientation = np.asarray(orientation, dtype=np.float64).ravel()
    oriented = S * orientation
    tgt = oriented[y == 1.0]
    if tgt.shape[0] < 2:
        raise ValueError("need at least 2 target rows to fit score normalizers")
    normalizers = tuple(tsmm_fit(tgt[:, j], rho, clip) for j in range(S.shape[1]))
    solver = solver or SolverConfig()
    if solver.p != p:
        solver = SolverConfig(**{**asdict(solver), "p": p})
    probe = FusionModel(weights=np.zeros(S.shape[1]), p=p, orientation=orientation, normalizers=normalizers)
    weights, trace = fw_solve(probe.transform(S), y, solver)
    model = FusionModel(weights=weights, p=p, orientation=orientation, normalizers=normalizers,
                        meta={"rho": int(rho)})
    return model, trace


@dataclass
class FusionSelection:
    model: FusionModel
    val_auc: float
    grid: list[dict] = field(default_factory=list)  # one row per (p, rho)
    models: dict = field(default_factory=dict, repr=False)  # (p, rho) -> FusionModel


def select_fusion(train_raw, y_train, val_raw, y_val, orientation, p_grid=P_GRID, rho_grid=RHO_GRID,
                  solver: SolverConfig | None = None, extra_p=(), clip: bool = False) -> FusionSelection:
    """Grid-search (p, rho) by validation AUC; ties go to smaller p, then smaller rho.

    ``extra_p`` values are solved and kept in ``models`` but never selected.
    """
    y_val = as_labels(y_val)
    if y_val.size == 0 or not np.any(y_val == 1) or not np.any(y_val == -1):
        raise ValueError("validation set needs both targets and negatives")
    rows, models = [], {}
    best = None
    for p in sorted(set(p_grid)) + [p for p in extra_p if p not in p_grid]:
        for rho in sorted(set(rho_grid)):
            model, trace = fit_fusion(train_raw, y_train, orientation, p, rho, solver, clip)
            h = model.decision_function(val_raw)
            a = auc(h[y_val == 1], h[y_val == -1])
            models[(p, rho)] = model
            rows.append({"p": p, "rho": rho, "val_auc": a, "iterations": len(trace),
                         "termination": trace.reason, "weights": model.weights.tolist()})
            if p in p_grid and (best is None or a > best[0]):
                best = (a, p, rho)
    a, p, rho = best
    return FusionSelection(model=models[(p, rho)], val_auc=a, grid=rows, models=models)


# ---------------------------------------------------------------- base learners


@dataclass(frozen=True)
class FittedEnsemble:
    """Feature-level pipeline: Z-score, base learners, fusion."""

    zscore: ZScoreState
    learners: tuple  # ((name, params, model), ...)
    fusion: FusionModel | None = None

    @property
    def orientation(self) -> np.ndarray:
        return np.full(len(self.learners), NOVELTY)

    def raw_scores(self, X) -> np.ndarray:
        Z = self.zscore.apply(np.asarray(X, dtype=np.float64))
        return np.column_stack([m.score(Z) for _, _, m in self.learners])

    def decision_function(self, X) -> np.ndarray:
        return self.fusion.decision_function(self.raw_scores(X))

    def predict(self, X) -> np.ndarray:
        return self.fusion.predict(self.raw_scores(X))


def select_learner(name, Z_train, Z_val, y_val, config: BenchmarkConfig, seed: int = 0):
    """Pick one learner's hyperparameters by its own validation AUC.

    Returns ``(params, model, val_auc)``; ties go to the earlier grid point.
    """
    def val_auc(novelty):
        return auc(-novelty[y_val == 1], -novelty[y_val == -1])

    if name == "gmm":
        model = fit_learner("gmm", Z_train, seed=seed)
        return {}, model, val_auc(model.score(Z_val))
    best = None
    n = Z_train.shape[0]
    for sigma in config.sigma_grid:
        if name == "kpca":
            qs = [q for q in (config.q_grid or kpca_q_grid(n)) if q <= n]
            if not qs:
                raise ValueError(f"no KPCA subspace size <= n_train={n}")
            full = kpca_fit(Z_train, sigma, max(qs))
            errs = full.score_all_q(Z_val, qs)
            for j, q in enumerate(qs):
                a = val_auc(errs[:, j])
                if best is None or a > best[2]:
                    best = ({"sigma": sigma, "q": q}, full.with_q(q), a)
        else:
            model = fit_learner(name, Z_train, sigma=sigma)
            a = val_auc(model.score(Z_val))
            if best is None or a > best[2]:
                best = ({"sigma": sigma}, model, a)
    return best


def fit_base_learners(X_train_targets, X_val, y_val, config: BenchmarkConfig, seed: int = 0):
    zs = zscore_fit(X_train_targets)
    Z_tr, Z_val = zs.apply(X_train_targets), zs.apply(X_val)
    learners, val_aucs = [], {}
    for name in config.learners:
        params, model, a = select_learner(name, Z_tr, Z_val, y_val, config, seed=seed)
        learners.append((name, params, model))
        val_aucs[name] = a
    return FittedEnsemble(zscore=zs, learners=tuple(learners)), val_aucs


def model_select(train: Dataset, val: Dataset, config: BenchmarkConfig | None = None,
                 scenario: str = "pure", seed: int = 0):
    """Fit base learners on the training targets and choose (p, rho) on validation.

    In the pure scenario the fusion is trained on targets only; otherwise
    training negatives take part as well.

    Returns ``(FittedEnsemble, FusionSelection)``.
    """
    config = config or BenchmarkConfig()
    if scenario not in SCENARIOS:
        raise ValueError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
    if val.X.shape[0] == 0:
        raise ValueError("empty validation set")
    tmask = train.y == 1.0
    ens, _ = fit_base_learners(train.X[tmask], val.X, val.y, config, seed=seed)
    use = tmask if scenario == "pure" else np.ones_like(tmask)
    if scenario == "nonpure" and np.all(tmask):
        logger.warning("no negatives in the training split; non-pure fusion proceeds as pure")
    sel = select_fusion(
        ens.raw_scores(train.X[use]), train.y[use], ens.raw_scores(val.X), val.y,
        ens.orientation, config.p_grid, config.rho_grid, config.solver(2.0), clip=config.clip_scores,
    )
    return FittedEnsemble(ens.zscore, ens.learners, sel.model), sel


# ---------------------------------------------------------------- benchmark


def _best_rho(sel: FusionSelection, p: float):
    cands = [r for r in sel.grid if r["p"] == p]
    row = max(cands, key=lambda r: (r["val_auc"], -r["rho"]))
    return sel.models[(p, row["rho"])]


def _split(h, y):
    return h[y == 1], h[y == -1]


def _scored(model_scores_val, y_val, model_scores_test, y_test) -> dict:
    thr = best_gmean_threshold(model_scores_val, y_val)
    return _metrics(model_scores_test, y_test, thr)


def run_repeat(dataset: Dataset, plan: SplitPlan, config: BenchmarkConfig) -> dict:
    X, y = dataset.X, dataset.y
    tr, va, te = plan.train, plan.val, plan.test
    train = Dataset(dataset.name, X[tr], y[tr])
    val = Dataset(dataset.name, X[va], y[va])
    learner_seed = plan.seed * 1000 + plan.repeat

    ens, sel = model_select(train, val, config, plan.scenario, seed=learner_seed)
    fusion = sel.model
    h_val = ens.decision_function(val.X)
    thr = best_gmean_threshold(h_val, val.y)
    fusion = FusionModel(weights=fusion.weights, p=fusion.p, threshold=thr,
                         orientation=fusion.orientation, normalizers=fusion.normalizers,
                         meta=fusion.meta)
    raw_val = ens.raw_scores(val.X)
    raw_test = ens.raw_scores(X[te])
    y_test = y[te]
    test = _metrics(fusion.decision_function(raw_test), y_test, thr)

    baselines = {}
    for j, (name, _, _) in enumerate(ens.learners):
        baselines[name] = _scored(-raw_val[:, j], val.y, -raw_test[:, j], y_test)
    # uniform weights (sum rule), l2 and l-infinity constrained fusion, each with rho tuned on validation
    use = train.y == 1.0 if plan.scenario == "pure" else np.ones(train.y.size, dtype=bool)
    raw_train = ens.raw_scores(train.X[use])
    sel_inf = select_fusion(raw_train, train.y[use], raw_val, val.y, ens.orientation,
                            (np.inf,), config.rho_grid, config.solver(np.inf), clip=config.clip_scores)
    sum_best = None
    for rho in sorted(config.rho_grid):
        m = sel_inf.models[(np.inf, rho)]
        uni = FusionModel(weights=np.ones(m.n_classifiers), p=np.inf, orientation=m.orientation,
                          normalizers=m.normalizers)
        hv = uni.decision_function(raw_val)
        a = auc(hv[val.y == 1], hv[val.y == -1])
        if sum_best is None or a > sum_best[0]:
            sum_best = (a, uni)
    for key, m in (("sum", sum_best[1]), ("linf", sel_inf.model),
                   ("l2", _best_rho(sel, 2.0) if 2.0 in config.p_grid else None)):
        if m is not None:
            baselines[key] = _scored(m.decision_function(raw_val), val.y,
                                     m.decision_function(raw_test), y_test)

    per_p = []
    for p in sorted(set(config.p_grid)):
        m = _best_rho(sel, p)
        per_p.append({
            "p": p,
            "rho": m.meta["rho"],
            "val_auc": auc(*_split(m.decision_function(raw_val), val.y)),
            "test_auc": auc(*_split(m.decision_function(raw_test), y_test)),
            "weights": m.weights.tolist(),
        })

    return {
        "repeat": plan.repeat,
        "split_sizes": plan.sizes(),
        "selected": {
            "p": fusion.p,
            "rho": fusion.meta["rho"],
            "learners": {name: params for name, params, _ in ens.learners},
        },
        "val_auc": sel.val_auc,
        "weights": fusion.weights.tolist(),
        "test": test,
        "baselines": baselines,
        "per_p": per_p,
    }


def _summary(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if v.size > 1 else 0.0}


@dataclass
class ExperimentReport:
    dataset: str
    scenario: str
    seed: int
    config: dict
    repeats: list[dict]
    version: str = __version__

    @property
    def fused_auc(self) -> np.ndarray:
        return np.array([r["test"]["auc"] for r in self.repeats])

    def summary(self) -> dict:
        out = {"fused": {m: _summary([r["test"][m] for r in self.repeats]) for m in ("auc", "gmean")}}
        for key in self.repeats[0]["baselines"]:
            out[key] = {m: _summary([r["baselines"][key][m] for r in self.repeats]) for m in ("auc", "gmean")}
        return out

    def to_dict(self) -> dict:
        return {
            "tool": "lpfusion",
            "version": self.version,
            "dataset": self.dataset,
            "scenario": self.scenario,
            "seed": self.seed,
            "config": self.config,
            "summary": self.summary(),
            "repeats": self.repeats,
        }


def _run_repeat_args(args):
    return run_repeat(*args)


def run_benchmark(dataset: Dataset, scenario: str = "pure", config: BenchmarkConfig | None = None) -> ExperimentReport:
    config = config or BenchmarkConfig()
    plans = make_splits(dataset.y, scenario, config.n_repeats, config.seed)
    jobs = [(dataset, plan, config) for plan in plans]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as ex:
            repeats = list(ex.map(_run_repeat_args, jobs))
    else:
        repeats = [run_repeat(*job) for job in jobs]
    for r in repeats:
        logger.info("%s/%s repeat %d: fused test AUC %.4f", dataset.name, scenario, r["repeat"], r["test"]["auc"])
    return ExperimentReport(dataset=dataset.name, scenario=scenario, seed=config.seed,
                            config=config.to_dict(), repeats=repeats)
