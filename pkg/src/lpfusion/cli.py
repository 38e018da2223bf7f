"""Command-line front end: ``scores``, ``train``, ``eval`` and ``sweep``.

File formats
------------
Feature and score files are CSV with one header line::

    # schema=scores, orientation=novelty, columns=gmm,svdd

``schema`` is ``features`` or ``scores``; ``orientation`` (scores only) is
``novelty`` (higher means more anomalous) or ``target`` (higher means more
target-like); ``columns`` must come last and lists the column names. Label
files hold a single column of +1 (target) / -1 (anomaly) values, optionally
preceded by a ``#`` comment line.

Models and reports are JSON with a fixed field order. Floats are written with
17 significant digits, so they read back bit-exactly; infinities and NaN are
written as the strings ``"inf"``, ``"-inf"`` and ``"nan"``.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import re
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .core import FusionModel
from .datasets import SYNTHETIC, Dataset, load_banknote
from .evaluation import (
    NOVELTY,
    BenchmarkConfig,
    FittedEnsemble,
    auc,
    best_gmean_threshold,
    confusion,
    fit_fusion,
    gmean,
    model_select,
    run_benchmark,
    select_fusion,
)
from .learners import LEARNERS, SIGMA_GRID, GmmModel, GpModel, KpcaModel, SvddModel, fit_learner
from .normalize import RHO_GRID, TwoSidedMinMaxState, ZScoreState, zscore_fit
from .solver import P_GRID, initial_weights

logger = logging.getLogger("lpfusion")

OUT_ENV = "LPFUSION_OUT"
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

_LEARNER_TYPES = {"gmm": GmmModel, "kpca": KpcaModel, "gp": GpModel, "svdd": SvddModel}
_HEADER_RE = re.compile(
    r"^#\s*schema=(?P<schema>\w+)\s*(?:,\s*orientation=(?P<orientation>\w+)\s*)?,\s*columns=(?P<columns>.*)$"
)


class InputError(ValueError):
    """Malformed or inconsistent user input (exit code 2)."""


# ---------------------------------------------------------------- JSON


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return "%.17g" % x


def _scalar(v) -> str | None:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt_float(float(v))
    if isinstance(v, str):
        return json.dumps(v)
    return None


def dumps(obj, indent: int = 0) -> str:
    """Serialize nested dicts/lists/arrays deterministically.

    Dict order is kept as given; lists of scalars stay on one line.
    """
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, tuple):
        obj = list(obj)
    s = _scalar(obj)
    if s is not None:
        return s
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        parts = [dumps(v, indent + 1) for v in obj]
        if all(_scalar(v) is not None for v in obj):
            return "[" + ", ".join(parts) + "]"
        return "[\n" + ",\n".join(inner + p for p in parts) + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _num(v) -> float:
    """Inverse of :func:`_fmt_float` for a parsed JSON value (``float`` also parses "inf" and "nan")."""
    return float(v)


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj) + "\n")


# ---------------------------------------------------------------- CSV


@dataclasses.dataclass(frozen=True)
class Table:
    schema: str
    orientation: str | None
    columns: tuple[str, ...]
    values: np.ndarray


def read_table(path) -> Table:
    """Read a feature or score CSV; errors carry the offending line number."""
    path = Path(path)
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise InputError(f"{path}:1: missing '# schema=..., columns=...' header line")
    m = _HEADER_RE.match(lines[0].strip())
    if m is None:
        raise InputError(f"{path}:1: cannot parse header {lines[0]!r}")
    schema, orientation = m["schema"], m["orientation"]
    if schema not in ("features", "scores"):
        raise InputError(f"{path}:1: schema must be 'features' or 'scores', got {schema!r}")
    if schema == "scores":
        orientation = orientation or "novelty"
        if orientation not in ("novelty", "target"):
            raise InputError(f"{path}:1: orientation must be 'novelty' or 'target', got {orientation!r}")
    columns = tuple(c.strip() for c in m["columns"].split(",") if c.strip())
    if not columns:
        raise InputError(f"{path}:1: header lists no columns")
    rows = []
    for lineno, row in enumerate(csv.reader(lines[1:]), start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != len(columns):
            raise InputError(f"{path}:{lineno}: expected {len(columns)} columns, got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric cell") from None
        if not all(math.isfinite(v) for v in vals):
            raise InputError(f"{path}:{lineno}: non-finite cell")
        rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return Table(schema, orientation, columns, np.array(rows, dtype=np.float64))


def write_table(path: Path, schema: str, columns, values, orientation: str | None = None) -> None:
    head = f"# schema={schema}"
    if orientation is not None:
        head += f", orientation={orientation}"
    head += ", columns=" + ",".join(columns)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(head + "\n")
        for row in np.atleast_2d(values):
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def read_labels(path, n: int | None = None) -> np.ndarray:
    path = Path(path)
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                v = float(line)
            except ValueError:
                raise InputError(f"{path}:{lineno}: label {line!r} is not a number") from None
            if v not in (1.0, -1.0):
                raise InputError(f"{path}:{lineno}: label must be +1 or -1, got {line}")
            out.append(v)
    if not out:
        raise InputError(f"{path}: no data rows")
    y = np.array(out)
    if n is not None and y.size != n:
        raise InputError(f"{path}: {y.size} labels for {n} data rows")
    return y


# ---------------------------------------------------------------- model files


def _state_to_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


def _state_from_dict(cls, d: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        v = d[f.name]
        kwargs[f.name] = np.array(v, dtype=np.float64) if isinstance(v, list) else v
    return cls(**kwargs)


def model_to_dict(model: FusionModel, columns, input_schema: str, ensemble: FittedEnsemble | None,
                  config: dict, trace=None) -> dict:
    d = {
        "tool": "lpfusion",
        "version": __version__,
        "kind": "fusion-model",
        "input_schema": input_schema,
        "columns": list(columns),
        "p": model.p,
        "threshold": model.threshold,
        "weights": model.weights,
        "init_weights": initial_weights(model.n_classifiers, model.p),
        "orientation": model.orientation,
        "normalizers": [
            {"lower": st.lower, "upper": st.upper, "rho": st.rho, "clip": st.clip}
            for st in model.normalizers
        ],
        "pipeline": None,
        "solve": None,
        "config": config,
    }
    if ensemble is not None:
        d["pipeline"] = {
            "zscore": {"mean": ensemble.zscore.mean, "std": ensemble.zscore.std},
            "learners": [
                {"name": name, "params": params, "state": _state_to_dict(m)}
                for name, params, m in ensemble.learners
            ],
        }
    if trace is not None:
        d["solve"] = {
            "termination": trace.reason,
            "iterations": len(trace),
            "final_objective": trace.final_objective,
            "final_gap": trace.final_gap,
        }
    return d


def model_from_dict(d: dict):
    """Return ``(FusionModel, FittedEnsemble | None, columns, input_schema)``."""
    if d.get("kind") != "fusion-model":
        raise InputError("not a fusion model file")
    normalizers = tuple(
        TwoSidedMinMaxState(lower=_num(n["lower"]), upper=_num(n["upper"]), rho=int(n["rho"]), clip=bool(n["clip"]))
        for n in d["normalizers"]
    )
    model = FusionModel(
        weights=np.array([_num(w) for w in d["weights"]]),
        p=_num(d["p"]),
        threshold=_num(d["threshold"]),
        orientation=np.array([_num(o) for o in d["orientation"]]),
        normalizers=normalizers,
    )
    ens = None
    if d.get("pipeline") is not None:
        pipe = d["pipeline"]
        zs = ZScoreState(mean=np.array(pipe["zscore"]["mean"], dtype=np.float64),
                         std=np.array(pipe["zscore"]["std"], dtype=np.float64))
        learners = tuple(
            (e["name"], e["params"], _state_from_dict(_LEARNER_TYPES[e["name"]], e["state"]))
            for e in pipe["learners"]
        )
        ens = FittedEnsemble(zscore=zs, learners=learners, fusion=model)
    return model, ens, tuple(d["columns"]), d["input_schema"]


def load_model(path):
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise InputError(f"{path}: not valid JSON ({e})") from None
    return model_from_dict(d)


# ---------------------------------------------------------------- argument parsing


def parse_real(text: str) -> float:
    """Parse ``2``, ``0.5``, ``32/31`` or ``inf``."""
    t = text.strip().lower()
    if t in ("inf", "infinity"):
        return math.inf
    try:
        return float(Fraction(t))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _grid(kind):
    def parse(text):
        vals = tuple(kind(v) for v in text.replace(" ", ",").split(",") if v)
        if not vals:
            raise argparse.ArgumentTypeError("empty grid")
        return vals
    return parse


def _int(text):
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None


def _learners(text):
    names = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = [n for n in names if n not in LEARNERS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown learners {bad}; choose from {','.join(LEARNERS)}")
    return names


def _common(sp, grids=True):
    sp.add_argument("--seed", type=_int, default=0)
    sp.add_argument("--out", type=Path, default=None,
                    help=f"output directory (default: ${OUT_ENV} or ./lpfusion-out)")
    if grids:
        sp.add_argument("--scenario", choices=("pure", "nonpure"), default="pure")
        sp.add_argument("--p-grid", type=_grid(parse_real), default=None)
        sp.add_argument("--rho-grid", type=_grid(_int), default=None)
        sp.add_argument("--sigma-grid", type=_grid(parse_real), default=None)
        sp.add_argument("--q-grid", type=_grid(_int), default=None)
        sp.add_argument("--learners", type=_learners, default=LEARNERS)
        sp.add_argument("--iters", type=_int, default=1000, help="Frank-Wolfe iterations T")
        sp.add_argument("--gap-tol", type=float, default=1e-6)
        sp.add_argument("--precision-tol", type=float, default=0.0)
        sp.add_argument("--loss", choices=("hinge", "least_squares"), default="hinge")
        sp.add_argument("--clip", action="store_true", help="clip normalized scores to [0, 1]")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lpfusion", description="lp-norm constrained fusion of one-class scores")
    ap.add_argument("--version", action="version", version=f"lpfusion {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("scores", help="score a feature file with built-in learners")
    sp.add_argument("features", type=Path)
    sp.add_argument("--fit-on", type=Path, default=None,
                    help="feature file to fit the learners on (default: the scored file)")
    sp.add_argument("--learners", type=_learners, default=("gmm",))
    sp.add_argument("--sigma", type=parse_real, default=1.0)
    sp.add_argument("--q", type=_int, default=None, help="KPCA subspace size (default: min(2, n))")
    _common(sp, grids=False)

    sp = sub.add_parser("train", help="fit a fusion model on a score or feature file")
    sp.add_argument("data", type=Path)
    sp.add_argument("--labels", type=Path, required=True)
    sp.add_argument("--val", type=Path, default=None, help="validation file for grid search and threshold")
    sp.add_argument("--val-labels", type=Path, default=None)
    _common(sp)

    sp = sub.add_parser("eval", help="evaluate a model file on a labelled test file")
    sp.add_argument("model", type=Path)
    sp.add_argument("test", type=Path)
    sp.add_argument("--labels", type=Path, required=True)
    _common(sp, grids=False)

    sp = sub.add_parser("sweep", help="run the repeated benchmark across the p grid")
    sp.add_argument("dataset", help="'synthetic:NAME', a Banknote-format CSV, or a feature CSV")
    sp.add_argument("--labels", type=Path, default=None, help="labels for a feature CSV")
    sp.add_argument("--repeats", type=_int, default=10)
    sp.add_argument("--workers", type=_int, default=1)
    _common(sp)
    return ap


def _out_dir(args) -> Path:
    return args.out or Path(os.environ.get(OUT_ENV, "lpfusion-out"))


def _benchmark_config(args, full_defaults: bool) -> BenchmarkConfig:
    """Grids left unset get the full default grid, or a single default value."""
    def pick(value, full, single):
        return value if value is not None else (full if full_defaults else single)

    return BenchmarkConfig(
        n_repeats=getattr(args, "repeats", 1),
        seed=args.seed,
        p_grid=pick(args.p_grid, P_GRID, (2.0,)),
        rho_grid=pick(args.rho_grid, RHO_GRID, (5,)),
        sigma_grid=pick(args.sigma_grid, SIGMA_GRID, (1.0,)),
        q_grid=pick(args.q_grid, None, (2,)),
        learners=args.learners,
        max_iters=args.iters,
        gap_tol=args.gap_tol,
        precision_tol=args.precision_tol,
        loss=args.loss,
        clip_scores=args.clip,
        workers=getattr(args, "workers", 1),
    )


# ---------------------------------------------------------------- commands


def cmd_scores(args) -> int:
    table = read_table(args.features)
    if table.schema != "features":
        raise InputError(f"{args.features}: expected schema=features, got {table.schema}")
    fit = read_table(args.fit_on) if args.fit_on else table
    if fit.values.shape[1] != table.values.shape[1]:
        raise InputError(f"{args.fit_on}: has {fit.values.shape[1]} columns, "
                         f"scored file has {table.values.shape[1]}")
    zs = zscore_fit(fit.values)
    Z_fit, Z = zs.apply(fit.values), zs.apply(table.values)
    q = args.q if args.q is not None else min(2, Z_fit.shape[0])
    cols = [fit_learner(name, Z_fit, sigma=args.sigma, q=q, seed=args.seed).score(Z) for name in args.learners]
    out = _out_dir(args) / "scores.csv"
    write_table(out, "scores", args.learners, np.column_stack(cols), orientation="novelty")
    print(out)
    return EXIT_OK


def _load_xy(data: Path, labels: Path | None) -> tuple[Table, np.ndarray]:
    table = read_table(data)
    if labels is None:
        raise InputError(f"{data}: a labels file is required")
    return table, read_labels(labels, table.values.shape[0])


def _refit(train_raw, y, orientation, p, rho, config: BenchmarkConfig):
    return fit_fusion(train_raw, y, orientation, p, rho, config.solver(p), config.clip_scores)


def cmd_train(args) -> int:
    train, y = _load_xy(args.data, args.labels)
    has_val = args.val is not None
    if has_val:
        val, y_val = _load_xy(args.val, args.val_labels)
        if val.schema != train.schema or val.values.shape[1] != train.values.shape[1]:
            raise InputError(f"{args.val}: schema {val.schema} with {val.values.shape[1]} columns does not "
                             f"match training file ({train.schema}, {train.values.shape[1]} columns)")
    config = _benchmark_config(args, full_defaults=has_val)
    if not has_val:
        for name in ("p_grid", "rho_grid", "sigma_grid", "q_grid"):
            if len(getattr(config, name)) > 1:
                raise InputError(f"--{name.replace('_', '-')} with several values needs --val data")
    scenario = args.scenario
    if scenario == "nonpure" and np.all(y == y[0]):
        logger.warning("non-pure training data contains a single class; proceeding as pure")
        scenario = "pure"
    if not np.any(y == 1.0):
        raise InputError(f"{args.labels}: no target (+1) rows to fit on")

    ensemble = None
    if train.schema == "features":
        tr = Dataset("train", train.values, y)
        if has_val:
            ensemble, _ = model_select(tr, Dataset("val", val.values, y_val), config, scenario, seed=args.seed)
        else:
            tmask = y == 1.0
            zs = zscore_fit(train.values[tmask])
            Z = zs.apply(train.values[tmask])
            q = min(config.q_grid[0], Z.shape[0])
            learners = []
            for name in config.learners:
                params = {} if name == "gmm" else {"sigma": config.sigma_grid[0]}
                if name == "kpca":
                    params["q"] = q
                learners.append((name, params, fit_learner(name, Z, seed=args.seed, **params)))
            ensemble = FittedEnsemble(zscore=zs, learners=tuple(learners))
        columns = tuple(name for name, _, _ in ensemble.learners)
        raw = ensemble.raw_scores(train.values)
        raw_val = ensemble.raw_scores(val.values) if has_val else None
        orientation = ensemble.orientation
    else:
        columns = train.columns
        raw = train.values
        raw_val = val.values if has_val else None
        orientation = np.full(len(columns), NOVELTY if train.orientation == "novelty" else 1.0)

    use = y == 1.0 if scenario == "pure" else np.ones(y.size, dtype=bool)
    if has_val:
        sel = select_fusion(raw[use], y[use], raw_val, y_val, orientation, config.p_grid, config.rho_grid,
                            config.solver(2.0), clip=config.clip_scores)
        p, rho = sel.model.p, sel.model.meta["rho"]
    else:
        p, rho = config.p_grid[0], config.rho_grid[0]
    model, trace = _refit(raw[use], y[use], orientation, p, rho, config)
    threshold = best_gmean_threshold(model.decision_function(raw_val), y_val) if has_val else model.threshold
    model = dataclasses.replace(model, threshold=threshold)
    if ensemble is not None:
        ensemble = FittedEnsemble(ensemble.zscore, ensemble.learners, model)

    echo = {"command": "train", "scenario": scenario, "seed": args.seed, **config.to_dict()}
    echo.pop("n_repeats"), echo.pop("workers")
    out = _out_dir(args)
    write_json(out / "model.json", model_to_dict(model, columns, train.schema, ensemble, echo, trace))
    write_table_trace(out / "trace.csv", trace)
    print(out / "model.json")
    return EXIT_OK


def write_table_trace(path: Path, trace) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("t,objective,gap,step\n")
        for r in trace.records:
            fh.write(f"{r.t},{'%.17g' % r.objective},{'%.17g' % r.gap},{'%.17g' % r.step}\n")


def cmd_eval(args) -> int:
    model, ensemble, columns, schema = load_model(args.model)
    test, y = _load_xy(args.test, args.labels)
    if test.schema != schema:
        raise InputError(f"{args.test}: schema={test.schema} but the model expects schema={schema}")
    expected = ensemble.zscore.mean.size if ensemble is not None else len(columns)
    if test.values.shape[1] != expected:
        raise InputError(f"{args.test}: model expects {expected} columns, file has {test.values.shape[1]}")
    if ensemble is not None:
        h = ensemble.decision_function(test.values)
    else:
        h = model.decision_function(test.values)
    pos, neg = h[y == 1], h[y == -1]
    a = auc(pos, neg)  # a single-class test set raises here
    c = confusion(h, y, model.threshold)
    report = {
        "tool": "lpfusion",
        "version": __version__,
        "kind": "eval-report",
        "seed": args.seed,
        "config": {"command": "eval", "model": str(args.model), "test": str(args.test),
                   "labels": str(args.labels)},
        "n_targets": int(pos.size),
        "n_negatives": int(neg.size),
        "threshold": model.threshold,
        "auc": a,
        "gmean": gmean(**c),
        "confusion": c,
    }
    out = _out_dir(args) / "eval.json"
    write_json(out, report)
    print(out)
    return EXIT_OK


def load_dataset(source: str, labels: Path | None) -> Dataset:
    if source.startswith("synthetic:"):
        name = source.split(":", 1)[1]
        if name not in SYNTHETIC:
            raise InputError(f"unknown synthetic dataset {name!r}; choose from {sorted(SYNTHETIC)}")
        return SYNTHETIC[name]()
    path = Path(source)
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("#"):
        table, y = _load_xy(path, labels)
        if table.schema != "features":
            raise InputError(f"{path}: sweep needs schema=features, got {table.schema}")
        return Dataset(path.stem, table.values, y)
    return load_banknote(path)


def cmd_sweep(args) -> int:
    ds = load_dataset(args.dataset, args.labels)
    config = _benchmark_config(args, full_defaults=True)
    report = run_benchmark(ds, args.scenario, config)
    names = list(report.repeats[0]["selected"]["learners"])
    per_p = []
    for i, p in enumerate(sorted(set(config.p_grid))):
        rows = [r["per_p"][i] for r in report.repeats]
        W = np.array([row["weights"] for row in rows])
        per_p.append({
            "p": p,
            "val_auc_mean": float(np.mean([row["val_auc"] for row in rows])),
            "test_auc_mean": float(np.mean([row["test_auc"] for row in rows])),
            "mean_weights": W.mean(axis=0),
        })
    d = report.to_dict()
    d["config"] = {"command": "sweep", "dataset": args.dataset, "scenario": args.scenario, **d["config"]}
    d["per_p"] = per_p
    out = _out_dir(args)
    write_json(out / "sweep.json", d)
    with open(out / "weight_path.csv", "w") as fh:
        fh.write("p,repeat,rho,val_auc,test_auc," + ",".join(f"w_{n}" for n in names) + "\n")
        for i, p in enumerate(sorted(set(config.p_grid))):
            for r in report.repeats:
                row = r["per_p"][i]
                vals = [p, r["repeat"], row["rho"], row["val_auc"], row["test_auc"], *row["weights"]]
                fh.write(",".join(str(v) if isinstance(v, int) else "%.17g" % v for v in vals) + "\n")
    print(out / "sweep.json")
    return EXIT_OK


COMMANDS = {"scores": cmd_scores, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
