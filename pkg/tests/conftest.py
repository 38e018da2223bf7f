import os

import numpy as np
import pytest
from hypothesis import settings

from lpfusion.solver import P_GRID

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CRITERIA_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"CRITERION {number:>2} {'PASS' if passed else 'FAIL'}: {detail}"
    CRITERIA_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


def random_instances(count: int = 50, seed: int = 1):
    """Small random fusion problems: R in {2, 3}, n <= 50, p cycling over the grid plus 1 and inf."""
    rng = np.random.default_rng(seed)
    ps = list(P_GRID) + [1.0, np.inf]
    out = []
    for k in range(count):
        R = int(rng.integers(2, 4))
        n = int(rng.integers(5, 51))
        S = rng.uniform(0.0, 1.0, size=(n, R))
        y = np.where(rng.uniform(size=n) < 0.7, 1.0, -1.0)
        out.append((S, y, ps[k % len(ps)]))
    return out


@pytest.fixture(scope="session")
def instances():
    return random_instances()


_BENCH_CACHE: dict = {}


def benchmark(name: str, scenario: str, **overrides):
    """Run (once per session) the default-configuration benchmark on a bundled synthetic set."""
    from lpfusion.datasets import SYNTHETIC
    from lpfusion.evaluation import BenchmarkConfig, run_benchmark

    key = (name, scenario, tuple(sorted(overrides.items())))
    if key not in _BENCH_CACHE:
        _BENCH_CACHE[key] = run_benchmark(SYNTHETIC[name](), scenario, BenchmarkConfig(**overrides))
    return _BENCH_CACHE[key]


def engineered_ensemble(n: int = 150, seed: int = 0):
    """Target-only scores from one strong classifier (U(0.6, 1)) and three weak ones (U(0, 1))."""
    rng = np.random.default_rng(seed)
    S = np.column_stack([rng.uniform(0.6, 1.0, n)] + [rng.uniform(0.0, 1.0, n) for _ in range(3)])
    return S, np.ones(n)


def herfindahl(w) -> float:
    w = np.abs(np.asarray(w, dtype=np.float64))
    return float((w ** 2).sum() / w.sum() ** 2)
