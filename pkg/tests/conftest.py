import time
from pathlib import Path

import numpy as np
import pytest

from dkfsim.harness import run_experiment
from dkfsim.scenarios import paper_example_1, paper_example_2

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = np.exp(rng.uniform(0, np.log(cond), size=n))
    return (Q * ev) @ Q.T


@pytest.fixture(scope="session")
def example1_run():
    t0 = time.perf_counter()
    res = run_experiment(paper_example_1(horizon=100, trials=500, seed=2024))
    res.elapsed = time.perf_counter() - t0
    return res


@pytest.fixture(scope="session")
def example2_run():
    return run_experiment(paper_example_2(horizon=100, trials=500, seed=2024))


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
