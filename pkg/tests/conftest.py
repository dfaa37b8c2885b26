import time

import numpy as np
import pytest

from petc_traffic.bounds import compute_bounds
from petc_traffic.cli import run_pipeline
from petc_traffic.config import example_config
from petc_traffic.model import example_system
from petc_traffic.partition import build_partition
from petc_traffic.reach import compute_reach


@pytest.fixture(scope="session")
def ex_sys():
    return example_system(W=2.0)


@pytest.fixture(scope="session")
def ex_sys_w0():
    return example_system(W=0.0)


@pytest.fixture(scope="session")
def ex_partition():
    return build_partition(2, 8, 6, W_trunc=80.0)


@pytest.fixture(scope="session")
def ex_config():
    return example_config()


@pytest.fixture(scope="session")
def pipeline_run(ex_config, tmp_path_factory):
    """Full example pipeline (jobs=1) with its wall time."""
    out = tmp_path_factory.mktemp("run_jobs1")
    t0 = time.perf_counter()
    res = run_pipeline(ex_config, out=out, jobs=1)
    res.elapsed = time.perf_counter() - t0
    res.out = out
    return res


@pytest.fixture(scope="session")
def ex_bounds(pipeline_run):
    return pipeline_run.artifacts["bounds"]


@pytest.fixture(scope="session")
def ex_reach(pipeline_run):
    return pipeline_run.artifacts["reach"]


@pytest.fixture(scope="session")
def ex_abstraction(pipeline_run):
    return pipeline_run.artifacts["abstraction"]


@pytest.fixture(scope="session")
def w0_artifacts(ex_sys_w0, ex_partition):
    table = compute_bounds(ex_sys_w0, ex_partition)
    reach = compute_reach(ex_sys_w0, ex_partition, table)
    return table, reach


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion; shown in the terminal summary."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        _CRITERIA[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
