import json
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from roadcond.cli import run
from roadcond.gradcheck import run_suites
from roadcond.pipeline import PipelineSpec, run_synthetic_pipeline

settings.register_profile("default", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

PIPELINE = PipelineSpec()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    return run_synthetic_pipeline(tmp_path_factory.mktemp("pipeline_a"), PIPELINE)


@pytest.fixture(scope="session")
def pipeline_rerun(tmp_path_factory, pipeline_run):
    return run_synthetic_pipeline(tmp_path_factory.mktemp("pipeline_b"), PIPELINE)


@pytest.fixture(scope="session")
def lambda0_summary(tmp_path_factory, pipeline_run):
    """Same extracted data and seed as the main run, contrastive weight 0."""
    out = tmp_path_factory.mktemp("cls_lambda0")
    code = run(["train-cls", "--data", str(pipeline_run.root / "extracted"), "--out", str(out),
                "--seed", str(PIPELINE.seed), "--lambda", "0", "--log-level", "WARNING"])
    assert code == 0
    return json.loads((out / "cls_summary.json").read_text())


@pytest.fixture(scope="session")
def gradient_suites():
    t0 = time.perf_counter()
    results = run_suites(instances=20, seed=0)
    return {r.name: r for r in results}, time.perf_counter() - t0


_VERDICTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        _VERDICTS.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
