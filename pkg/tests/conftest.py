import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from splatcolor.pipeline import PipelineConfig, load_config, run_pipeline  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CRITERIA = {}
_DETAILS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _CRITERIA[n] = (title, "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status = _CRITERIA[n]
        detail = _DETAILS.get(n, "")
        terminalreporter.write_line(f"{status} criterion {n}: {title}" + (f" [{detail}]" if detail else ""))


@pytest.fixture
def detail(request):
    """Attach measured values to the criterion's summary line."""
    n = request.node.get_closest_marker("criterion").args[0]

    def put(text):
        _DETAILS[n] = text
    return put


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_config(out, **changes) -> PipelineConfig:
    base = dict(output_dir=str(out), seed=3, K=2, geometry_iterations=40, color_iterations=30,
                synth={"n_objects": 3, "splats_per_object": 12, "n_cameras": 6, "n_test_cameras": 2,
                       "width": 32, "height": 32},
                short_delta=1, long_delta=3)
    base.update(changes)
    return PipelineConfig(**base)


@pytest.fixture(scope="session")
def ring_run(tmp_path_factory):
    cfg = load_config(ROOT / "configs" / "ring.json").replace(
        output_dir=str(tmp_path_factory.mktemp("ring")))
    manifest = run_pipeline(cfg)
    return cfg, manifest, json.loads((Path(cfg.output_dir) / "report.json").read_text())


@pytest.fixture(scope="session")
def ablation_runs(tmp_path_factory):
    base = load_config(ROOT / "configs" / "ring_ablation.json")
    out = {}
    start = time.perf_counter()
    for name, passes in (("calibrated", base.calibration_passes), ("uncalibrated", 0)):
        cfg = base.replace(output_dir=str(tmp_path_factory.mktemp(name)), calibration_passes=passes)
        run_pipeline(cfg)
        out[name] = json.loads((Path(cfg.output_dir) / "report.json").read_text())
    out["seconds"] = time.perf_counter() - start
    return out
