import numpy as np
import pytest

from gmia.datasets import Dataset, make_cancer_like
from gmia.ensemble import build_positive_reference_models, build_reference_models
from gmia.evaluation import ProtocolConfig, prepare
from gmia.model import ModelSpec, TrainingConfig

# The desk-scale protocol seed used by the regression and acceptance tests.
PROTOCOL_SEED = 11


@pytest.fixture(scope="session")
def cancer_config():
    return ProtocolConfig(seed=PROTOCOL_SEED)


@pytest.fixture(scope="session")
def cancer_data():
    return make_cancer_like(PROTOCOL_SEED)


@pytest.fixture(scope="session")
def cancer_state(cancer_data, cancer_config):
    return prepare(cancer_data, cancer_config)


def blobs(n=60, seed=0, name="blobs"):
    """Two well separated 2-D Gaussian classes."""
    g = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = g.normal(0, 0.6, (n, 2)) + np.where(y[:, None] == 1, 1.5, -1.5)
    return Dataset(tuple(f"b{i:03d}" for i in range(n)), X, y, 2, name)


@pytest.fixture(scope="session")
def small_pool():
    return blobs(80, seed=3, name="pool")


@pytest.fixture(scope="session")
def small_ensemble(small_pool):
    return build_reference_models(small_pool, 8, 40, ModelSpec((2, 6, 2)), TrainingConfig(60, 10, 0.1), seed=5)


@pytest.fixture(scope="session")
def outside_record():
    from gmia.datasets import Record
    return Record("outsider", np.array([2.4, -2.2]), 1)


@pytest.fixture(scope="session")
def small_positive(small_ensemble, outside_record):
    return build_positive_reference_models(small_ensemble, outside_record, TrainingConfig(20, 10, 0.1), 5)


# ---------------------------------------------------------------------------
# one summary line per acceptance criterion

_CRITERIA: dict[str, dict] = {}


@pytest.fixture
def criterion(request):
    """Dict for the measured values an acceptance test wants in its summary line."""
    entry = _CRITERIA.setdefault(request.node.nodeid, {"details": {}, "outcome": "not run"})
    return entry["details"]


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    entry = _CRITERIA.setdefault(report.nodeid, {"details": {}, "outcome": "not run"})
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        entry["outcome"] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, entry in _CRITERIA.items():
        name = nodeid.split("::")[-1].removeprefix("test_")
        details = ", ".join(f"{k}={v}" for k, v in entry["details"].items())
        terminalreporter.write_line(f"{entry['outcome']:4}  {name}  {details}")
