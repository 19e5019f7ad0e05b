import numpy as np
import pytest

from segtricks import _backend, _pykernels, filtering, graph, metrics

KERNEL_USERS = (filtering, graph, metrics)
BACKENDS = ["python"] + (["cython"] if _backend.compiled is not None else [])

# acceptance results: criterion name -> (passed, detail)
ACCEPTANCE = {}


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per available kernel set."""
    mod = _pykernels if request.param == "python" else _backend.compiled
    for user in KERNEL_USERS:
        monkeypatch.setattr(user, "kernels", mod)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record_acceptance():
    def record(name, passed, detail=""):
        ACCEPTANCE[name] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (passed, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
