import os

import pytest

from xvabsde import model

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE = {}


def record(criterion, ok, detail):
    prev = ACCEPTANCE.get(criterion)
    ok = ok and (prev is None or prev[0])
    text = detail if prev is None else f"{prev[1]}; {detail}"
    ACCEPTANCE[criterion] = (ok, text)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def ref_market():
    return model.reference_market()


@pytest.fixture
def ref_call():
    return model.reference_contract(model.Call(100.0))


@pytest.fixture
def small_num():
    return model.NumericsConfig(n_steps=20, n_paths=2000, seed=7)


@pytest.fixture(autouse=True)
def _no_thread_env(monkeypatch):
    monkeypatch.delenv("XVA_BSDE_THREADS", raising=False)
    yield


def pytest_configure(config):
    os.environ.setdefault("PYTHONHASHSEED", "0")
