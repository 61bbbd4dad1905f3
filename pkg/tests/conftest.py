import time

import pytest

from ma4bdi.config import load_config
from ma4bdi.extraction import load_corpus, train_text_model

import helpers

SESSION_START = time.monotonic()
SUITE_BUDGET_S = 60.0
# criterion number -> verdict line, filled in by test_acceptance
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    elapsed = time.monotonic() - SESSION_START
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
    verdict = "PASS" if elapsed < SUITE_BUDGET_S else "FAIL"
    terminalreporter.write_line(f"suite runtime {verdict}  {elapsed:.1f} s (budget {SUITE_BUDGET_S:.0f} s)")


def pytest_sessionfinish(session, exitstatus):
    if ACCEPTANCE and time.monotonic() - SESSION_START >= SUITE_BUDGET_S and exitstatus == 0:
        session.exitstatus = 1


@pytest.fixture(scope="session")
def cfg():
    return load_config()


@pytest.fixture(scope="session")
def corpus(cfg):
    return load_corpus(cfg.path("corpus"))


@pytest.fixture(scope="session")
def model(corpus):
    return train_text_model(corpus)


@pytest.fixture(scope="session")
def roads():
    return helpers.roads()


@pytest.fixture
def ledger():
    return helpers.seed_ledger()


@pytest.fixture(scope="session")
def scenario_path(cfg):
    return cfg.path("corpus").parent / "alpha_incident.jsonl"
