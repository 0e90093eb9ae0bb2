from pathlib import Path

import pytest

from dichotomic.backend import gold_labels, load_rules
from dichotomic.domain import load_corpus, load_taxonomy

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS_50 = FIXTURES / "corpus_50.jsonl"
RULES = FIXTURES / "rules.yaml"


@pytest.fixture(scope="session")
def taxonomy():
    return load_taxonomy()


@pytest.fixture(scope="session")
def corpus50():
    return load_corpus(CORPUS_50)


@pytest.fixture(scope="session")
def rules():
    return load_rules(RULES)


@pytest.fixture(scope="session")
def gold50(corpus50, taxonomy, rules):
    return gold_labels(corpus50, taxonomy, rules)


# acceptance results, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
