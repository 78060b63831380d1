import json
from pathlib import Path

import numpy as np
import pytest

from cnet_dst import Ontology, parse_cnet

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def sample_text() -> str:
    return (FIXTURES / "sample_cnet.txt").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def sample_cnet(sample_text):
    return parse_cnet(sample_text)


@pytest.fixture(scope="session")
def synth_ontology() -> Ontology:
    return Ontology.load("synthetic")


@pytest.fixture(scope="session")
def dstc2_ontology() -> Ontology:
    return Ontology.load("dstc2")


@pytest.fixture(scope="session")
def coverage_records():
    return json.loads((FIXTURES / "coverage_5utt.json").read_text(encoding="utf-8"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ----------------------------------------------------

ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def report_criterion():
    """Record and print a one-line verdict for an acceptance criterion."""

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES[name] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for name in sorted(ACCEPTANCE_LINES, key=lambda n: int(n.split("-")[1])):
            terminalreporter.write_line(ACCEPTANCE_LINES[name])
