import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stacklsh.synth import synthetic_reports
from stacklsh.traces import StackFrame, StackTrace, build_corpus


def make_trace(*functions: str) -> StackTrace:
    return StackTrace(tuple(StackFrame(function=fn) for fn in functions))


@pytest.fixture(scope="session")
def small_corpus():
    """Deterministic 60-report corpus shared by read-only tests."""
    return synthetic_reports(60, seed=101)


@pytest.fixture(scope="session")
def small_stats(small_corpus):
    return build_corpus(small_corpus)
