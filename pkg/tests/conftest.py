import numpy as np
import pytest

from hybrid_distill.policy import TabularPolicy
from hybrid_distill.returns import RewardSpec

# filled by test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_instance(rng, vocab_size=3, horizon=3, eos=None, scale=2.0):
    """Random student/teacher pair plus a target-token reward."""
    eos = int(rng.integers(vocab_size)) if eos is None else eos
    student = TabularPolicy.random(vocab_size, horizon, rng, eos_token=eos, scale=scale)
    teacher = TabularPolicy.random(vocab_size, horizon, rng, eos_token=eos, scale=scale)
    specs = [RewardSpec("target_token_count", {"token": int(rng.integers(vocab_size))})]
    return student, teacher, specs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def instance(rng):
    return random_instance(rng)
