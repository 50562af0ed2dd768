from pathlib import Path

import numpy as np
import pytest

from egopose.ingest import SequenceRecord
from egopose.pose_core import FramePose, HandPose2D, ObjectPose2D

FIXTURES = Path(__file__).parent / "fixtures"


def random_frame(rng, width=1280, height=720, label=None, p_absent=0.2):
    def hand():
        if rng.random() < p_absent:
            return HandPose2D.absent()
        return HandPose2D(rng.uniform(-50, [width + 50, height + 50], size=(21, 2)))

    x = np.sort(rng.uniform(0, width, 2))
    y = np.sort(rng.uniform(0, height, 2))
    lab = int(rng.integers(0, 8)) if label is None else label
    return FramePose(hand(), hand(), ObjectPose2D.from_extent(x[0], y[0], x[1], y[1], lab), width, height)


def random_record(rng, T=None, width=1280, height=720, action_id=0):
    T = int(rng.integers(1, 60)) if T is None else T
    return SequenceRecord([random_frame(rng, width, height) for _ in range(T)], action_id, "rand")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fixtures():
    return FIXTURES


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record and print one pass/fail line for an acceptance criterion."""

    def emit(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
