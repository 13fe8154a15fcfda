import pytest

from hand_activity.core import Hand, LocationClass, ObjectClass, ProbVector, admissible_classes
from hand_activity.perception import HandState, TickResult


def hand_state(hand, label, peak=0.85):
    """HandState as a two-stage classifier would emit it for ``label``."""
    objects = tuple(ObjectClass)
    if isinstance(label, ObjectClass):
        return HandState(hand, ProbVector.peaked(objects, label, peak), None, label)
    obj = ProbVector.peaked(objects, ObjectClass.NONE, peak)
    loc = ProbVector.peaked(admissible_classes(hand), label, peak)
    return HandState(hand, obj, loc, label)


def tick(index, left, right, timestamp=None):
    ts = index * 33_333 if timestamp is None else timestamp
    return TickResult(index, ts, hand_state(Hand.Left, left), hand_state(Hand.Right, right), {})


@pytest.fixture
def wheel():
    return LocationClass.Wheel


ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
