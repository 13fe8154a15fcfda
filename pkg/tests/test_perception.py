import itertools
from types import MappingProxyType

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import crop_extent, first_argmax
from hand_activity.core import (
    VIEWS,
    Frame,
    Hand,
    LocationClass,
    ObjectClass,
    PipelineConfig,
    ProbVector,
    SeatROI,
    ViewId,
    admissible_classes,
)
from hand_activity.perception import (
    BackendContractError,
    BoundingBox,
    HandCrop,
    NoDriverDetected,
    NoValidCrop,
    PoseEstimate,
    classify_hand,
    crop_hand,
    process_tick,
    select_driver,
)
from hand_activity.sync import SyncedFrameSet

FULL = SeatROI(0.0, 0.0, 1.0, 1.0)
RIGHT_HALF = SeatROI(0.5, 0.0, 1.0, 1.0)
ALL_SEAT = {v: FULL for v in VIEWS}


def pose_at(lx, ly, rx, ry, conf=0.9):
    return PoseEstimate({"LeftWrist": (lx, ly, conf), "RightWrist": (rx, ry, conf)})


class FakeBackends:
    """Fixed outputs; records which classifier stages ran."""

    def __init__(self, obj, loc=None, boxes=None, pose=None):
        self.obj, self.loc = obj, loc
        self.boxes = boxes if boxes is not None else [BoundingBox(10, 10, 600, 470)]
        self.pose = pose or pose_at(200, 300, 400, 300)
        self.calls = []

    def detect(self, frame):
        return list(self.boxes)

    def estimate_pose(self, frame, box):
        return self.pose

    def classify_object(self, hand, crops):
        assert len(crops) == 4
        self.calls.append("object")
        return self.obj

    def classify_location(self, hand, crops):
        self.calls.append("location")
        return self.loc


def valid_crop(view=ViewId.WheelCam, hand=Hand.Right):
    return HandCrop(view, hand, 0, BoundingBox(0, 0, 10, 10), True)


class TestSelectDriver:
    def test_single(self):
        box = BoundingBox(100, 100, 300, 300)
        assert select_driver([box], FULL, 640, 480) is box

    def test_passenger_excluded(self):
        passenger = BoundingBox(20, 50, 250, 450)
        driver = BoundingBox(380, 50, 620, 450)
        assert select_driver([passenger, driver], RIGHT_HALF, 640, 480) is driver

    def test_largest_area_wins(self):
        small = BoundingBox(400, 200, 410, 210)   # area 100
        big = BoundingBox(400, 200, 420, 220)     # area 400
        boxes = [small, big]
        for perm in itertools.permutations(boxes):
            expected = max(perm, key=lambda b: b.area)
            assert select_driver(list(perm), RIGHT_HALF, 640, 480) is expected is big

    def test_equal_area_lowest_index(self):
        a = BoundingBox(400, 200, 410, 210)
        b = BoundingBox(500, 200, 510, 210)
        assert select_driver([a, b], RIGHT_HALF, 640, 480) is a
        assert select_driver([b, a], RIGHT_HALF, 640, 480) is b

    def test_none_inside(self):
        with pytest.raises(NoDriverDetected):
            select_driver([BoundingBox(0, 0, 100, 100)], RIGHT_HALF, 640, 480)
        with pytest.raises(NoDriverDetected):
            select_driver([], FULL, 640, 480)

    @given(st.lists(st.tuples(st.integers(0, 600), st.integers(0, 440), st.integers(1, 200),
                              st.integers(1, 200)), min_size=1, max_size=6, unique_by=lambda t: t[2] * t[3]),
           st.randoms())
    def test_permutation_invariant(self, specs, rnd):
        boxes = [BoundingBox(x, y, x + w, y + h) for x, y, w, h in specs]
        shuffled = boxes[:]
        rnd.shuffle(shuffled)
        try:
            first = select_driver(boxes, FULL, 640, 480)
        except NoDriverDetected:
            with pytest.raises(NoDriverDetected):
                select_driver(shuffled, FULL, 640, 480)
            return
        assert select_driver(shuffled, FULL, 640, 480) == first


class TestCropHand:
    frame = Frame(ViewId.WheelCam, 0, 640, 480)

    def test_centered(self):
        crop = crop_hand(pose_at(0, 0, 320, 240), Hand.Right, self.frame, 100)
        assert crop.valid
        assert (crop.box.x_min, crop.box.y_min, crop.box.x_max, crop.box.y_max) == (220, 140, 420, 340)

    def test_clamped_at_origin(self):
        crop = crop_hand(pose_at(30, 50, 0, 0), Hand.Left, self.frame, 100)
        assert (crop.box.x_min, crop.box.y_min, crop.box.x_max, crop.box.y_max) == (0, 0, 130, 150)

    def test_low_confidence_invalid(self):
        crop = crop_hand(pose_at(300, 200, 300, 200, conf=0.1), Hand.Left, self.frame, 100, 0.3)
        assert not crop.valid
        assert crop.box is None and crop.pixels is None

    def test_wrist_outside_frame_invalid(self):
        crop = crop_hand(pose_at(-150, 200, 0, 0), Hand.Left, self.frame, 100)
        assert not crop.valid

    def test_pixels_match_box(self):
        pixels = np.arange(480 * 640, dtype=np.uint32).astype(np.uint8).reshape(480, 640)
        frame = Frame(ViewId.MirrorCam, 7, 640, 480, pixels)
        crop = crop_hand(pose_at(600, 20, 0, 0), Hand.Left, frame, 50)
        assert crop.pixels.shape == (70, 90)
        assert np.array_equal(crop.pixels, pixels[0:70, 550:640])
        assert crop.timestamp == 7

    def test_radius_positive(self):
        with pytest.raises(ValueError):
            crop_hand(pose_at(1, 1, 1, 1), Hand.Left, self.frame, 0)

    @given(st.floats(-50, 700), st.floats(-50, 550), st.integers(1, 300),
           st.integers(1, 800), st.integers(1, 600))
    def test_closed_form_and_bounds(self, wx, wy, r, w, h):
        frame = Frame(ViewId.WheelCam, 0, w, h)
        crop = crop_hand(pose_at(wx, wy, 0, 0), Hand.Left, frame, r)
        expected = crop_extent(wx, wy, r, w, h)
        if expected is None:
            assert not crop.valid
            return
        b = crop.box
        assert (b.x_min, b.y_min, b.x_max, b.y_max) == expected
        assert 0 <= b.x_min < b.x_max <= w and 0 <= b.y_min < b.y_max <= h
        assert b.x_max - b.x_min <= 2 * r and b.y_max - b.y_min <= 2 * r
        if r <= wx + 0.5 - 1 and wx + r + 0.5 <= w and r <= wy + 0.5 - 1 and wy + r + 0.5 <= h:
            assert b.x_max - b.x_min == 2 * r and b.y_max - b.y_min == 2 * r


OBJECTS = tuple(ObjectClass)


class TestClassifyHand:
    crops = [valid_crop(), None, None, None]

    def test_object_wins(self):
        be = FakeBackends(ProbVector(OBJECTS, (0.1, 0.2, 0.6, 0.1)))
        state = classify_hand(Hand.Right, self.crops, be)
        assert state.label is ObjectClass.Phone
        assert state.location_probs is None
        assert be.calls == ["object"]

    def test_location_pass(self):
        loc = ProbVector(tuple(LocationClass), (0.9, 0.025, 0.025, 0.025, 0.025))
        be = FakeBackends(ProbVector(OBJECTS, (0.7, 0.1, 0.1, 0.1)), loc)
        state = classify_hand(Hand.Right, self.crops, be)
        assert state.label is LocationClass.Wheel
        assert be.calls == ["object", "location"]

    def test_tie_goes_to_none(self):
        loc = ProbVector(admissible_classes(Hand.Left), (0.2, 0.7, 0.1))
        be = FakeBackends(ProbVector(OBJECTS, (0.5, 0.0, 0.5, 0.0)), loc)
        state = classify_hand(Hand.Left, self.crops, be)
        assert be.calls == ["object", "location"]
        assert state.label is LocationClass.Lap

    def test_exhaustive_tie_table(self):
        # every object vector on a 0.1 grid, including all tie patterns
        grid = [c for c in itertools.product(range(11), repeat=4) if sum(c) == 10]
        loc = ProbVector(admissible_classes(Hand.Left), (0.1, 0.1, 0.8))
        for counts in grid:
            probs = tuple(c / 10 for c in counts)
            be = FakeBackends(ProbVector(OBJECTS, probs), loc)
            state = classify_hand(Hand.Left, self.crops, be)
            top = first_argmax(counts)
            if top == 0:
                assert state.label is LocationClass.Air
                assert be.calls == ["object", "location"]
            else:
                assert state.label is OBJECTS[top]
                assert be.calls == ["object"]

    def test_no_valid_crop(self):
        be = FakeBackends(ProbVector(OBJECTS, (1, 0, 0, 0)))
        invalid = HandCrop(ViewId.WheelCam, Hand.Left, 0, None, False)
        with pytest.raises(NoValidCrop):
            classify_hand(Hand.Left, [invalid, None, None, None], be)

    def test_location_labels_checked(self):
        wrong = ProbVector(tuple(LocationClass), (0.2, 0.2, 0.2, 0.2, 0.2))
        be = FakeBackends(ProbVector(OBJECTS, (1, 0, 0, 0)), wrong)
        with pytest.raises(BackendContractError):
            classify_hand(Hand.Left, self.crops, be)

    def test_left_label_domain(self):
        for probs in itertools.product([0.0, 0.5, 1.0], repeat=3):
            if sum(probs) != 1.0:
                continue
            loc = ProbVector(admissible_classes(Hand.Left), probs)
            be = FakeBackends(ProbVector(OBJECTS, (1, 0, 0, 0)), loc)
            label = classify_hand(Hand.Left, self.crops, be).label
            assert label in {LocationClass.Wheel, LocationClass.Lap, LocationClass.Air}


def frame_set(present=VIEWS, ts=0):
    frames = {v: (Frame(v, ts, 640, 480) if v in present else None) for v in VIEWS}
    return SyncedFrameSet(0, ts, MappingProxyType(frames),
                          frozenset(v for v in VIEWS if v not in present))


class TestProcessTick:
    def test_phone_round_trip(self):
        be = FakeBackends(ProbVector.peaked(OBJECTS, ObjectClass.Phone))
        result = process_tick(frame_set(), be, PipelineConfig(), ALL_SEAT)
        assert result.right.label is ObjectClass.Phone
        assert all(d == () for d in result.diagnostics.values())

    def test_no_driver_anywhere(self):
        be = FakeBackends(ProbVector.peaked(OBJECTS, ObjectClass.Phone), boxes=[])
        result = process_tick(frame_set(), be, PipelineConfig(), ALL_SEAT)
        assert result.left.is_unknown and result.right.is_unknown
        assert [d for v in VIEWS for d in result.diagnostics[v]] == ["NoDriverDetected"] * 4

    def test_single_view_suffices(self):
        be = FakeBackends(ProbVector.peaked(OBJECTS, ObjectClass.Tablet))
        result = process_tick(frame_set(present=(ViewId.MirrorCam,)), be, PipelineConfig(), ALL_SEAT)
        assert result.left.label is ObjectClass.Tablet
        assert result.diagnostics[ViewId.WheelCam] == ("Missing",)

    def test_low_confidence_everywhere_is_unknown(self):
        be = FakeBackends(ProbVector.peaked(OBJECTS, ObjectClass.Tablet),
                          pose=pose_at(100, 100, 200, 200, conf=0.05))
        result = process_tick(frame_set(), be, PipelineConfig(), ALL_SEAT)
        assert result.left.is_unknown and result.right.is_unknown
