from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hand_activity.core import (
    VIEWS,
    ConfigError,
    Frame,
    Hand,
    LocationClass,
    ObjectClass,
    PipelineConfig,
    ProbVector,
    SeatROI,
    ViewId,
    admissible_classes,
    load_config,
    parse_label,
    validate_config,
)


class TestTaxonomies:
    def test_views(self):
        assert [v.value for v in VIEWS] == ["WheelCam", "DashDriverCam", "DashCenterCam", "MirrorCam"]

    def test_class_counts(self):
        assert len(ObjectClass) == 4
        assert len(LocationClass) == 5
        assert len(Hand) == 2

    def test_admissible_left(self):
        assert set(admissible_classes(Hand.Left)) == {LocationClass.Wheel, LocationClass.Lap,
                                                      LocationClass.Air}

    def test_admissible_right(self):
        assert len(admissible_classes(Hand.Right)) == 5

    def test_left_subset_of_right(self):
        left, right = set(admissible_classes(Hand.Left)), set(admissible_classes(Hand.Right))
        assert len(left) < len(right)
        assert left < right

    def test_parse_label(self):
        assert parse_label("Phone") is ObjectClass.Phone
        assert parse_label("Cupholder") is LocationClass.Cupholder
        with pytest.raises(ValueError):
            parse_label("None")
        with pytest.raises(ValueError):
            parse_label("Steering")


class TestConfig:
    def test_defaults_valid(self):
        cfg = PipelineConfig()
        assert validate_config(cfg) is cfg
        assert cfg.smoothing_window == 3
        assert cfg.alert_threshold == 150
        assert cfg.crop_radius_px == {v: 100 for v in VIEWS}
        assert cfg.sync_tolerance_us == 16_667

    def test_zero_window_rejected(self):
        with pytest.raises(ConfigError) as exc:
            validate_config(replace(PipelineConfig(), smoothing_window=0))
        assert exc.value.field == "smoothing_window"

    @pytest.mark.parametrize("name", ["alert_threshold", "sync_tolerance_us", "alert_cooldown"])
    def test_non_positive_rejected(self, name):
        with pytest.raises(ConfigError) as exc:
            validate_config(replace(PipelineConfig(), **{name: 0}))
        assert exc.value.field == name

    def test_idempotent(self):
        cfg = validate_config(PipelineConfig())
        assert validate_config(validate_config(cfg)) == cfg

    def test_load_toml(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text(
            'smoothing_window = 5\nalert_threshold = 90\n'
            '[crop_radius_px]\nWheelCam = 80\n'
            '[seat_roi]\nMirrorCam = [0.4, 0.0, 1.0, 1.0]\n'
        )
        cfg = load_config(path, {"alert_threshold": 120})
        assert cfg.smoothing_window == 5
        assert cfg.alert_threshold == 120  # override wins
        assert cfg.crop_radius_px[ViewId.WheelCam] == 80
        assert cfg.crop_radius_px[ViewId.MirrorCam] == 100
        assert cfg.seat_roi[ViewId.MirrorCam] == SeatROI(0.4, 0.0, 1.0, 1.0)

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("window = 3\n")
        with pytest.raises(ConfigError):
            load_config(path)


class TestProbVector:
    def test_sum_checked(self):
        with pytest.raises(ValueError):
            ProbVector(("a", "b"), (0.5, 0.6))

    def test_argmax_tie_first(self):
        v = ProbVector(tuple(ObjectClass), (0.5, 0.0, 0.5, 0.0))
        assert v.argmax() is ObjectClass.NONE

    @given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6), st.integers(0, 5))
    def test_peaked_is_distribution(self, weights, target):
        labels = tuple(range(len(weights)))
        peak = weights[0]
        v = ProbVector.peaked(labels, labels[target % len(labels)], peak)
        assert abs(sum(v.probs) - 1) <= 1e-6
        assert all(0 <= p <= 1 for p in v.probs)


class TestFrame:
    def test_dims(self):
        with pytest.raises(ValueError):
            Frame(ViewId.WheelCam, 0, 0, 10)

    def test_pixel_shape(self):
        Frame(ViewId.WheelCam, 0, 4, 3, np.zeros((3, 4), np.uint8))
        with pytest.raises(ValueError):
            Frame(ViewId.WheelCam, 0, 4, 3, np.zeros((4, 3), np.uint8))
