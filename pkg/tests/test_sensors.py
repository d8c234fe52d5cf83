import math

import numpy as np
import pytest

from sam2b.channel import ChannelConfig, TrajectoryConfig, UAVState
from sam2b.errors import ConfigError
from sam2b.sensors import (MODALITIES, CameraConfig, DegradationProfile, DegradationSchedule, DegradeMemory,
                           ModalityDegradation, build_dataset, clean_sample, degrade, project, render_frame)

CAM = CameraConfig()
SHORT = TrajectoryConfig(duration=40, step=1.0)


def uav(pos, t=0.0):
    return UAVState(np.asarray(pos, dtype=float), np.array([8.0, 0, 0]), np.array([0.01, -0.02, 0.3]), t)


def sample_at(pos=(60.0, 10.0, 25.0), label=7):
    return clean_sample(uav(pos), label, CAM)


def test_clean_sample_readings_are_exact():
    s = sample_at((30.0, 40.0, 12.0))
    np.testing.assert_array_equal(s.gps, [30.0, 40.0])
    np.testing.assert_array_equal(s.hd, [12.0, 50.0])
    np.testing.assert_array_equal(s.posture, [0.01, -0.02, 0.3])
    assert s.quality[:, 2].tolist() == [1.0, 1.0, 1.0, 1.0]
    assert s.frame.dtype == np.float32 and s.frame.shape == (32, 32, 3)


def test_projection_centre_and_behind_camera():
    tilt = math.radians(CAM.tilt_deg)
    col, row, depth = project([50 * math.cos(tilt), 0.0, 50 * math.sin(tilt)], CAM)
    assert col == pytest.approx(16.0) and row == pytest.approx(16.0) and depth == pytest.approx(50.0)
    assert project([-10.0, 0.0, 0.0], CAM) is None
    # +y lands to the left of centre when looking down +x with z up
    assert project([50.0, 10.0, 18.0], CAM)[0] < 16.0


def test_bbox_tracks_projection():
    pos = (70.0, -15.0, 30.0)
    _, bbox = render_frame(uav(pos), CAM)
    col, row, _ = project(pos, CAM)
    assert bbox is not None
    assert bbox[0] * CAM.width == pytest.approx(col, abs=1.0)
    assert bbox[1] * CAM.height == pytest.approx(row, abs=1.0)
    assert 0 < bbox[2] <= 1 and 0 < bbox[3] <= 1


def test_uav_out_of_view_has_no_bbox_and_invalid_image():
    s = sample_at((-20.0, 5.0, 10.0))
    assert s.bbox is None and s.quality[0, 2] == 0.0


def test_zero_profile_is_identity_on_readings():
    s = sample_at()
    out = degrade(s, DegradationProfile.zero(), np.random.default_rng(0))
    for attr in ("frame", "bbox", "gps", "hd", "posture"):
        np.testing.assert_array_equal(getattr(out, attr), getattr(s, attr))
    np.testing.assert_array_equal(out.quality[:, :2], 0.0)
    np.testing.assert_array_equal(out.degradation_truth, 0.0)


def test_degrade_never_touches_label_or_input():
    s = sample_at(label=11)
    before = s.copy()
    heavy = DegradationProfile.uniform(noise=50.0, dropout=0.5, stale=0.5, occlusion=0.5)
    for i in range(20):
        assert degrade(s, heavy, np.random.default_rng(i)).label == 11
    np.testing.assert_array_equal(s.gps, before.gps)
    np.testing.assert_array_equal(s.frame, before.frame)


def test_noise_scales_with_level():
    s = sample_at()
    errs = []
    for lv in (1.0, 10.0):
        prof = DegradationProfile.zero().replace(gps=ModalityDegradation(noise=lv))
        d = [degrade(s, prof, np.random.default_rng(i)).gps - s.gps for i in range(400)]
        errs.append(np.std(d))
    assert errs[0] == pytest.approx(1.0, rel=0.15)
    assert errs[1] / errs[0] == pytest.approx(10.0, rel=0.01)  # same draws, scaled


def test_dropout_holds_last_value_and_clears_validity():
    mem = DegradeMemory()
    first = degrade(sample_at((60.0, 10.0, 25.0)), DegradationProfile.zero(), np.random.default_rng(0), mem)
    drop = DegradationProfile.zero().replace(gps=ModalityDegradation(dropout=1.0))
    second = degrade(sample_at((70.0, 20.0, 25.0)), drop, np.random.default_rng(1), mem)
    np.testing.assert_array_equal(second.gps, first.gps)
    k = MODALITIES.index("gps")
    assert second.quality[k, 1] == 1.0 and second.quality[k, 2] == 0.0
    third = degrade(sample_at((80.0, 20.0, 25.0)), drop, np.random.default_rng(2), mem)
    assert third.quality[k, 1] == 2.0
    np.testing.assert_array_equal(second.hd, [25.0, math.hypot(70, 20)])


def test_stale_reading_keeps_validity():
    mem = DegradeMemory()
    degrade(sample_at(), DegradationProfile.zero(), np.random.default_rng(0), mem)
    late = DegradationProfile.zero().replace(hd=ModalityDegradation(stale=1.0))
    out = degrade(sample_at((90.0, 0.0, 40.0)), late, np.random.default_rng(1), mem)
    k = MODALITIES.index("hd")
    assert out.quality[k, 1] == 1.0 and out.quality[k, 2] == 1.0
    assert out.hd[0] == 25.0


def test_occlusion_paints_a_region():
    s = sample_at()
    prof = DegradationProfile.zero().replace(img=ModalityDegradation(occlusion=0.25))
    out = degrade(s, prof, np.random.default_rng(4))
    changed = np.any(out.frame != s.frame, axis=-1).mean()
    assert 0.05 < changed <= 0.35
    assert out.degradation_truth[0, 2] == 0.25
    assert out.quality[0, 0] > 0


def test_noise_cue_tracks_injected_level():
    s = sample_at()
    rng = np.random.default_rng(0)
    levels = rng.uniform(0, 20, size=300)
    cues = [degrade(s, DegradationProfile.uniform(noise=lv), np.random.default_rng(i)).quality[1, 0]
            for i, lv in enumerate(levels)]
    assert np.corrcoef(levels, cues)[0, 1] > 0.8


def test_profile_and_schedule_validation():
    with pytest.raises(ConfigError):
        ModalityDegradation(noise=-1).validate()
    with pytest.raises(ConfigError):
        ModalityDegradation(dropout=1.5).validate()
    with pytest.raises(ConfigError):
        DegradationSchedule(segments=[]).validate()
    with pytest.raises(ConfigError):
        build_dataset(SHORT, ChannelConfig(), DegradationSchedule(), seed=0, split_fraction=1.0)


def test_schedule_segments_and_cycle():
    a, b, c = DegradationProfile.zero(), DegradationProfile.nominal(), DegradationProfile.uniform(noise=5)
    sched = DegradationSchedule(segments=[(0.0, a), (0.5, b)], cycle=[c, a], cycle_block=2, cycle_until=0.2)
    got = [sched.profile_for(i, 20) for i in range(20)]
    assert got[:4] == [c, c, a, a]
    assert got[4:10] == [a] * 6
    assert got[10:] == [b] * 10


def test_build_dataset_is_deterministic_and_labelled():
    a = build_dataset(SHORT, ChannelConfig(), DegradationSchedule.constant(DegradationProfile.nominal()), seed=5)
    b = build_dataset(SHORT, ChannelConfig(), DegradationSchedule.constant(DegradationProfile.nominal()), seed=5)
    c = build_dataset(SHORT, ChannelConfig(), DegradationSchedule.constant(DegradationProfile.nominal()), seed=6)
    assert a == b and a != c
    assert len(a) == 40 and a.split_index == 28
    m = a.manifest
    assert m["count"] == 40 and sum(m["label_histogram"]) == 40
    assert np.all((a.labels >= 0) & (a.labels < 32))
    np.testing.assert_allclose(np.diff([s.time for s in a]), 1.0)


def test_schedules_with_shared_prefix_stay_paired():
    base = DegradationProfile.nominal()
    one = DegradationSchedule(segments=[(0.0, base)])
    two = DegradationSchedule(segments=[(0.0, base), (0.5, DegradationProfile.uniform(noise=30, dropout=0.3))])
    a = build_dataset(SHORT, ChannelConfig(), one, seed=2)
    b = build_dataset(SHORT, ChannelConfig(), two, seed=2)
    assert a.records[:20].tobytes() == b.records[:20].tobytes()
    assert a.records[20:].tobytes() != b.records[20:].tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)


def test_subset_and_item_access():
    ds = build_dataset(SHORT, ChannelConfig(), DegradationSchedule(), seed=1)
    sub = ds.subset(10, 15)
    assert len(sub) == 5 and sub[0].time == ds[10].time
    s = ds[3]
    s.gps[:] = 0  # items are copies
    assert np.any(ds[3].gps != 0)
