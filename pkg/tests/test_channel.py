import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sam2b.channel import (ChannelConfig, TrajectoryConfig, UAVState, avg_snr, beam_snrs, codebook_grid,
                           direction_cosine, make_codebook, oracle_beam, sample_trajectory,
                           steering_vector, synth_channel)
from sam2b.errors import ConfigError, DegenerateGeometryError, DimensionError

LOS = ChannelConfig(rician_K_dB=math.inf)


def state(pos):
    return UAVState(np.asarray(pos, dtype=float), np.zeros(3), np.zeros(3), 0.0)


def test_codebook_rows_unit_norm_and_grid_cell_centred():
    cb = make_codebook(16, 32)
    np.testing.assert_allclose(np.linalg.norm(cb.vectors, axis=1), 1.0)
    g = codebook_grid(4)
    np.testing.assert_allclose(g, [-0.75, -0.25, 0.25, 0.75])
    assert cb.Q == 32 and cb.M == 16


def test_steering_vector_phase_progression():
    a = steering_vector(0.5, 4)
    np.testing.assert_allclose(np.abs(a), 1.0)
    np.testing.assert_allclose(a[1] / a[0], np.exp(1j * np.pi * 0.5))


def test_direction_cosine_and_degenerate_geometry():
    assert direction_cosine([3.0, 4.0, 0.0]) == pytest.approx(0.8)
    assert direction_cosine([10.0, 0.0, 5.0]) == 0.0
    with pytest.raises(DegenerateGeometryError):
        direction_cosine([0, 0, 0])
    with pytest.raises(DegenerateGeometryError):
        synth_channel(state([0, 0, 0]), LOS, np.random.default_rng(0))


def test_avg_snr_matches_scalar_formula():
    rng = np.random.default_rng(0)
    h = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    f = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    manual = sum(abs(np.vdot(h[k], f)) ** 2 for k in range(3)) / 3 * (2.0 / 0.5)
    assert avg_snr(h, f, 2.0, 0.5) == pytest.approx(manual)
    with pytest.raises(DimensionError):
        avg_snr(h, f[:3], 1.0, 1.0)


def test_oracle_tie_break_is_lowest_index():
    cb = make_codebook(4, 8)
    assert oracle_beam(np.zeros((2, 4)), cb, 1.0, 1.0) == 0
    single = make_codebook(1, 4)  # one antenna: every beam has identical gain
    h = np.array([[0.3 - 0.2j], [1.1 + 0.4j]])
    assert np.all(beam_snrs(h, single, 1.0, 1.0) == beam_snrs(h, single, 1.0, 1.0)[0])
    assert oracle_beam(h, single, 1.0, 1.0) == 0


def test_free_space_power_falls_with_distance_squared():
    cb = make_codebook(LOS.M, LOS.Q)
    p = np.array([60.0, 20.0, 30.0])
    near = synth_channel(state(p), LOS, np.random.default_rng(0))
    far = synth_channel(state(2 * p), LOS, np.random.default_rng(0))
    q = oracle_beam(near, cb, LOS.P, LOS.sigma2)
    ratio = beam_snrs(near, cb, 1, 1)[q] / beam_snrs(far, cb, 1, 1)[q]
    assert ratio == pytest.approx(4.0)


def test_los_channel_has_flat_magnitude_across_subcarriers():
    h = synth_channel(state([50.0, -30.0, 20.0]), LOS, np.random.default_rng(1)).h
    np.testing.assert_allclose(np.abs(h), np.abs(h[0, 0]))


def test_rician_factor_controls_scatter():
    cb = make_codebook(16, 32)
    p = [80.0, 10.0, 25.0]
    q = oracle_beam(synth_channel(state(p), LOS, np.random.default_rng(0)), cb, 1, 1)
    hits = sum(oracle_beam(synth_channel(state(p), ChannelConfig(rician_K_dB=20.0), np.random.default_rng(i)),
                           cb, 1, 1) == q for i in range(50))
    assert hits >= 45


@settings(max_examples=60, deadline=None)
@given(u=st.floats(-0.95, 0.95), r=st.floats(20.0, 300.0), phi=st.floats(0.0, math.pi / 2))
def test_los_oracle_picks_nearest_grid_beam(u, r, phi):
    cb = make_codebook(16, 32)
    dist = np.abs(cb.grid - u)
    nearest = np.sort(dist)
    if nearest[1] - nearest[0] < 1e-6:  # midpoint between two beams
        return
    rest = math.sqrt(1 - u * u)
    pos = r * np.array([rest * math.cos(phi), u, rest * math.sin(phi)])
    h = synth_channel(state(pos), LOS, np.random.default_rng(0))
    assert oracle_beam(h, cb, 1.0, 1e-10) == int(np.argmin(dist))


def test_config_validation():
    with pytest.raises(ConfigError):
        ChannelConfig(M=0).validate()
    with pytest.raises(ConfigError):
        ChannelConfig(sigma2=0).validate()
    with pytest.raises(ConfigError):
        TrajectoryConfig(step=0).validate()


# ---------------------------------------------------------------- trajectories


def test_trajectory_respects_rate_limits():
    tc = TrajectoryConfig(duration=300, step=0.5)
    states = sample_trajectory(tc, np.random.default_rng(3))
    assert len(states) == tc.n_steps == 600
    v = np.array([s.velocity for s in states])
    assert np.all(np.hypot(v[:, 0], v[:, 1]) <= tc.speed + 1e-9)
    assert np.all(np.abs(v[:, 2]) <= tc.max_climb_rate + 1e-9)
    heading = np.unwrap(np.arctan2(v[:, 1], v[:, 0]))
    assert np.all(np.abs(np.diff(heading)) <= tc.max_turn_rate * tc.step + 1e-9)
    pos = np.array([s.position for s in states])
    np.testing.assert_allclose(np.diff(pos, axis=0), v[:-1] * tc.step, atol=1e-9)


def test_trajectory_is_deterministic():
    tc = TrajectoryConfig(duration=50, step=1.0)
    a = sample_trajectory(tc, np.random.default_rng(9))
    b = sample_trajectory(tc, np.random.default_rng(9))
    assert all(np.array_equal(x.position, y.position) and np.array_equal(x.posture, y.posture)
               for x, y in zip(a, b))


def test_explicit_waypoints_are_flown_in_order():
    tc = TrajectoryConfig(duration=120, step=0.5, start=(50.0, -40.0, 20.0),
                          waypoints=((50.0, 40.0, 20.0), (120.0, 40.0, 30.0)), posture_jitter=0.0)
    states = sample_trajectory(tc, np.random.default_rng(0))
    end = states[-1].position
    assert np.hypot(end[0] - 120.0, end[1] - 40.0) < tc.waypoint_radius


def test_coarse_steps_keep_moving_between_waypoints():
    # one step covers more ground than the capture radius; the UAV must still progress
    tc = TrajectoryConfig(duration=2000, step=5.0)
    pos = np.array([s.position for s in sample_trajectory(tc, np.random.default_rng(0))])
    late = pos[200:]
    assert np.ptp(late[:, 0]) > 50 and np.ptp(late[:, 1]) > 50
