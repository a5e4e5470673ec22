import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drivefuel.idm_sim import (DriverPreferences, IdmConstants, SimulationError, default_init_gap,
                               desired_gap, equilibrium_gap, idm_accel, simulate_follower)
from drivefuel.trace_io import SpeedTrace


def test_desired_gap_at_rest_is_jam(prefs):
    assert desired_gap(0.0, 0.0, prefs) == prefs.jam


def test_desired_gap_hand_values():
    p = DriverPreferences(a_max=1.0, b_des=1.5, headway=1.0, jam=2.0)
    assert desired_gap(15.0, 0.0, p) == pytest.approx(17.0)
    assert desired_gap(15.0, 2.0, p) == pytest.approx(17.0 + 30.0 / (2.0 * math.sqrt(1.5)))
    assert desired_gap(15.0, 2.0, p) == pytest.approx(29.2474, abs=1e-4)


def test_accel_at_jam_distance_is_zero(prefs, consts):
    assert idm_accel(0.0, 0.0, prefs.jam, prefs, consts) == pytest.approx(0.0, abs=1e-15)


def test_accel_free_road_start(prefs, consts):
    assert idm_accel(0.0, 0.0, 1e6, prefs, consts) == pytest.approx(prefs.a_max, rel=1e-9)


def test_accel_hand_value():
    p = DriverPreferences(a_max=1.0, b_des=1.5, headway=1.0, jam=2.0)
    # 1 - (15/30)^4 - (17/100)^2
    assert idm_accel(15.0, 0.0, 100.0, p, IdmConstants(v0=30.0)) == pytest.approx(0.9086, abs=1e-12)


def test_accel_is_floored_at_twice_comfortable_braking(prefs, consts):
    assert idm_accel(20.0, 10.0, 0.5, prefs, consts) == -2.0 * prefs.b_des


def test_accel_rejects_nonpositive_gap(prefs, consts):
    with pytest.raises(ValueError):
        idm_accel(1.0, 0.0, 0.0, prefs, consts)


def test_general_delta_matches_formula(prefs):
    c = IdmConstants(v0=30.0, delta=2.0)
    s = desired_gap(10.0, 1.0, prefs)
    expected = prefs.a_max * (1 - (10 / 30) ** 2 - (s / 40.0) ** 2)
    assert idm_accel(10.0, 1.0, 40.0, prefs, c) == pytest.approx(expected, rel=1e-12)


def test_preferences_must_be_positive():
    with pytest.raises(ValueError):
        DriverPreferences(a_max=0.0, b_des=1.0, headway=1.0, jam=1.0)


def test_equilibrium_behind_constant_leader(consts):
    p = DriverPreferences(a_max=1.0, b_des=1.5, headway=1.5, jam=2.0)
    leader = SpeedTrace(0.1, np.full(6001, 25.0))
    traj = simulate_follower(leader, p, consts)
    assert traj.speeds[-1] == pytest.approx(25.0, rel=0.02)
    assert equilibrium_gap(25.0, p, consts) == pytest.approx(47.77, abs=0.01)
    assert traj.gaps[-1] == pytest.approx(47.77, rel=0.01)


def test_stationary_leader_at_jam_gap_keeps_follower_still(prefs, consts):
    leader = SpeedTrace(0.1, np.zeros(500))
    traj = simulate_follower(leader, prefs, consts, init_gap=prefs.jam)
    assert np.all(traj.speeds == 0.0)
    np.testing.assert_allclose(traj.gaps, prefs.jam)


def test_stationary_leader_with_default_gap_creeps_up_to_jam(prefs, consts):
    leader = SpeedTrace(0.1, np.zeros(3000))
    traj = simulate_follower(leader, prefs, consts)
    assert traj.gaps[0] == default_init_gap(leader, prefs) == 10.0
    assert np.all(np.diff(traj.gaps) <= 1e-12)
    assert traj.gaps[-1] == pytest.approx(prefs.jam, abs=0.05)
    # explicit stepping may settle a few cm inside the jam distance
    assert traj.gaps.min() > 0.9 * prefs.jam


def test_default_init_gap_uses_headway_at_start_speed(prefs):
    leader = SpeedTrace(0.1, np.full(10, 20.0))
    assert default_init_gap(leader, prefs) == pytest.approx(prefs.jam + prefs.headway * 20.0)


def test_trajectory_shape_and_kinematics(short_local, prefs, consts):
    traj = simulate_follower(short_local, prefs, consts)
    n = len(short_local)
    for arr in (traj.speeds, traj.accels, traj.gaps, traj.positions):
        assert arr.shape == (n,)
    assert traj.speeds.min() >= 0.0
    assert traj.gaps.min() > 0.0
    np.testing.assert_allclose(short_local.positions() - traj.positions, traj.gaps, atol=1e-9)
    assert traj.gaps[0] == default_init_gap(short_local, prefs)


def test_collision_raises_with_step():
    # a tailgater with weak brakes behind a leader that stops dead
    p = DriverPreferences(a_max=2.0, b_des=0.1, headway=0.1, jam=0.1)
    v = np.concatenate([np.full(1200, 15.0), np.zeros(600)])
    leader = SpeedTrace(0.1, v)
    with pytest.raises(SimulationError) as err:
        simulate_follower(leader, p, IdmConstants(v0=40.0))
    assert err.value.step >= 1200
    assert err.value.gap <= 0


def test_trajectory_csv(tmp_path, short_highway, prefs, consts):
    traj = simulate_follower(short_highway, prefs, consts)
    path = tmp_path / "f.csv"
    traj.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t_s,v_mps,a_mps2,gap_m,x_m"
    assert len(lines) == len(short_highway) + 1


@settings(max_examples=40, deadline=None)
@given(a=st.floats(0.2, 2.0), b=st.floats(1.0, 3.0), T=st.floats(0.8, 2.0), s0=st.floats(1.0, 3.0))
def test_table_preferences_never_collide_on_local_trace(short_local, a, b, T, s0):
    traj = simulate_follower(short_local, DriverPreferences(a, b, T, s0), IdmConstants(v0=17.88))
    assert traj.gaps.min() > 0


@settings(max_examples=60, deadline=None)
@given(v=st.floats(0, 40), dv=st.floats(-10, 10), gap=st.floats(0.1, 500))
def test_accel_bounded(v, dv, gap):
    p = DriverPreferences(1.2, 2.0, 1.4, 2.0)
    acc = idm_accel(v, dv, gap, p, IdmConstants(v0=33.33))
    assert -2.0 * p.b_des <= acc <= p.a_max
