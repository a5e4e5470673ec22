import math
from dataclasses import replace

import numpy as np
import pytest

from drivefuel.idm_sim import FollowerTrajectory
from drivefuel.trace_io import gen_highway, gen_local
from drivefuel.vehicle_energy import (FIXTURES, CalibrationError, DriveCycleSummary, EngineSpec,
                                      FuelCoefficients, VehicleParams, alpha0_from_engine,
                                      calibrate_alphas, dump_vehicle, fuel_rate, get_vehicle,
                                      instantaneous_power, load_vehicle, power, resistance,
                                      summarize_cycle, trip_fuel)

CAR = FIXTURES["passenger_car"]


def _traj(speeds, dt=0.1):
    v = np.asarray(speeds, float)
    acc = np.append(np.diff(v) / dt, 0.0)
    x = np.concatenate([[0.0], np.cumsum(v[:-1] * dt)])
    return FollowerTrajectory(dt, v, acc, np.full(v.size, 10.0), x)


def test_resistance_at_rest_is_rolling_only():
    p = CAR.params
    assert resistance(0.0, p) == pytest.approx(p.mass * p.gravity * p.rolling_coeff / 1000 * p.c2)


def test_resistance_car_at_100_kmh():
    assert resistance(100.0, CAR.params) == pytest.approx(524.9664723345462, rel=1e-12)


def test_frontal_area_scales_only_aero_term():
    p = CAR.params
    base = resistance(80.0, p)
    rolling = resistance(0.0, replace(p, frontal_area=1e-9)) + p.mass * p.gravity * p.rolling_coeff / 1000 * p.c1 * 80
    aero = base - rolling
    assert resistance(80.0, replace(p, frontal_area=2 * p.frontal_area)) == pytest.approx(rolling + 2 * aero)


def test_grade_adds_weight_component():
    p = CAR.params
    assert resistance(50.0, replace(p, grade=0.02)) - resistance(50.0, p) == pytest.approx(
        p.mass * p.gravity * 0.02)


def test_power_hand_value():
    assert power(100.0, 0.0, 500.0, CAR.params) == pytest.approx(100 * 500 / 3312, rel=1e-12)
    assert power(100.0, 0.0, 500.0, CAR.params) == pytest.approx(15.097, abs=1e-3)


def test_power_zero_at_rest_and_negative_when_braking():
    assert power(0.0, 1.0, resistance(0.0, CAR.params), CAR.params) == 0.0
    assert power(60.0, -3.0, resistance(60.0, CAR.params), CAR.params) < 0


def test_power_accepts_arrays():
    v = np.array([0.0, 36.0, 72.0])
    P = power(v, np.zeros(3), resistance(v, CAR.params), CAR.params)
    assert P.shape == (3,) and P[0] == 0.0 and P[2] > P[1] > 0


def test_fuel_rate_branches():
    c = CAR.fuel
    assert fuel_rate(-5.0, c) == c.alpha0
    assert fuel_rate(0.0, c) == c.alpha0
    assert fuel_rate(10.0, c) == pytest.approx(5.9217e-4 + 4.2378e-4 + 1.0e-4, rel=1e-12)
    assert fuel_rate(10.0, c) == pytest.approx(1.11595e-3, abs=1e-9)


def test_trip_fuel_idle_and_cruise():
    dt, n = 0.1, 601
    idle = _traj(np.zeros(n), dt)
    assert trip_fuel(idle, CAR.params, CAR.fuel) == pytest.approx(CAR.fuel.alpha0 * 60.0, rel=1e-12)
    cruise = _traj(np.full(n, 20.0), dt)
    P = instantaneous_power(20.0, 0.0, CAR.params)
    expected = 60.0 * fuel_rate(P, CAR.fuel)
    assert trip_fuel(cruise, CAR.params, CAR.fuel) == pytest.approx(expected, rel=1e-12)


def test_trip_fuel_grows_with_prefix():
    v = gen_local(300, stops=4, seed=1).speeds
    f = [trip_fuel(_traj(v[:k]), CAR.params, CAR.fuel) for k in (500, 1500, 3000)]
    assert f[0] < f[1] < f[2]


def test_truck_burns_more_than_car_on_same_trip():
    traj = _traj(gen_highway(300, seed=2).speeds)
    truck = FIXTURES["light_duty_truck"]
    assert trip_fuel(traj, truck.params, truck.fuel) > trip_fuel(traj, CAR.params, CAR.fuel)


def test_alpha0_hand_value_and_structure():
    e = EngineSpec(idle_mean_pressure=400000, idle_speed=700, displacement=2.4,
                   heating_value=4.3e7, cylinders=4)
    assert alpha0_from_engine(e) == pytest.approx(6.72e8 / 3.8122e12, rel=1e-3)
    assert alpha0_from_engine(e) == pytest.approx(1.7629e-4, rel=1e-4)
    assert alpha0_from_engine(replace(e, cylinders=8)) == pytest.approx(alpha0_from_engine(e) / 2)
    assert alpha0_from_engine(replace(e, idle_mean_pressure=3 * 400000)) == pytest.approx(
        3 * alpha0_from_engine(e))


def test_engine_spec_validation():
    with pytest.raises(ValueError):
        EngineSpec(400000, 700, 2.4, 4.3e7, 0)


def _cycle(speeds, dt, p, c):
    """Summary whose total fuel is generated by the model itself."""
    v = np.asarray(speeds, float)
    P = instantaneous_power(v[:-1], np.diff(v) / dt, p)
    return summarize_cycle(v, dt, p, float(np.sum(fuel_rate(P, c)) * dt))


def test_calibration_recovers_known_coefficients():
    truth = FuelCoefficients(5.9217e-4, 4.2378e-5, 3.0e-6)
    city = _cycle(gen_local(1200, dt=1.0, stops=10, seed=3).speeds, 1.0, CAR.params, truth)
    hwy = _cycle(gen_highway(800, dt=1.0, seed=3).speeds, 1.0, CAR.params, truth)
    got = calibrate_alphas(truth.alpha0, city, hwy)
    assert got.alpha1 == pytest.approx(truth.alpha1, rel=1e-9)
    assert got.alpha2 == pytest.approx(truth.alpha2, rel=1e-9)


def test_calibration_floors_negative_alpha2():
    city = DriveCycleSummary(total_fuel=0.0, duration=1000.0, power_sum=5000.0, power_sq_sum=1.0e5)
    hwy = DriveCycleSummary(total_fuel=0.0, duration=800.0, power_sum=12000.0, power_sq_sum=4.0e5)
    a0, a1, a2 = 5e-4, 5e-5, -1e-6
    city = replace(city, total_fuel=a0 * 1000 + a1 * 5000 + a2 * 1e5)
    hwy = replace(hwy, total_fuel=a0 * 800 + a1 * 12000 + a2 * 4e5)
    got = calibrate_alphas(a0, city, hwy, alpha2_floor=1e-6)
    assert got.alpha2 == 1e-6
    assert got.alpha1 == pytest.approx((city.total_fuel - 1000 * a0 - 1e5 * 1e-6) / 5000, rel=1e-12)


def test_calibration_singular_system():
    s = DriveCycleSummary(2.0, 1000.0, 5000.0, 1.0e5)
    with pytest.raises(CalibrationError, match="singular"):
        calibrate_alphas(5e-4, s, s)


def test_calibration_negative_alpha1_is_an_error():
    city = DriveCycleSummary(0.4, 1000.0, 5000.0, 1.0e5)
    hwy = DriveCycleSummary(0.3, 800.0, 12000.0, 4.0e5)
    with pytest.raises(CalibrationError, match="negative alpha1"):
        calibrate_alphas(5e-4, city, hwy)


def test_fixture_lookup_and_aliases():
    assert get_vehicle("car") is CAR
    assert get_vehicle("light_duty_truck").params.mass == 3152.0
    with pytest.raises(KeyError, match="unknown vehicle"):
        get_vehicle("tractor")


def test_vehicle_file_round_trip(tmp_path):
    path = tmp_path / "car.txt"
    path.write_text(dump_vehicle(CAR))
    back = load_vehicle(path)
    assert back.params == CAR.params and back.fuel == CAR.fuel and back.name == CAR.name


def test_vehicle_file_with_base_override(tmp_path):
    path = tmp_path / "heavy.txt"
    path.write_text("# heavier car\nbase = passenger_car\nmass = 1800\nalpha1 = 5e-5\n")
    v = load_vehicle(path)
    assert v.params.mass == 1800.0 and v.params.drag_coeff == CAR.params.drag_coeff
    assert v.fuel.alpha1 == 5e-5 and v.fuel.alpha0 == CAR.fuel.alpha0


def test_vehicle_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("base = car\nwheels = 4\n")
    with pytest.raises(ValueError, match="unknown keys"):
        load_vehicle(path)


def test_params_validation():
    with pytest.raises(ValueError):
        VehicleParams(mass=-1, drag_coeff=0.3, frontal_area=2.0)
    with pytest.raises(ValueError):
        FuelCoefficients(0.0, 1e-5, 1e-6)
    assert math.isclose(CAR.params.air_density, 1.2256)
