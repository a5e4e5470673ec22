"""Power-based fuel consumption: road load, tractive power, quadratic fuel
rate with an idle floor, and calibration of the rate coefficients.

Speeds enter the road-load and power formulas in km/h (the constants 25.92
and 3600 assume it); trajectories are kept in m/s and converted here.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .idm_sim import FollowerTrajectory

MS_TO_KMH = 3.6
ROTATIONAL_MASS_FACTOR = 1.04
IDLE_CONSTANT = 22164.0


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleParams:
    mass: float
    drag_coeff: float
    frontal_area: float
    altitude_corr: float = 1.0
    air_density: float = 1.2256
    rolling_coeff: float = 1.75
    c1: float = 0.0328
    c2: float = 4.575
    driveline_eff: float = 0.92
    gravity: float = 9.8066
    grade: float = 0.0

    def __post_init__(self) -> None:
        if not (self.mass > 0 and self.frontal_area > 0 and self.air_density > 0):
            raise ValueError("mass, frontal_area and air_density must be positive")
        if not 0 < self.driveline_eff <= 1:
            raise ValueError("driveline_eff must be in (0, 1]")


@dataclass(frozen=True)
class EngineSpec:
    idle_mean_pressure: float  # Pa
    idle_speed: float  # rpm
    displacement: float  # L
    heating_value: float  # J/kg
    cylinders: int

    def __post_init__(self) -> None:
        if min(self.idle_mean_pressure, self.idle_speed, self.displacement, self.heating_value) <= 0:
            raise ValueError("engine parameters must be positive")
        if int(self.cylinders) != self.cylinders or self.cylinders < 1:
            raise ValueError("cylinders must be an integer >= 1")


@dataclass(frozen=True)
class FuelCoefficients:
    alpha0: float  # L/s
    alpha1: float  # L/(s kW)
    alpha2: float  # L/(s kW^2)

    def __post_init__(self) -> None:
        if not (self.alpha0 > 0 and self.alpha1 >= 0 and self.alpha2 >= 0):
            raise ValueError("need alpha0 > 0, alpha1 >= 0, alpha2 >= 0")


@dataclass(frozen=True)
class DriveCycleSummary:
    """Aggregates of one calibration cycle.

    ``power_sum`` and ``power_sq_sum`` are time integrals over positive-power
    instants (kW*s and kW^2*s); for 1 Hz cycles they equal plain sums.
    """

    total_fuel: float
    duration: float
    power_sum: float
    power_sq_sum: float


@dataclass(frozen=True)
class Vehicle:
    """A named vehicle: physical parameters plus calibrated fuel model."""

    name: str
    params: VehicleParams
    fuel: FuelCoefficients
    cylinders: int | None = None
    displacement: float | None = None
    city_mpg: float | None = None
    highway_mpg: float | None = None


FIXTURES: dict[str, Vehicle] = {
    "passenger_car": Vehicle(
        "passenger_car",
        VehicleParams(mass=1453.0, drag_coeff=0.3, frontal_area=2.32),
        FuelCoefficients(5.9217e-4, 4.2378e-5, 1e-6),
        cylinders=4, displacement=2.4, city_mpg=22.0, highway_mpg=31.0,
    ),
    "light_duty_truck": Vehicle(
        "light_duty_truck",
        VehicleParams(mass=3152.0, drag_coeff=0.6, frontal_area=3.87),
        FuelCoefficients(7.7984e-4, 1.9556e-5, 1e-6),
        cylinders=8, displacement=6.2, city_mpg=12.0, highway_mpg=16.0,
    ),
}
ALIASES = {"car": "passenger_car", "truck": "light_duty_truck"}


def get_vehicle(name: str) -> Vehicle:
    key = ALIASES.get(name, name)
    try:
        return FIXTURES[key]
    except KeyError:
        raise KeyError(f"unknown vehicle {name!r}; known: {', '.join(sorted(FIXTURES))}") from None


def load_vehicle(path: str | Path) -> Vehicle:
    """Read a ``key = value`` vehicle file.

    Keys are :class:`VehicleParams` field names plus ``alpha0``, ``alpha1``,
    ``alpha2`` and an optional ``name``. A ``base = <fixture>`` line starts
    from a built-in fixture and overrides only the listed keys.
    """
    path = Path(path)
    values: dict[str, str] = {}
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{line_no}: expected key = value")
        values[key.strip()] = value.strip()
    base = get_vehicle(values.pop("base")) if "base" in values else None
    name = values.pop("name", base.name if base else path.stem)
    param_names = {f.name for f in fields(VehicleParams)}
    unknown = set(values) - param_names - {"alpha0", "alpha1", "alpha2"}
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    pkw = {k: float(v) for k, v in values.items() if k in param_names}
    fkw = {k: float(v) for k, v in values.items() if k.startswith("alpha")}
    if base is not None:
        params = replace(base.params, **pkw)
        fuel = replace(base.fuel, **fkw)
    else:
        params = VehicleParams(**pkw)
        fuel = FuelCoefficients(**fkw)
    return Vehicle(name, params, fuel)


def dump_vehicle(vehicle: Vehicle) -> str:
    lines = [f"name = {vehicle.name}"]
    lines += [f"{k} = {v!r}" for k, v in asdict(vehicle.params).items()]
    lines += [f"{k} = {v!r}" for k, v in asdict(vehicle.fuel).items()]
    return "\n".join(lines) + "\n"


def resistance(v_kmh, p: VehicleParams):
    """Road load (N) at speed ``v_kmh``: aerodynamic + rolling + grade."""
    v = np.asarray(v_kmh, dtype=float)
    aero = p.air_density / 25.92 * p.drag_coeff * p.altitude_corr * p.frontal_area * v * v
    rolling = p.mass * p.gravity * p.rolling_coeff / 1000.0 * (p.c1 * v + p.c2)
    out = aero + rolling + p.mass * p.gravity * p.grade
    return float(out) if out.ndim == 0 else out


def power(v_kmh, accel, R, p: VehicleParams):
    """Tractive power (kW); negative while braking."""
    v = np.asarray(v_kmh, dtype=float)
    out = v * (R + ROTATIONAL_MASS_FACTOR * p.mass * np.asarray(accel, dtype=float)) / (3600.0 * p.driveline_eff)
    return float(out) if out.ndim == 0 else out


def fuel_rate(P, c: FuelCoefficients):
    """Fuel rate (L/s): quadratic in positive power, idle rate otherwise."""
    P = np.asarray(P, dtype=float)
    out = np.where(P > 0, c.alpha0 + c.alpha1 * P + c.alpha2 * P * P, c.alpha0)
    return float(out) if out.ndim == 0 else out


def instantaneous_power(speeds_ms, accels, p: VehicleParams) -> np.ndarray:
    v_kmh = np.asarray(speeds_ms, dtype=float) * MS_TO_KMH
    return power(v_kmh, accels, resistance(v_kmh, p), p)


def trip_fuel(traj: FollowerTrajectory, p: VehicleParams, c: FuelCoefficients) -> float:
    """Total fuel (L) as a left Riemann sum of the fuel rate over the trip."""
    P = instantaneous_power(traj.speeds[:-1], traj.accels[:-1], p)
    return float(np.sum(fuel_rate(P, c)) * traj.dt)


def alpha0_from_engine(e: EngineSpec) -> float:
    """Idle fuel rate (L/s) from idle mean pressure, speed and displacement."""
    return e.idle_mean_pressure * e.idle_speed * e.displacement / (
        IDLE_CONSTANT * e.heating_value * e.cylinders)


def summarize_cycle(speeds_ms, dt: float, p: VehicleParams, total_fuel: float) -> DriveCycleSummary:
    """Power aggregates of a speed cycle for use with :func:`calibrate_alphas`.

    Acceleration is the forward difference of the speed samples.
    """
    v = np.asarray(speeds_ms, dtype=float)
    acc = np.diff(v) / dt
    P = instantaneous_power(v[:-1], acc, p)
    P = P[P > 0]
    return DriveCycleSummary(total_fuel, (v.size - 1) * dt, float(P.sum() * dt), float((P * P).sum() * dt))


def calibrate_alphas(alpha0: float, city: DriveCycleSummary, highway: DriveCycleSummary,
                     alpha2_floor: float = 1e-6) -> FuelCoefficients:
    """Solve the city/highway fuel balance for alpha1 and alpha2.

    If the solution has alpha2 below ``alpha2_floor``, alpha2 is pinned at the
    floor and alpha1 re-solved from the city cycle alone.
    """
    A = np.array([[city.power_sum, city.power_sq_sum],
                  [highway.power_sum, highway.power_sq_sum]])
    rhs = np.array([city.total_fuel - city.duration * alpha0,
                    highway.total_fuel - highway.duration * alpha0])
    scale = np.abs(A).max(axis=0)
    if not np.all(scale > 0) or np.linalg.cond(A / scale) > 1e12:
        raise CalibrationError("singular calibration system (cycles are not independent)")
    alpha1, alpha2 = np.linalg.solve(A, rhs)
    if alpha2 < alpha2_floor:
        alpha2 = alpha2_floor
        alpha1 = (rhs[0] - city.power_sq_sum * alpha2) / city.power_sum
    if alpha1 < 0:
        raise CalibrationError(f"calibration gives negative alpha1 ({alpha1:.4g})")
    return FuelCoefficients(alpha0, float(alpha1), float(alpha2))
