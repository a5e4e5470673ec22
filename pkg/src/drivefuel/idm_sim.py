"""Intelligent Driver Model follower dynamics behind a recorded leader.

The follower starts from rest and is integrated with an explicit ballistic
update: ``v += a*dt`` and ``x += v*dt + a*dt**2/2``. If the speed update
would go negative the follower stops within the step, covering
``v**2 / (2|a|)``. Accelerations are floored at ``-2 * b_des``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .trace_io import SpeedTrace

HIGHWAY_V0 = 33.33
LOCAL_V0 = 17.88
HARD_BRAKE_FACTOR = 2.0
MIN_INIT_GAP = 10.0


class SimulationError(RuntimeError):
    """The follower closed the gap to zero (a collision)."""

    def __init__(self, step: int, gap: float) -> None:
        super().__init__(f"collision at step {step}: gap {gap:.4g} m")
        self.step = step
        self.gap = gap


@dataclass(frozen=True)
class DriverPreferences:
    """Driver behaviour vector (a, b, s0, T) of the IDM."""

    a_max: float
    b_des: float
    headway: float
    jam: float

    def __post_init__(self) -> None:
        for name in ("a_max", "b_des", "headway", "jam"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class IdmConstants:
    v0: float = HIGHWAY_V0
    delta: float = 4.0

    def __post_init__(self) -> None:
        if not self.v0 > 0:
            raise ValueError("v0 must be positive")


@dataclass(frozen=True)
class FollowerTrajectory:
    dt: float
    speeds: np.ndarray
    accels: np.ndarray
    gaps: np.ndarray
    positions: np.ndarray

    @property
    def duration(self) -> float:
        return (self.speeds.size - 1) * self.dt

    @property
    def distance(self) -> float:
        return float(self.positions[-1] - self.positions[0])

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_s", "v_mps", "a_mps2", "gap_m", "x_m"])
            for k in range(self.speeds.size):
                w.writerow([repr(k * self.dt)] + [repr(float(arr[k])) for arr in
                           (self.speeds, self.accels, self.gaps, self.positions)])


@njit(cache=True)
def _desired_gap(v, dv, a, b, T, s0):
    return s0 + T * v + v * dv / (2.0 * math.sqrt(a * b))


@njit(cache=True)
def _accel(v, dv, gap, a, b, T, s0, v0, delta):
    ratio = v / v0
    free = ratio ** delta if delta != 4.0 else (ratio * ratio) * (ratio * ratio)
    q = _desired_gap(v, dv, a, b, T, s0) / gap
    acc = a * (1.0 - free - q * q)
    floor = -HARD_BRAKE_FACTOR * b
    return acc if acc > floor else floor


@njit(cache=True)
def _simulate(vl, xl, dt, a, b, T, s0, v0, delta, init_gap, speeds, accels, gaps, pos):
    """Fill the output arrays; return -1 on success or the collision step."""
    n = vl.size
    v = 0.0
    x = xl[0] - init_gap
    for k in range(n):
        gap = xl[k] - x
        speeds[k] = v
        gaps[k] = gap
        pos[k] = x
        if gap <= 0.0:
            accels[k] = 0.0
            return k
        acc = _accel(v, v - vl[k], gap, a, b, T, s0, v0, delta)
        accels[k] = acc
        v_next = v + acc * dt
        if v_next < 0.0:
            x += v * v / (2.0 * -acc)
            v = 0.0
        else:
            x += v * dt + 0.5 * acc * dt * dt
            v = v_next
    return -1


def desired_gap(v: float, dv: float, prefs: DriverPreferences) -> float:
    """Desired minimum gap s*(v, dv); ``dv`` is own speed minus leader speed."""
    return float(_desired_gap(v, dv, prefs.a_max, prefs.b_des, prefs.headway, prefs.jam))


def idm_accel(v: float, dv: float, gap: float, prefs: DriverPreferences,
              consts: IdmConstants = IdmConstants()) -> float:
    if not gap > 0:
        raise ValueError(f"gap must be positive, got {gap}")
    return float(_accel(v, dv, gap, prefs.a_max, prefs.b_des, prefs.headway, prefs.jam,
                        consts.v0, consts.delta))


def default_init_gap(leader: SpeedTrace, prefs: DriverPreferences) -> float:
    return max(prefs.jam + prefs.headway * float(leader.speeds[0]), MIN_INIT_GAP)


def equilibrium_gap(v_leader: float, prefs: DriverPreferences, consts: IdmConstants) -> float:
    """Steady-state gap behind a leader at constant ``v_leader`` < v0."""
    s_star = prefs.jam + prefs.headway * v_leader
    return s_star / math.sqrt(1.0 - (v_leader / consts.v0) ** consts.delta)


def simulate_follower(
    leader: SpeedTrace,
    prefs: DriverPreferences,
    consts: IdmConstants = IdmConstants(),
    init_gap: float | None = None,
) -> FollowerTrajectory:
    """Integrate one IDM follower starting at rest behind ``leader``.

    Raises:
        SimulationError: if the gap ever reaches zero.
    """
    if init_gap is None:
        init_gap = default_init_gap(leader, prefs)
    if not init_gap > 0:
        raise ValueError("init_gap must be positive")
    vl = leader.speeds
    xl = leader.positions()
    n = vl.size
    speeds, accels, gaps, pos = (np.empty(n) for _ in range(4))
    hit = _simulate(vl, xl, leader.dt, prefs.a_max, prefs.b_des, prefs.headway, prefs.jam,
                    consts.v0, consts.delta, float(init_gap), speeds, accels, gaps, pos)
    if hit >= 0:
        raise SimulationError(int(hit), float(gaps[hit]))
    return FollowerTrajectory(leader.dt, speeds, accels, gaps, pos)
