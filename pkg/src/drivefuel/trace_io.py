"""Leader speed traces: CSV ingestion, resampling, summary statistics and
synthetic highway/local commute generators.

Traces are uniformly sampled speed profiles in m/s. The CSV layout is a
``t_s,v_mps`` header followed by one row per sample.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, filtfilt

DEFAULT_DT = 0.1
STOP_THRESHOLD = 0.5  # m/s, GPS noise floor


class TraceError(ValueError):
    """Raised for malformed trace files or invalid trace arguments."""


@dataclass(frozen=True)
class SpeedTrace:
    """Uniformly sampled leader speed profile.

    Attributes:
        dt: Sampling step (s).
        speeds: Speed samples (m/s).
        label: Free text tag such as ``"highway"`` or ``"local"``.
    """

    dt: float
    speeds: np.ndarray
    label: str = ""

    def __post_init__(self) -> None:
        speeds = np.asarray(self.speeds, dtype=float)
        if not self.dt > 0:
            raise TraceError(f"dt must be positive, got {self.dt}")
        if speeds.ndim != 1 or speeds.size < 2:
            raise TraceError("a trace needs at least 2 samples")
        if not np.all(np.isfinite(speeds)) or np.any(speeds < 0):
            raise TraceError("speeds must be finite and nonnegative")
        speeds.setflags(write=False)
        object.__setattr__(self, "speeds", speeds)
        object.__setattr__(self, "dt", float(self.dt))

    def __len__(self) -> int:
        return self.speeds.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.speeds.size) * self.dt

    @property
    def duration(self) -> float:
        return (self.speeds.size - 1) * self.dt

    def positions(self) -> np.ndarray:
        """Trapezoidal position of the vehicle along the trace, starting at 0."""
        x = np.zeros_like(self.speeds)
        x[1:] = np.cumsum(0.5 * (self.speeds[1:] + self.speeds[:-1]) * self.dt)
        return x


@dataclass(frozen=True)
class TripSummary:
    duration: float
    distance: float
    mean_speed: float
    stop_count: int


def _interp_uniform(t: np.ndarray, v: np.ndarray, dt: float) -> np.ndarray:
    n = int(np.floor((t[-1] - t[0]) / dt + 1e-9)) + 1
    grid = t[0] + np.arange(n) * dt
    return np.interp(grid, t, v)


def load_trace(path: str | Path, dt_hint: float = DEFAULT_DT, label: str = "") -> SpeedTrace:
    """Read a ``t_s,v_mps`` CSV and resample it onto a uniform ``dt_hint`` grid.

    Negative speeds are clamped to zero. Parse errors name the offending row
    (1-based, header is row 1).
    """
    if not dt_hint > 0:
        raise TraceError(f"dt_hint must be positive, got {dt_hint}")
    path = Path(path)
    times: list[float] = []
    speeds: list[float] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceError(f"{path}: empty file")
        header = [h.strip() for h in header]
        try:
            it, iv = header.index("t_s"), header.index("v_mps")
        except ValueError:
            raise TraceError(f"{path}: row 1: missing columns, expected t_s,v_mps") from None
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                t, v = float(row[it]), float(row[iv])
            except (IndexError, ValueError):
                raise TraceError(f"{path}: row {row_no}: cannot parse {row!r}") from None
            if times and t <= times[-1]:
                raise TraceError(f"{path}: row {row_no}: non-monotone time ({t} after {times[-1]})")
            times.append(t)
            speeds.append(v)
    if len(times) < 2:
        raise TraceError(f"{path}: need at least 2 data rows, found {len(times)}")
    v = _interp_uniform(np.array(times), np.array(speeds), dt_hint)
    return SpeedTrace(dt_hint, np.maximum(v, 0.0), label or path.stem)


def save_trace(trace: SpeedTrace, path: str | Path) -> None:
    """Write a trace as ``t_s,v_mps`` CSV with round-trip float precision."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "v_mps"])
        for t, v in zip(trace.times, trace.speeds):
            w.writerow([repr(float(t)), repr(float(v))])


def resample(trace: SpeedTrace, dt: float) -> SpeedTrace:
    """Linearly interpolate ``trace`` onto a new uniform grid of step ``dt``."""
    if not dt > 0:
        raise TraceError(f"dt must be positive, got {dt}")
    if dt == trace.dt:
        return SpeedTrace(trace.dt, trace.speeds.copy(), trace.label)
    v = _interp_uniform(trace.times, trace.speeds, dt)
    return SpeedTrace(dt, v, trace.label)


def trip_stats(trace: SpeedTrace) -> TripSummary:
    v = trace.speeds
    distance = float(np.sum(0.5 * (v[1:] + v[:-1])) * trace.dt)
    stopped = v < STOP_THRESHOLD
    # count rising edges of the "stopped" indicator
    stop_count = int(stopped[0]) + int(np.count_nonzero(stopped[1:] & ~stopped[:-1]))
    duration = trace.duration
    return TripSummary(duration, distance, distance / duration, stop_count)


def _smooth_noise(rng: np.random.Generator, n: int, dt: float, cutoff_hz: float) -> np.ndarray:
    """Zero-phase low-pass filtered white noise scaled to max |x| = 1."""
    noise = rng.standard_normal(n)
    wn = min(cutoff_hz * 2.0 * dt, 0.99)
    b, a = butter(2, wn)
    x = filtfilt(b, a, noise, padlen=min(3 * max(len(a), len(b)), n - 1))
    x -= x.mean()
    peak = np.max(np.abs(x))
    return x / peak if peak > 0 else x


def gen_highway(
    duration: float,
    dt: float = DEFAULT_DT,
    cruise: float = 29.0,
    seed: int = 0,
    ramp_accel: float = 1.5,
    fluctuation: float = 0.1,
) -> SpeedTrace:
    """Synthetic highway commute: a ramp from rest, then cruising with smooth
    speed fluctuations bounded by ``fluctuation * cruise``.

    The fluctuation is low-pass filtered noise (cutoff 0.02 Hz), so the
    speed wanders over tens of seconds rather than jittering.
    """
    if not (duration > 0 and dt > 0 and cruise > 0):
        raise TraceError("duration, dt and cruise must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration / dt)) + 1
    t = np.arange(n) * dt
    wobble = _smooth_noise(rng, n, dt, cutoff_hz=0.02)
    ramp_time = cruise / ramp_accel
    base = np.minimum(t * ramp_accel, cruise)
    # fade the fluctuation in after the ramp so the start is a clean launch
    fade = np.clip((t - ramp_time) / ramp_time, 0.0, 1.0)
    v = base * (1.0 + fluctuation * wobble * fade)
    return SpeedTrace(dt, np.maximum(v, 0.0), "highway")


def gen_local(
    duration: float,
    dt: float = DEFAULT_DT,
    top_speed: float = 15.0,
    stops: int = 24,
    seed: int = 0,
    accel_range: tuple[float, float] = (1.5, 2.5),
    decel_range: tuple[float, float] = (1.0, 2.0),
) -> SpeedTrace:
    """Synthetic local commute of stop-and-go cycles.

    The trace starts at rest and is cut into ``stops`` segments. Each segment
    dwells at zero, accelerates to a cruise speed in [0.6, 1.0] of
    ``top_speed``, cruises, and (except for the last) brakes back to rest.
    The last segment keeps cruising to the end of the recording, so
    :func:`trip_stats` reports exactly ``stops`` stop events.

    Launch and braking rates are drawn per segment from ``accel_range`` and
    ``decel_range`` (m/s^2). Brisk launches separate drivers by how hard
    they accelerate, which is what makes the local scenario informative.
    """
    if stops < 1:
        raise TraceError("stops must be >= 1")
    if not (duration > 0 and dt > 0 and top_speed > 0):
        raise TraceError("duration, dt and top_speed must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration / dt)) + 1
    t = np.arange(n) * dt
    weights = rng.uniform(0.7, 1.3, stops)
    bounds = np.concatenate([[0.0], np.cumsum(weights) / weights.sum() * t[-1]])
    v = np.zeros(n)
    for k in range(stops):
        t0, t1 = bounds[k], bounds[k + 1]
        seg = t1 - t0
        last = k == stops - 1
        dwell = min(rng.uniform(5.0, 20.0), 0.25 * seg)
        acc = rng.uniform(*accel_range)
        dec = 0.0 if last else rng.uniform(*decel_range)
        vc = top_speed * rng.uniform(0.6, 1.0)
        drive = seg - dwell - (0.0 if last else 1.0)  # keep >= 1 s at rest before the next dwell edge
        # shrink the cruise speed if the segment is too short to reach it
        reach = vc / acc + (vc / dec if dec else 0.0)
        if reach > drive:
            vc *= drive / reach
        tau = t[(t >= t0) & (t <= t1)] - t0 - dwell
        up = np.clip(tau * acc, 0.0, vc)
        if last:
            prof = up
        else:
            brake_start = drive - vc / dec
            down = np.clip(vc - (tau - brake_start) * dec, 0.0, vc)
            prof = np.minimum(up, down)
        v[(t >= t0) & (t <= t1)] = np.where(tau > 0, prof, 0.0)
    return SpeedTrace(dt, np.clip(v, 0.0, top_speed), "local")
