"""Monte Carlo campaigns: sample driver preferences, simulate the follower
behind a fixed leader, and record trip fuel.

Iteration ``j`` of a campaign draws from its own random stream seeded by
``(seed, j)``, so records do not depend on execution order and a campaign
can be split across workers without changing its output.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .idm_sim import DriverPreferences, IdmConstants, SimulationError, simulate_follower
from .trace_io import SpeedTrace, TripSummary, trip_stats
from .vehicle_energy import Vehicle, trip_fuel

log = logging.getLogger(__name__)

PARAMS = ("a", "b", "T", "s0")
PARAM_FIELDS = {"a": "a_max", "b": "b_des", "T": "headway", "s0": "jam"}
DATASET_HEADER = ["j", "a", "b", "T", "s0", "fuel_L", "dist_m", "time_s", "min_gap_m", "flag"]
FLAG_OK = "ok"
FLAG_COLLISION = "collision"


@dataclass(frozen=True)
class PreferenceRanges:
    """Per-parameter (min, max) bounds; defaults are the realistic driver ranges."""

    a: tuple[float, float] = (0.2, 2.0)
    b: tuple[float, float] = (1.0, 3.0)
    T: tuple[float, float] = (0.8, 2.0)
    s0: tuple[float, float] = (1.0, 3.0)

    def __post_init__(self) -> None:
        for name in PARAMS:
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"range for {name} must satisfy min < max, got {(lo, hi)}")

    def bounds(self, name: str) -> tuple[float, float]:
        return getattr(self, name)

    def midpoint(self, name: str) -> float:
        lo, hi = getattr(self, name)
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class SimulationRecord:
    j: int
    prefs: DriverPreferences
    trip_fuel: float
    trip_distance: float
    trip_time: float
    min_gap: float
    flag: str = FLAG_OK

    @property
    def ok(self) -> bool:
        return self.flag == FLAG_OK

    def param(self, name: str) -> float:
        return getattr(self.prefs, PARAM_FIELDS[name])


@dataclass
class CampaignDataset:
    records: list[SimulationRecord]
    leader_summary: TripSummary
    vehicle_id: str
    seed: int
    rejected: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def valid(self) -> list[SimulationRecord]:
        return [r for r in self.records if r.ok]

    @property
    def n_flagged(self) -> int:
        return sum(not r.ok for r in self.records)

    def column(self, name: str, valid_only: bool = True) -> np.ndarray:
        """Column by dataset-CSV name (``a``, ``b``, ``T``, ``s0``, ``fuel_L``, ...)."""
        recs = self.valid() if valid_only else self.records
        if name in PARAM_FIELDS:
            return np.array([r.param(name) for r in recs])
        attr = {"fuel_L": "trip_fuel", "dist_m": "trip_distance", "time_s": "trip_time",
                "min_gap_m": "min_gap", "j": "j"}[name]
        return np.array([getattr(r, attr) for r in recs])

    def features(self, names: Sequence[str]) -> np.ndarray:
        return np.column_stack([self.column(n) for n in names])


Sampler = Callable[[PreferenceRanges, np.random.Generator], DriverPreferences]


def iteration_rng(seed: int, j: int) -> np.random.Generator:
    return np.random.default_rng([seed, j])


def sample_uniform_prefs(ranges: PreferenceRanges, rng: np.random.Generator) -> DriverPreferences:
    a, b, T, s0 = (rng.uniform(*ranges.bounds(n)) for n in PARAMS)
    return DriverPreferences(a_max=a, b_des=b, headway=T, jam=s0)


def sample_normal_prefs(ranges: PreferenceRanges, rng: np.random.Generator,
                        rel_sd: float = 0.1) -> DriverPreferences:
    """Normal draws centred on each range midpoint with sd ``rel_sd * mean``;
    draws outside the range are rejected and redrawn."""
    vals = []
    for name in PARAMS:
        lo, hi = ranges.bounds(name)
        mu = ranges.midpoint(name)
        while True:
            x = rng.normal(mu, rel_sd * mu)
            if lo <= x <= hi:
                break
        vals.append(x)
    a, b, T, s0 = vals
    return DriverPreferences(a_max=a, b_des=b, headway=T, jam=s0)


SAMPLERS: dict[str, Sampler] = {"uniform": sample_uniform_prefs, "normal": sample_normal_prefs}


def simulate_record(j: int, prefs: DriverPreferences, leader: SpeedTrace, vehicle: Vehicle,
                    consts: IdmConstants) -> SimulationRecord:
    try:
        traj = simulate_follower(leader, prefs, consts)
    except SimulationError as exc:
        log.warning("iteration %d: %s", j, exc)
        return SimulationRecord(j, prefs, math.nan, math.nan, leader.duration, exc.gap, FLAG_COLLISION)
    fuel = trip_fuel(traj, vehicle.params, vehicle.fuel)
    return SimulationRecord(j, prefs, fuel, traj.distance, traj.duration, float(traj.gaps.min()))


def run_campaign(
    leader: SpeedTrace,
    vehicle: Vehicle,
    consts: IdmConstants,
    n: int = 1000,
    sampler: str = "uniform",
    seed: int = 0,
    ranges: PreferenceRanges = PreferenceRanges(),
    indices: Iterable[int] | None = None,
) -> CampaignDataset:
    """Run ``n`` follower simulations with sampled preferences.

    ``indices`` restricts the run to a subset of iteration numbers (in any
    order); records are always returned sorted by iteration number.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    draw = SAMPLERS[sampler]
    records = []
    for j in (range(n) if indices is None else indices):
        prefs = draw(ranges, iteration_rng(seed, j))
        records.append(simulate_record(j, prefs, leader, vehicle, consts))
    records.sort(key=lambda r: r.j)
    ds = CampaignDataset(records, trip_stats(leader), vehicle.name, seed,
                         meta={"sampler": sampler, "leader": leader.label})
    if ds.n_flagged:
        log.warning("%d of %d iterations flagged (collision)", ds.n_flagged, len(ds))
    return ds


def filter_by_trip(ds: CampaignDataset, dist_tol: float = 0.05, time_tol: float = 1e-6) -> CampaignDataset:
    """Keep records whose trip distance and time are within relative
    tolerances of the leader's. Flagged records are passed through untouched
    so they stay visible in reports."""
    for tol in (dist_tol, time_tol):
        if not 0 < tol <= 1:
            raise ValueError("tolerances must be in (0, 1]")
    ref_d = ds.leader_summary.distance
    ref_t = ds.leader_summary.duration
    kept, dropped = [], 0
    for r in ds.records:
        if r.ok:
            d_err = abs(r.trip_distance - ref_d) / ref_d if ref_d > 0 else 0.0
            t_err = abs(r.trip_time - ref_t) / ref_t
            if d_err > dist_tol or t_err > time_tol:
                dropped += 1
                continue
        kept.append(r)
    if dropped:
        log.info("trip filter removed %d records", dropped)
    if not any(r.ok for r in kept):
        log.warning("trip filter left no valid records")
    return CampaignDataset(kept, ds.leader_summary, ds.vehicle_id, ds.seed, ds.rejected + dropped, dict(ds.meta))


def write_dataset(ds: CampaignDataset, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_HEADER)
        for r in ds.records:
            p = r.prefs
            w.writerow([r.j] + [repr(float(x)) for x in (
                p.a_max, p.b_des, p.headway, p.jam, r.trip_fuel, r.trip_distance, r.trip_time, r.min_gap)]
                + [r.flag])


def read_dataset(path: str | Path, leader_summary: TripSummary | None = None,
                 vehicle_id: str = "", seed: int = 0) -> CampaignDataset:
    path = Path(path)
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(DATASET_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            prefs = DriverPreferences(float(row["a"]), float(row["b"]), float(row["T"]), float(row["s0"]))
            records.append(SimulationRecord(
                int(row["j"]), prefs, float(row["fuel_L"]), float(row["dist_m"]),
                float(row["time_s"]), float(row["min_gap_m"]), row["flag"]))
    if leader_summary is None:
        ok = [r for r in records if r.ok]
        # without the leader, use the campaign median trip as reference
        dist = float(np.median([r.trip_distance for r in ok])) if ok else 0.0
        time = records[0].trip_time if records else 0.0
        leader_summary = TripSummary(time, dist, dist / time if time else 0.0, 0)
    return CampaignDataset(records, leader_summary, vehicle_id, seed)
