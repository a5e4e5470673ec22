"""Pipeline configuration: INI files with one section per pipeline stage.

A config names the leader scenario, the vehicle, IDM constants, campaign
sizes and analysis settings. Shipped configs live in ``drivefuel/configs``
and can be referenced by bare name (``highway_car``) instead of a path.

All randomness derives from ``campaign.seed``; stage seeds come from
:func:`derive_seed`. The scenario has its own ``seed`` because the leader
trace is input data, not part of the Monte Carlo draw.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .idm_sim import IdmConstants
from .mc_engine import SAMPLERS, PreferenceRanges
from .trace_io import SpeedTrace, gen_highway, gen_local, load_trace
from .vehicle_energy import Vehicle, get_vehicle, load_vehicle

SHIPPED = ("highway_car", "highway_truck", "local_car", "local_truck")
SCENARIO_KINDS = ("highway", "local", "file")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (a usage error for the CLI)."""


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "highway"
    duration: float = 600.0
    dt: float = 0.1
    seed: int = 1
    cruise: float = 29.0
    top_speed: float = 15.6
    stops: int = 24
    accel_min: float = 1.5
    accel_max: float = 2.5
    decel_min: float = 1.0
    decel_max: float = 2.0
    path: str = ""


@dataclass(frozen=True)
class VehicleConfig:
    name: str = "passenger_car"
    path: str = ""


@dataclass(frozen=True)
class IdmConfig:
    v0: float = 33.33
    delta: float = 4.0


@dataclass(frozen=True)
class CampaignConfig:
    n: int = 1000
    seed: int = 2024
    sampler: str = "uniform"
    test_n: int = 0  # 0 means same as n
    test_sampler: str = "normal"
    rel_sd: float = 0.1
    filter: bool = True
    dist_tol: float = 0.05
    time_tol: float = 1e-6


@dataclass(frozen=True)
class RangesConfig:
    a_min: float = 0.2
    a_max: float = 2.0
    b_min: float = 1.0
    b_max: float = 3.0
    T_min: float = 0.8
    T_max: float = 2.0
    s0_min: float = 1.0
    s0_max: float = 3.0


@dataclass(frozen=True)
class AnalysisConfig:
    permutations: int = 299
    bins: int = 20
    spread_bins: int = 10
    folds: int = 5
    stride: int = 50
    threshold: float = 0.05
    restarts: int = 8


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs/out"
    plots: bool = True
    sample_drivers: int = 3


@dataclass(frozen=True)
class PipelineConfig:
    name: str = "custom"
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    vehicle: VehicleConfig = field(default_factory=VehicleConfig)
    idm: IdmConfig = field(default_factory=IdmConfig)
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    ranges: RangesConfig = field(default_factory=RangesConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self) -> None:
        validate(self)

    @property
    def seed(self) -> int:
        return self.campaign.seed

    @property
    def test_n(self) -> int:
        return self.campaign.test_n or self.campaign.n

    def idm_constants(self) -> IdmConstants:
        return IdmConstants(v0=self.idm.v0, delta=self.idm.delta)

    def preference_ranges(self) -> PreferenceRanges:
        r = self.ranges
        return PreferenceRanges((r.a_min, r.a_max), (r.b_min, r.b_max),
                                (r.T_min, r.T_max), (r.s0_min, r.s0_max))

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def vehicle_spec(self) -> Vehicle:
        if self.vehicle.path:
            return load_vehicle(self.resolve(self.vehicle.path))
        try:
            return get_vehicle(self.vehicle.name)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None

    def leader(self) -> SpeedTrace:
        s = self.scenario
        if s.kind == "highway":
            return gen_highway(s.duration, s.dt, s.cruise, s.seed)
        if s.kind == "local":
            return gen_local(s.duration, s.dt, s.top_speed, s.stops, s.seed,
                             (s.accel_min, s.accel_max), (s.decel_min, s.decel_max))
        return load_trace(self.resolve(s.path), s.dt, label="file")

    @property
    def traffic(self) -> str:
        return self.scenario.kind

    def to_ini(self, with_dir: bool = False) -> str:
        """Canonical INI text of this config (stable key order, repr floats).

        The output directory is left out unless ``with_dir`` is set, so a
        snapshot does not depend on where the run was written.
        """
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["pipeline"] = {"name": self.name}
        for sec in _SECTIONS:
            items = asdict(getattr(self, sec))
            if sec == "output" and not with_dir:
                items.pop("dir")
            cp[sec] = {k: _fmt(v) for k, v in items.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def sha256(self) -> str:
        return hashlib.sha256(self.to_ini().encode("utf-8")).hexdigest()


_SECTIONS = ("scenario", "vehicle", "idm", "campaign", "ranges", "analysis", "output")
_SECTION_TYPES = {
    "scenario": ScenarioConfig, "vehicle": VehicleConfig, "idm": IdmConfig,
    "campaign": CampaignConfig, "ranges": RangesConfig, "analysis": AnalysisConfig,
    "output": OutputConfig,
}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(section: str, key: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "yes", "true", "on"):
                return True
            if low in ("0", "no", "false", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {kind.__name__}") from None


def validate(cfg: PipelineConfig) -> None:
    s, c, a = cfg.scenario, cfg.campaign, cfg.analysis
    if s.kind not in SCENARIO_KINDS:
        raise ConfigError(f"[scenario] kind must be one of {', '.join(SCENARIO_KINDS)}, got {s.kind!r}")
    if s.kind == "file" and not s.path:
        raise ConfigError("[scenario] kind = file needs a path")
    if not (s.duration > 0 and s.dt > 0):
        raise ConfigError("[scenario] duration and dt must be positive")
    if c.n < 1 or c.test_n < 0:
        raise ConfigError("[campaign] n must be >= 1")
    for key in ("sampler", "test_sampler"):
        if getattr(c, key) not in SAMPLERS:
            raise ConfigError(f"[campaign] {key} must be one of {', '.join(SAMPLERS)}")
    for key in ("dist_tol", "time_tol"):
        if not 0 < getattr(c, key) <= 1:
            raise ConfigError(f"[campaign] {key} must be in (0, 1]")
    if a.permutations < 100:
        raise ConfigError("[analysis] permutations must be >= 100")
    if a.folds < 2 or a.bins < 2 or a.spread_bins < 2 or a.stride < 1 or a.restarts < 1:
        raise ConfigError("[analysis] folds, bins and spread_bins must be >= 2; stride and restarts >= 1")
    if not cfg.idm.v0 > 0:
        raise ConfigError("[idm] v0 must be positive")
    try:
        cfg.preference_ranges()
    except ValueError as exc:
        raise ConfigError(f"[ranges] {exc}") from None


def parse_config(text: str, base_dir: str | Path = ".", name: str = "custom") -> PipelineConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = set(cp.sections()) - set(_SECTIONS) - {"pipeline"}
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    kwargs = {}
    for sec in _SECTIONS:
        if not cp.has_section(sec):
            continue
        typ = _SECTION_TYPES[sec]
        types = {f.name: type(f.default) for f in fields(typ)}
        items = dict(cp.items(sec))
        bad = set(items) - set(types)
        if bad:
            raise ConfigError(f"[{sec}] unknown keys: {', '.join(sorted(bad))}")
        kwargs[sec] = typ(**{k: _coerce(sec, k, v, types[k]) for k, v in items.items()})
    if cp.has_option("pipeline", "name"):
        name = cp.get("pipeline", "name")
    cfg = PipelineConfig(name=name, base_dir=str(base_dir), **kwargs)
    check_files(cfg)
    return cfg


def check_files(cfg: PipelineConfig) -> None:
    for label, p in (("scenario path", cfg.scenario.path if cfg.scenario.kind == "file" else ""),
                     ("vehicle path", cfg.vehicle.path)):
        if p and not cfg.resolve(p).is_file():
            raise ConfigError(f"{label} not found: {cfg.resolve(p)}")


def shipped_config_text(name: str) -> str:
    if name not in SHIPPED:
        raise ConfigError(f"no shipped config {name!r}; available: {', '.join(SHIPPED)}")
    return resources.files("drivefuel").joinpath("configs").joinpath(f"{name}.ini").read_text(encoding="utf-8")


def load_config(ref: str | Path) -> PipelineConfig:
    """Load a config from a file path or the name of a shipped config."""
    p = Path(ref)
    if p.is_file():
        return parse_config(p.read_text(encoding="utf-8"), p.parent, p.stem)
    if str(ref) in SHIPPED:
        return parse_config(shipped_config_text(str(ref)), ".", str(ref))
    raise ConfigError(f"config not found: {ref}")


def with_overrides(cfg: PipelineConfig, seed: int | None = None, n: int | None = None,
                   vehicle: str | None = None, out: str | None = None) -> PipelineConfig:
    """Apply command-line overrides. ``n`` also resizes an unset test campaign."""
    camp = cfg.campaign
    if seed is not None:
        camp = replace(camp, seed=seed)
    if n is not None:
        camp = replace(camp, n=n)
    veh = cfg.vehicle if vehicle is None else VehicleConfig(name=vehicle)
    output = cfg.output if out is None else replace(cfg.output, dir=out)
    new = replace(cfg, campaign=camp, vehicle=veh, output=output)
    if vehicle is not None:
        new.vehicle_spec()  # fail early on an unknown name
    return new


def derive_seed(seed: int, stage: str) -> int:
    """Deterministic per-stage seed from the master seed and a stage tag."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(stage.encode("ascii"))])
    return int(ss.generate_state(1)[0])
