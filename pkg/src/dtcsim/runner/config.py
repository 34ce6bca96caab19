"""Scenario configuration: JSON document -> validated, defaulted dataclasses."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from ..exceptions import ConfigError

__all__ = [
    "CSI_MODES",
    "SCHEDULERS",
    "TrafficConfig",
    "SchedulerConfig",
    "PredictorConfig",
    "ScenarioConfig",
    "load_config",
    "config_from_dict",
    "default_config_path",
    "parse_ratio",
]

CSI_MODES = ("ideal", "dtc", "partial", "partial+dtc")
SCHEDULERS = ("game", "pf")


def parse_ratio(value):
    try:
        r = Fraction(value).limit_denominator(10_000) if not isinstance(value, str) else Fraction(value)
    except (ValueError, ZeroDivisionError, TypeError) as exc:
        raise ConfigError(f"bad pilot ratio {value!r}") from exc
    if not 0 < r <= 1:
        raise ConfigError(f"pilot ratio must lie in (0, 1], got {value!r}")
    return r


@dataclass(frozen=True)
class TrafficConfig:
    """Users ``0 .. n_control-1`` carry deadline-bound control tasks, the rest best effort.

    Arrival rates are tasks per second.
    """

    n_control: int = 10
    control_rate_per_s: float = 1.0
    best_effort_rate_per_s: float = 500.0
    task_bits: int = 20_000
    control_deadline_ms: float = 5.0
    best_effort_deadline_ms: float = 1000.0


@dataclass(frozen=True)
class SchedulerConfig:
    kind: str = "game"
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.2
    p_psd_dbm_hz: float = -40.0
    rb_max: int | None = None
    bcd_max_iter: int = 10
    bcd_tol: float = 1e-6
    pf_horizon: float = 100.0
    noise_figure_db: float = 7.0


@dataclass(frozen=True)
class PredictorConfig:
    window: int = 32
    stride: int = 8
    pl_epochs: int = 150
    pl_learning_rate: float = 0.05
    holdout_row: int = 10
    recon_epochs: int = 20
    recon_learning_rate: float = 0.1
    recon_samples: int = 1200
    recon_hidden: int = 16
    training_seed: int = 0


@dataclass(frozen=True)
class ScenarioConfig:
    scene: str | None = None
    carrier_frequency_hz: float = 6.025e9
    bandwidth_hz: float = 10e6
    subcarrier_spacing_hz: float = 15e3
    n_symbols: int = 12
    n_bs: int | None = 4
    n_antennas: int | None = 4
    n_users: int = 20
    grid_n_x: int | None = 100
    grid_n_y: int | None = 20
    max_reflection_order: int = 2
    max_diffraction_order: int = 1
    n_paths: int = 10
    ellipsoid_factor: float = 1.5
    slot_ms: float = 10.0
    slots_per_cell: int = 10
    csi_mode: str = "partial+dtc"
    pilot_ratio: str = "1/10"
    compare_pilot_ratios: tuple = ("1/10", "1/20")
    pilot_snr_db: float = 20.0
    rician_k: float = 10.0
    seeds: tuple = tuple(range(10))
    horizon: int = 1000
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)

    @property
    def n_subcarriers(self):
        return int(math.floor(self.bandwidth_hz / self.subcarrier_spacing_hz + 1e-9))

    @property
    def slot_s(self):
        return self.slot_ms / 1000.0

    @property
    def ratio(self):
        return parse_ratio(self.pilot_ratio)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["compare_pilot_ratios"] = list(self.compare_pilot_ratios)
        d["seeds"] = list(self.seeds)
        return d

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes):
        cfg = dataclasses.replace(self, **changes)
        _validate(cfg)
        return cfg


_SECTIONS = {"traffic": TrafficConfig, "scheduler": SchedulerConfig, "predictor": PredictorConfig}


def _build(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for k, v in doc.items():
        if k in _SECTIONS and cls is ScenarioConfig:
            v = _build(_SECTIONS[k], v, f"{where}.{k}")
        elif k in ("seeds", "compare_pilot_ratios"):
            if not isinstance(v, list):
                raise ConfigError(f"{where}.{k}: expected a list")
            v = tuple(v)
        kwargs[k] = v
    return cls(**kwargs)


def _positive(name, value, strict=True, integer=False):
    ok_type = isinstance(value, int) and not isinstance(value, bool) if integer else (
        isinstance(value, (int, float)) and not isinstance(value, bool))
    if not ok_type or not math.isfinite(value) or (value <= 0 if strict else value < 0):
        kind = "integer" if integer else "number"
        rel = "> 0" if strict else ">= 0"
        raise ConfigError(f"{name} must be a {kind} {rel}, got {value!r}")


def _validate(cfg):
    for name in ("carrier_frequency_hz", "bandwidth_hz", "subcarrier_spacing_hz", "slot_ms", "ellipsoid_factor"):
        _positive(name, getattr(cfg, name))
    for name in ("n_symbols", "n_users", "n_paths", "slots_per_cell"):
        _positive(name, getattr(cfg, name), integer=True)
    for name in ("max_reflection_order", "max_diffraction_order", "horizon"):
        _positive(name, getattr(cfg, name), strict=False, integer=True)
    for name in ("n_bs", "n_antennas", "grid_n_x", "grid_n_y"):
        if getattr(cfg, name) is not None:
            _positive(name, getattr(cfg, name), integer=True)
    if cfg.ellipsoid_factor < 1:
        raise ConfigError("ellipsoid_factor must be >= 1")
    if cfg.n_subcarriers < 12:
        raise ConfigError("bandwidth must hold at least one 12-subcarrier resource block")
    if cfg.csi_mode not in CSI_MODES:
        raise ConfigError(f"csi_mode must be one of {CSI_MODES}, got {cfg.csi_mode!r}")
    parse_ratio(cfg.pilot_ratio)
    for r in cfg.compare_pilot_ratios:
        parse_ratio(r)
    _positive("rician_k", cfg.rician_k, strict=False)
    if not isinstance(cfg.pilot_snr_db, (int, float)) or not math.isfinite(cfg.pilot_snr_db):
        raise ConfigError("pilot_snr_db must be finite")
    if not cfg.seeds or not all(isinstance(s, int) and s >= 0 for s in cfg.seeds):
        raise ConfigError("seeds must be a non-empty list of non-negative integers")

    t = cfg.traffic
    _positive("traffic.n_control", t.n_control, strict=False, integer=True)
    if t.n_control > cfg.n_users:
        raise ConfigError("traffic.n_control exceeds n_users")
    _positive("traffic.control_rate_per_s", t.control_rate_per_s, strict=False)
    _positive("traffic.best_effort_rate_per_s", t.best_effort_rate_per_s, strict=False)
    _positive("traffic.task_bits", t.task_bits, integer=True)
    _positive("traffic.control_deadline_ms", t.control_deadline_ms)
    _positive("traffic.best_effort_deadline_ms", t.best_effort_deadline_ms)

    s = cfg.scheduler
    if s.kind not in SCHEDULERS:
        raise ConfigError(f"scheduler.kind must be one of {SCHEDULERS}, got {s.kind!r}")
    for name in ("alpha", "beta", "gamma"):
        _positive(f"scheduler.{name}", getattr(s, name), strict=False)
    if not (s.alpha or s.beta or s.gamma):
        raise ConfigError("scheduler weights must not all be zero")
    if not isinstance(s.p_psd_dbm_hz, (int, float)) or not math.isfinite(s.p_psd_dbm_hz):
        raise ConfigError("scheduler.p_psd_dbm_hz must be finite")
    if s.rb_max is not None:
        _positive("scheduler.rb_max", s.rb_max, integer=True)
    _positive("scheduler.bcd_max_iter", s.bcd_max_iter, integer=True)
    _positive("scheduler.bcd_tol", s.bcd_tol, strict=False)
    _positive("scheduler.pf_horizon", s.pf_horizon)
    if s.pf_horizon < 1:
        raise ConfigError("scheduler.pf_horizon must be >= 1")

    p = cfg.predictor
    for name in ("window", "stride", "recon_samples", "recon_hidden"):
        _positive(f"predictor.{name}", getattr(p, name), integer=True)
    for name in ("pl_epochs", "recon_epochs", "holdout_row", "training_seed"):
        _positive(f"predictor.{name}", getattr(p, name), strict=False, integer=True)
    _positive("predictor.pl_learning_rate", p.pl_learning_rate)
    _positive("predictor.recon_learning_rate", p.recon_learning_rate)


def config_from_dict(doc, where="config"):
    cfg = _build(ScenarioConfig, doc, where)
    _validate(cfg)
    return cfg


def default_config_path():
    return Path(__file__).resolve().parent.parent / "data" / "default_scenario.json"


def load_config(path=None):
    """Load and validate a scenario file (the shipped default when ``path`` is None)."""
    path = default_config_path() if path is None else Path(path)
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if isinstance(doc, dict) and isinstance(doc.get("scene"), str) and not Path(doc["scene"]).is_absolute():
        doc["scene"] = str((Path(path).parent / doc["scene"]).resolve())
    return config_from_dict(doc, where=str(path))
