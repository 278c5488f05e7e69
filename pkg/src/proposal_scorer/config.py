"""Simulation and scoring configuration, loadable from TOML or JSON."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

CONFIG_ENV = "PROPOSAL_SCORER_CONFIG"

_MODE_DEFAULTS = {
    "navsim": {"sim_hz": 10.0, "horizon": 4.0},
    "bench2drive": {"sim_hz": 2.0, "horizon": 3.0},
}


@dataclass(frozen=True)
class ComfortThresholds:
    lat_acc: float = 4.89
    lon_acc: float = 2.40
    lon_dec: float = 4.05
    abs_jerk: float = 8.37
    lon_jerk: float = 4.13
    yaw_rate: float = 0.95
    yaw_acc: float = 1.93

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"comfort threshold {f.name} must be positive")


@dataclass(frozen=True)
class SimConfig:
    """Rollout and metric parameters.

    ``sim_hz`` and ``horizon`` default per mode (navsim 10 Hz / 4 s,
    bench2drive 2 Hz / 3 s) when left as None.
    """

    mode: str = "navsim"
    sim_hz: Optional[float] = None
    horizon: Optional[float] = None
    q_lat: tuple = ((1.0, 0.0), (0.0, 10.0))
    r_lat: float = 1.0
    k_speed: float = 2.0
    k_station: float = 1.0
    lqr_min_speed: float = 1.0
    steering_limit: float = 0.83
    accel_max: float = 2.40
    decel_max: float = 4.05
    allow_reverse: bool = False
    stationary_speed: float = 0.05
    ttc_bound: float = 1.0
    ttc_step: float = 0.1
    comfort: ComfortThresholds = field(default_factory=ComfortThresholds)

    def __post_init__(self):
        if self.mode not in _MODE_DEFAULTS:
            raise ValueError(f"unknown mode {self.mode!r}")
        for key, value in _MODE_DEFAULTS[self.mode].items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, value)
        q = tuple(tuple(float(v) for v in row) for row in self.q_lat)
        object.__setattr__(self, "q_lat", q)
        if not (self.sim_hz > 0 and self.horizon > 0):
            raise ValueError("sim_hz and horizon must be positive")
        if not self.r_lat > 0:
            raise ValueError("r_lat must be positive")
        a, b, c, d = q[0][0], q[0][1], q[1][0], q[1][1]
        if b != c or a < 0 or d < 0 or a * d - b * c < 0:
            raise ValueError("q_lat must be symmetric positive semidefinite")
        if isinstance(self.comfort, dict):
            object.__setattr__(self, "comfort", ComfortThresholds(**self.comfort))

    @property
    def dt(self) -> float:
        return 1.0 / self.sim_hz

    @property
    def n_ticks(self) -> int:
        return int(round(self.horizon * self.sim_hz))


def config_from_dict(data: dict, mode: Optional[str] = None) -> SimConfig:
    known = {f.name for f in fields(SimConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config key(s): {sorted(unknown)}")
    data = dict(data)
    if mode is not None:
        data["mode"] = mode
    if "comfort" in data:
        data["comfort"] = ComfortThresholds(**data["comfort"])
    return SimConfig(**data)


def load_config(path=None, mode: Optional[str] = None) -> SimConfig:
    """Load a config file (``.toml`` or ``.json``); falls back to $PROPOSAL_SCORER_CONFIG."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is None:
        return SimConfig(mode=mode or "navsim")
    p = Path(path)
    raw = p.read_bytes()
    if p.suffix.lower() == ".toml":
        data = tomllib.loads(raw.decode("utf-8"))
    else:
        data = json.loads(raw)
    return config_from_dict(data, mode=mode)


def with_mode(cfg: SimConfig, mode: str) -> SimConfig:
    """Same config with another mode; per-mode rate/horizon reset to defaults."""
    if cfg.mode == mode:
        return cfg
    return replace(cfg, mode=mode, sim_hz=None, horizon=None)
