"""Run configuration: one JSON document, every knob defaulted, validated before any work starts."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .mollifier import PRESETS

__all__ = ["ConfigError", "RunConfig", "load_config", "critical_exponent"]


class ConfigError(ValueError):
    pass


@dataclass
class PresetCfg:
    name: str = "thm12"
    p: float = 4.0
    q: float = 3.0
    lam: float = 0.5


@dataclass
class DomainCfg:
    kind: str = "interval"
    size: list = field(default_factory=lambda: ["pi"])


@dataclass
class BasisCfg:
    n: int = 24
    n_schedule: list = field(default_factory=list)  # smaller warm-start sizes; minimax runs on the first

    @property
    def stages(self) -> list:
        return sorted({int(v) for v in self.n_schedule} | {int(self.n)})


@dataclass
class GridCfg:
    per_mode_factor: int = 8


@dataclass
class MollifierCfg:
    m_schedule: list = field(default_factory=lambda: [16, 32, 64, 128])
    n_quad: int = 64
    ar_t_max: float = 50.0


@dataclass
class GeometryCfg:
    starts: int = 32
    seed: int = 0


@dataclass
class FlowCfg:
    rtol: float = 1e-8
    atol: float = 1e-10
    h_min: float = 1e-10
    ps_tol: float = 1e-6
    t_max: float = 400.0
    store_every: int = 1


@dataclass
class MinimaxCfg:
    samples: int = 64
    schedule_start: float = 0.1
    schedule_ratio: float = 1.3
    t_global: float = 6.0
    ps_tol: float = 1e-6
    newton_tol: float = 1e-10
    ascend_tol: float = 1e-8
    growth_switch: float = 1e2
    chart_growth: float = 1e3
    top: int = 3


@dataclass
class MorseCfg:
    zero_tol: float = 1e-8
    eps_slack: float = 1e-4


@dataclass
class ContinuationCfg:
    dedup_tol: float = 1e-4
    delta_tol: float = 1e-6


@dataclass
class OracleCfg:
    slope_range: list = field(default_factory=lambda: [-50.0, 50.0])
    scan: int = 2000
    points: int = 4001


@dataclass
class Thm45Cfg:
    a: list = field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0])
    l: list = field(default_factory=lambda: [1, 2])
    samples: int = 32
    remark_dims: list = field(default_factory=list)


@dataclass
class RunConfig:
    preset: PresetCfg = field(default_factory=PresetCfg)
    domain: DomainCfg = field(default_factory=DomainCfg)
    basis: BasisCfg = field(default_factory=BasisCfg)
    grid: GridCfg = field(default_factory=GridCfg)
    mollifier: MollifierCfg = field(default_factory=MollifierCfg)
    k_schedule: list = field(default_factory=lambda: [1, 2, 3, 4])
    geometry: GeometryCfg = field(default_factory=GeometryCfg)
    flow: FlowCfg = field(default_factory=FlowCfg)
    minimax: MinimaxCfg = field(default_factory=MinimaxCfg)
    morse: MorseCfg = field(default_factory=MorseCfg)
    continuation: ContinuationCfg = field(default_factory=ContinuationCfg)
    oracle: OracleCfg = field(default_factory=OracleCfg)
    thm45: Thm45Cfg = field(default_factory=Thm45Cfg)
    seed: int = 0
    output: str = "out"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = _build(cls, data, "")
        cfg.validate()
        return cfg

    def validate(self):
        if self.preset.name not in PRESETS:
            raise ConfigError(f"preset.name must be one of {sorted(PRESETS)}, got {self.preset.name!r}")
        if self.domain.kind not in ("interval", "rectangle"):
            raise ConfigError("domain.kind must be 'interval' or 'rectangle'")
        dim = 1 if self.domain.kind == "interval" else 2
        if self.preset.name == "thm12":
            p, q = self.preset.p, self.preset.q
            crit = critical_exponent(dim)
            if not (2.0 <= q < p < crit):
                raise ConfigError(
                    f"exponents must satisfy 2 <= q < p < 2* (2* = {crit:g} in dimension {dim}); "
                    f"got p={p:g}, q={q:g}")
        if any(int(n) != n or n < 2 for n in [self.basis.n, *self.basis.n_schedule]):
            raise ConfigError("basis sizes must be integers >= 2")
        if any(n > self.basis.n for n in self.basis.n_schedule):
            raise ConfigError("basis.n_schedule entries cannot exceed basis.n")
        ns = self.basis.stages
        ms = self.mollifier.m_schedule
        if not ms or any(int(m) != m or m < 1 for m in ms):
            raise ConfigError("mollifier.m_schedule must be a non-empty list of positive integers")
        ks = self.k_schedule
        if not ks or any(int(k) != k or k < 1 or k >= ns[0] for k in ks):
            raise ConfigError("k_schedule entries must be integers below the smallest basis size")
        if self.minimax.samples < 2 * max(ks) + 8:
            raise ConfigError(f"minimax.samples must be at least 2k+8 = {2 * max(ks) + 8}")
        for name in ("rtol", "atol", "h_min", "ps_tol", "t_max"):
            if not getattr(self.flow, name) > 0:
                raise ConfigError(f"flow.{name} must be positive")
        if self.minimax.schedule_ratio <= 1.0:
            raise ConfigError("minimax.schedule_ratio must exceed 1")
        if not 0 < self.morse.zero_tol < 1:
            raise ConfigError("morse.zero_tol must lie in (0, 1)")
        if self.grid.per_mode_factor < 2:
            raise ConfigError("grid.per_mode_factor must be >= 2")


def critical_exponent(dim: int) -> float:
    return math.inf if dim <= 2 else 2.0 * dim / (dim - 2.0)


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + u for u in unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else known[name].default
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, prefix + name + ".")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return RunConfig.from_dict(data)
