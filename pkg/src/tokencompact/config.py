"""Pipeline configuration: nested dataclasses loaded from YAML or JSON."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ConfigError
from .hte import QWEN3_06B_LIKE, HteConfig, LlmShape
from .mke import MkeConfig
from .sip import SipConfig

OUTPUT_ENV = "TOKENCOMPACT_OUTPUT_DIR"
REPORT_FORMATS = ("json", "csv", "svg")
FLOPS_SHAPES = {"qwen3-0.6b-like": QWEN3_06B_LIKE}


@dataclass(frozen=True)
class FeatureSource:
    kind: str = "synthetic"  # synthetic | files
    rho: float = 0.7
    dim: int = 32
    main_path: str | None = None
    extra_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "files"):
            raise ConfigError(f"unknown feature source {self.kind!r}")
        if self.kind == "files" and not (self.main_path and self.extra_path):
            raise ConfigError("file feature source needs main_path and extra_path")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if self.dim < 1:
            raise ConfigError("feature dim must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    grid: tuple = (24, 24)
    text_len: int = 100
    features: FeatureSource = field(default_factory=FeatureSource)
    mke: MkeConfig = field(default_factory=MkeConfig)
    hte: HteConfig = field(default_factory=HteConfig)
    sip: SipConfig = field(default_factory=SipConfig)
    llm: LlmShape = field(default_factory=LlmShape)
    flops_shape: str = "qwen3-0.6b-like"
    coding_eps: float = 0.5
    output_dir: str = "out"
    formats: tuple = REPORT_FORMATS

    def __post_init__(self):
        if len(self.grid) != 2 or min(self.grid) < 1:
            raise ConfigError(f"grid must be two positive integers, got {self.grid!r}")
        if not self.mke.bypass and (self.grid[0] % self.mke.r or self.grid[1] % self.mke.r):
            raise ConfigError(f"grid {self.grid} not divisible by r={self.mke.r}")
        if self.text_len < 0:
            raise ConfigError("text_len must be >= 0")
        if self.flops_shape not in FLOPS_SHAPES:
            raise ConfigError(f"unknown flops_shape {self.flops_shape!r}; known: {sorted(FLOPS_SHAPES)}")
        if self.coding_eps <= 0:
            raise ConfigError("coding_eps must be > 0")
        bad = set(self.formats) - set(REPORT_FORMATS)
        if bad:
            raise ConfigError(f"unknown report formats {sorted(bad)}")
        if self.llm.hidden_dim % 4:
            raise ConfigError("llm.hidden_dim must be divisible by 4 (2-D RoPE init)")

    @property
    def n_base_tokens(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def reference_shape(self) -> LlmShape:
        return FLOPS_SHAPES[self.flops_shape]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        d["formats"] = list(self.formats)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        nested = {"features": FeatureSource, "mke": MkeConfig, "hte": HteConfig, "sip": SipConfig, "llm": LlmShape}
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            if key in nested:
                kwargs[key] = _build(nested[key], value, key)
            elif key in ("grid", "formats"):
                kwargs[key] = tuple(value)
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def with_value(self, axis: str, value) -> "PipelineConfig":
        """Copy with one sweep axis set."""
        if axis == "drop_rate":
            return replace(self, hte=replace(self.hte, drop_rate=float(value)))
        if axis == "k_self":
            return replace(self, mke=replace(self.mke, k_self=float(value)))
        if axis == "k_cross":
            return replace(self, mke=replace(self.mke, k_cross=float(value)))
        if axis == "omega":
            return replace(self, sip=replace(self.sip, omega=float(value)))
        if axis == "k_self:k_cross":
            ks, kc = value
            return replace(self, mke=replace(self.mke, k_self=float(ks), k_cross=float(kc)))
        raise ConfigError(f"unknown sweep axis {axis!r}")


def _build(cls, value, name):
    if value is None:
        return cls()
    if not isinstance(value, dict):
        raise ConfigError(f"{name} must be a mapping")
    allowed = {f.name for f in fields(cls)}
    unknown = set(value) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    try:
        return cls(**value)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    cfg = PipelineConfig.from_dict(data or {})
    base = path.parent
    src = cfg.features
    if src.kind == "files":
        # relative feature paths resolve against the config file
        src = replace(
            src,
            main_path=str((base / src.main_path).resolve()),
            extra_path=str((base / src.extra_path).resolve()),
        )
        cfg = replace(cfg, features=src)
    return cfg


def resolve_output_dir(cfg: PipelineConfig, override: str | None = None) -> Path:
    if override:
        return Path(override)
    env = os.environ.get(OUTPUT_ENV)
    return Path(env) if env else Path(cfg.output_dir)


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
