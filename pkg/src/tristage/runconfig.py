"""Run configuration for the command-line tools.

File form is flat ``key = value`` text, one field per line; ``#`` starts a
comment. Lists are comma separated, booleans are ``true``/``false`` and an
empty value means "not set". ``RunConfig.save`` always writes resolved values
so that loading the file back gives an identical run.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import get_type_hints

from .config import ABLATIONS, ConfigError, ModelConfig, profile

# learning rates used when none is given: the full profile follows the
# published recipe, the tiny profile trains from scratch and needs more.
DEFAULT_LR = {"full": 2e-5, "tiny": 1e-3}


@dataclass
class RunConfig:
    profile: str = "tiny"
    # model overrides; 0 / empty means "use the profile value"
    input_size: int = 0
    crop_size: int = 0
    expansion_ratio: float = 0.0
    ablation: str = ""
    # optimisation
    lr: float = 0.0
    lr_power: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 8
    epochs: int = 120
    max_steps: int = 0
    seed: int = 0
    augment: bool = True
    workers: int = 0
    # data
    train_roots: list = field(default_factory=list)
    test_roots: list = field(default_factory=list)
    synthetic_count: int = 0
    synthetic_seed: int = 0
    synthetic_similarity: float = 0.5
    synthetic_fg_min: float = 0.04
    synthetic_fg_max: float = 0.25
    # weights and outputs
    pretrained: str = ""
    shared_leaf_init: bool = True
    output_dir: str = "runs/default"
    checkpoint_every: int = 0
    log_every: int = 1

    def resolve(self) -> "RunConfig":
        """Fill every 'use the default' field with its concrete value."""
        base = profile(self.profile)
        if not self.input_size:
            self.input_size = base.input_size
        if not self.crop_size:
            self.crop_size = base.crop_size
        if not self.expansion_ratio:
            self.expansion_ratio = base.expansion_ratio
        if not self.lr:
            self.lr = DEFAULT_LR[self.profile]
        if self.ablation and self.ablation not in ABLATIONS:
            self.model_config()  # raises with the list of valid names
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        return self

    def model_config(self) -> ModelConfig:
        over = {}
        if self.input_size:
            over["input_size"] = self.input_size
        if self.crop_size:
            over["crop_size"] = self.crop_size
        if self.expansion_ratio:
            over["expansion_ratio"] = self.expansion_ratio
        over["ablation"] = self.ablation or None
        cfg = profile(self.profile, **over)
        cfg.backbone.shared_leaf_init = self.shared_leaf_init
        return cfg

    # -- file form -------------------------------------------------------------
    def to_text(self) -> str:
        lines = ["# tristage run configuration (key = value)"]
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text())
        return path

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        types = get_type_hints(cls)
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {n}: unknown key {key!r}")
            values[key] = _parse(types[key], val, key)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse(tp, val, key):
    try:
        if tp is bool:
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return low in ("true", "1", "yes")
        if tp is int:
            return int(val)
        if tp is float:
            return float(val)
        if tp is list:
            return [s.strip() for s in val.split(",") if s.strip()]
        return val
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {val!r} as {tp.__name__}") from None


FIELD_TYPES = get_type_hints(RunConfig)
