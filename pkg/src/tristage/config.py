"""Model configuration and the two named size profiles.

``full`` mirrors a ResNet-50 encoder at 704x704 input with a 120x120 crop.
``tiny`` shrinks every width and depth so the whole three-stage graph runs on
one CPU core in well under a second.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

# Architectural ablation switches. Each one names exactly one row of an
# ablation table; at most one may be active (see ModelConfig.validate).
ABLATIONS = {
    "wo_mfem": "MFEM table, row 'w/o MFEM': every MFEM replaced by one 3x3 conv",
    "mfem_parallel": "MFEM table, row 'MFEM-Parallel': conv-block branches run in parallel",
    "wo_bem": "BEM table, row 'w/o BEM': every BEM replaced by one 3x3 conv",
    "wo_bem_edge": "BEM table, row 'w/o edge': no boundary map concatenated inside BEM",
    "wo_sfm": "MGFM table, row 'w/o SFM': SFM replaced by concat + 3x3 conv",
    "wo_mgfm_edge": "MGFM table, row 'w/o edge': E2 not concatenated inside MGFM",
}


class ConfigError(ValueError):
    pass


class SizingError(ValueError):
    pass


@dataclass
class BackboneConfig:
    # conv1, stage2 (layer1), stage3..5 (layer2..4) output widths
    stage_channels: list = field(default_factory=lambda: [64, 256, 512, 1024, 2048])
    stage_blocks: list = field(default_factory=lambda: [1, 3, 4, 6, 3])
    stem_stride_total: int = 4
    tiny_profile: bool = False
    # both leaves start from the same checkpoint stages when weights are loaded
    shared_leaf_init: bool = True

    def validate(self):
        if len(self.stage_channels) != 5 or len(self.stage_blocks) != 5:
            raise ConfigError("stage_channels and stage_blocks need exactly 5 entries")
        if min(self.stage_channels) < 1 or min(self.stage_blocks) < 1:
            raise ConfigError("stage_channels and stage_blocks entries must be >= 1")
        if self.stem_stride_total != 4:
            raise ConfigError("only a total stem stride of 4 is supported")
        for c in self.stage_channels[1:]:
            if c % 4:
                raise ConfigError(f"bottleneck stage width {c} is not divisible by 4")


@dataclass
class MfemConfig:
    out_channels: int = 64
    qk_channels: int = 16
    pool_sizes: tuple = (8, 4, 2, 1)
    dilation: int = 2
    use_nonlocal: bool = False
    nonlocal_max_positions: int = 4096
    parallel: bool = False

    def validate(self):
        p = list(self.pool_sizes)
        if len(p) != 4 or any(a <= b for a, b in zip(p, p[1:])):
            raise ConfigError(f"pool_sizes must be 4 strictly decreasing ints, got {p}")
        if p[-1] != 1:
            raise ConfigError("the last pool size must be 1 (identity pooling)")
        if self.qk_channels > self.out_channels:
            raise ConfigError("qk_channels must not exceed out_channels")


@dataclass
class ModelConfig:
    profile: str = "full"
    input_size: int = 704
    crop_size: int = 120
    expansion_ratio: float = 1.2
    threshold: float = 0.5
    channels: int = 64
    qk_channels: int = 16
    ca_reduction: int = 4
    sfm_groups: int = 4
    # width of the boundary feature C3(f_a) inside MGFM before concat with E2
    boundary_channels: int = 64
    norm: str = "batch"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    ablation: Optional[str] = None

    def validate(self):
        self.backbone.validate()
        if self.norm not in ("batch", "group"):
            raise ConfigError(f"norm must be 'batch' or 'group', got {self.norm!r}")
        if self.input_size < 32 or self.input_size % 16:
            raise SizingError(
                f"input_size={self.input_size}: must be >= 32 and a multiple of 16")
        if self.crop_size < 8 or self.crop_size % 8:
            raise SizingError(f"crop_size={self.crop_size}: must be a multiple of 8")
        if self.expansion_ratio < 1.0:
            raise ConfigError("expansion_ratio must be >= 1")
        if self.channels % self.sfm_groups:
            raise ConfigError(
                f"channels={self.channels} not divisible by sfm_groups={self.sfm_groups}")
        if self.ablation is not None:
            names = [a.strip() for a in str(self.ablation).split(",") if a.strip()]
            unknown = [a for a in names if a not in ABLATIONS]
            if unknown:
                raise ConfigError(f"unknown ablation {unknown}; choose from {sorted(ABLATIONS)}")
            if len(names) > 1:
                rows = "; ".join(ABLATIONS[a] for a in names)
                raise ConfigError(
                    "ablations are only defined one at a time against the full model; "
                    f"combining them contradicts the rows: {rows}")
            self.ablation = names[0] if names else None
        return self

    def has(self, name: str) -> bool:
        return self.ablation == name

    def mfem(self, use_nonlocal=False) -> MfemConfig:
        return MfemConfig(out_channels=self.channels, qk_channels=self.qk_channels,
                          use_nonlocal=use_nonlocal, parallel=self.has("mfem_parallel"))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        bb = d.pop("backbone", {}) or {}
        known = {f.name for f in fields(cls)}
        cfg = cls(**{k: v for k, v in d.items() if k in known},
                  backbone=BackboneConfig(**bb))
        return cfg.validate()


def full_profile(**overrides) -> ModelConfig:
    return replace(ModelConfig(), **overrides).validate()


def tiny_profile(**overrides) -> ModelConfig:
    cfg = ModelConfig(
        profile="tiny",
        input_size=176,
        crop_size=40,
        channels=16,
        qk_channels=4,
        boundary_channels=16,
        norm="group",
        backbone=BackboneConfig(stage_channels=[8, 16, 24, 32, 48],
                                stage_blocks=[1, 1, 1, 1, 1], tiny_profile=True),
    )
    return replace(cfg, **overrides).validate()


def profile(name: str, **overrides) -> ModelConfig:
    if name == "full":
        return full_profile(**overrides)
    if name == "tiny":
        return tiny_profile(**overrides)
    raise ConfigError(f"unknown profile {name!r}; expected 'full' or 'tiny'")
