"""Bottom-up pathway: ResNet-18-topology feature extractor.

Taps: B1 = stem conv output (stride 2), B2..B5 = the four residual
stages (strides 4, 8, 16, 32). Whether B1 should sit before or after the
stem max-pool is genuinely ambiguous in "conv1, res1, ..." naming; the
pre-pool tap is the config default and keeps five distinct strides.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import DimensionError, UsageError
from .modules import BasicBlock, BatchNorm2d, Conv2d, Module, ModuleList
from .tensor import Tensor

STRIDES = (2, 4, 8, 16, 32)


@dataclass
class BackboneConfig:
    stem_channels: int = 64
    stage_channels: tuple = (64, 128, 256, 512)
    blocks_per_stage: tuple = (2, 2, 2, 2)

    @property
    def pyramid_channels(self) -> tuple:
        """Channel count of B1..B5."""
        return (self.stem_channels,) + tuple(self.stage_channels)

    def to_dict(self):
        return {"stem_channels": self.stem_channels,
                "stage_channels": list(self.stage_channels),
                "blocks_per_stage": list(self.blocks_per_stage)}

    @staticmethod
    def from_dict(d):
        # absent keys keep their defaults; unknown keys raise TypeError
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return BackboneConfig(**d)


def full_backbone() -> BackboneConfig:
    """ResNet-18: stem 64, stages (64,128,256,512), two blocks each."""
    return BackboneConfig()


def tiny_backbone() -> BackboneConfig:
    """Desk-scale variant: quarter width, one block per stage."""
    return BackboneConfig(16, (16, 32, 64, 128), (1, 1, 1, 1))


@dataclass
class FeaturePyramid:
    stages: list  # B1..B5
    strides: tuple = STRIDES

    def __iter__(self):
        return iter(self.stages)

    def __len__(self):
        return len(self.stages)

    @property
    def channels(self) -> tuple:
        return tuple(s.data.shape[1] for s in self.stages)


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.stem = Conv2d(rng, 3, cfg.stem_channels, 7, stride=2)
        self.stem_bn = BatchNorm2d(cfg.stem_channels)
        self.stages = ModuleList()
        cin = cfg.stem_channels
        for si, (cout, blocks) in enumerate(zip(cfg.stage_channels, cfg.blocks_per_stage)):
            stage = ModuleList()
            for bi in range(blocks):
                stride = 2 if (si > 0 and bi == 0) else 1
                stage.append(BasicBlock(rng, cin, cout, stride))
                cin = cout
            self.stages.append(stage)

    def forward(self, x: Tensor) -> FeaturePyramid:
        n, c, h, w = x.data.shape
        if c != 3:
            raise DimensionError(f"backbone expects 3 input channels, got shape {x.data.shape}")
        if h % 32 or w % 32:
            raise UsageError(f"input size {h}x{w} not divisible by 32")
        b1 = self.stem_bn(self.stem(x)).relu()
        feat = ops.maxpool2d(b1, 3, 2)
        stages = [b1]
        for stage in self.stages:
            for block in stage:
                feat = block(feat)
            stages.append(feat)
        return FeaturePyramid(stages)
