"""The full network: backbone pyramid -> shared interaction -> decoder."""

from dataclasses import dataclass, field

import numpy as np

from .backbone import Backbone, BackboneConfig, full_backbone, tiny_backbone
from .decoder import Decoder
from .interactors import CII, InteractorConfig
from .modules import Module
from .tensor import Tensor

# named sub-streams hanging off the one user-facing seed, so each
# component's randomness can be reproduced in isolation
STREAM_DATA = 0
STREAM_INIT = 1
STREAM_AUGMENT = 2
STREAM_SHUFFLE = 3


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, stream)))


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=full_backbone)
    interactor: InteractorConfig = field(default_factory=InteractorConfig)
    merge: str = "add"

    def to_dict(self):
        return {"backbone": self.backbone.to_dict(),
                "interactor": self.interactor.to_dict(),
                "merge": self.merge}

    @staticmethod
    def from_dict(d):
        return ModelConfig(BackboneConfig.from_dict(d["backbone"]),
                           InteractorConfig.from_dict(d["interactor"]),
                           d.get("merge", "add"))


def desk_model() -> ModelConfig:
    """Tiny backbone + 16-channel interaction, for 64x64 desk runs."""
    return ModelConfig(backbone=tiny_backbone(),
                       interactor=InteractorConfig(channels=16))


class SaliencyNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        rng = stream_rng(seed, STREAM_INIT)
        self.cfg = cfg
        self.backbone = Backbone(cfg.backbone, rng)
        self.cii = CII(rng, cfg.backbone.pyramid_channels, cfg.interactor)
        self.decoder = Decoder(rng, cfg.interactor.channels, merge=cfg.merge)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.data.shape[2:]
        return self.decoder(self.cii(self.backbone(x)), (h, w))

    def forward_features(self, x: Tensor):
        """(pyramid stages, interacted stages) for feature dumps."""
        pyramid = self.backbone(x)
        return pyramid, self.cii(pyramid)

    def param_groups(self):
        """Two lr groups: backbone vs everything else."""
        backbone = list(self.backbone.parameters())
        seen = {id(p) for p in backbone}
        rest = [p for p in self.parameters() if id(p) not in seen]
        return {"backbone": backbone, "rest": rest}
