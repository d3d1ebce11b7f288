"""Cross-scale interaction: per-stage 1x1 projections feed one
information interactor, C_i = InI(proj_i(B_i)).

With sharing on, the interactor body is a single module instance applied
to every stage, so cross-scale information meets inside shared filters;
gradients from all stages accumulate into the same storage. Variants:

  plain       stack of k x k conv-BN-ReLU layers
  rgc         local branch gated by a sigmoid global-max summary of a
              global branch computed on the SAME stage
  rgc_dagger  like rgc, but the global branch reads the projected
              SUCCEEDING (coarser) stage; the top stage reads itself
  ppm / ppm_dagger
              pyramid pooling over bins {1,2,3,6}; the dagger form pools
              the succeeding stage instead of the stage itself
"""

import os
from dataclasses import dataclass

import numpy as np

from . import netpbm, ops
from .errors import DimensionError, UsageError
from .modules import Conv2d, ConvBNReLU, Module, ModuleList
from .tensor import Tensor

KINDS = ("plain", "rgc", "rgc_dagger", "ppm", "ppm_dagger")
PPM_BINS = (1, 2, 3, 6)


@dataclass
class InteractorConfig:
    kind: str = "rgc_dagger"
    kernel: int = 3       # plain only
    depth: int = 2        # plain only
    shared: bool = True
    channels: int = 64
    fuse_bn_relu: bool = True  # BN+ReLU after the last fusion conv

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown interactor kind {self.kind!r}, expected one of {KINDS}")
        if self.kernel not in (1, 3):
            raise UsageError(f"interactor kernel {self.kernel} not in (1, 3)")
        if self.depth < 1:
            raise UsageError(f"interactor depth {self.depth} < 1")
        if self.kind in ("ppm", "ppm_dagger") and self.channels % 4:
            raise UsageError(f"ppm needs channels divisible by 4, got {self.channels}")

    def to_dict(self):
        return {"kind": self.kind, "kernel": self.kernel, "depth": self.depth,
                "shared": self.shared, "channels": self.channels,
                "fuse_bn_relu": self.fuse_bn_relu}

    @staticmethod
    def from_dict(d):
        return InteractorConfig(**d)


class PlainConvStack(Module):
    def __init__(self, rng, cfg: InteractorConfig):
        super().__init__()
        self.layers = ModuleList(
            ConvBNReLU(rng, cfg.channels, cfg.channels, cfg.kernel)
            for _ in range(cfg.depth))

    def forward(self, x: Tensor, aux: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class RGCBlock(Module):
    """out = (G (*) L) + fuse(G (*) L) with
    G = sigmoid(GMP(r + global(r))), L = x + local(x); r is x itself or
    the succeeding stage. Setting gate_logit_override replaces the
    pre-sigmoid values with a constant (a large value degenerates the
    gate to ones), used to probe the gating path."""

    def __init__(self, rng, cfg: InteractorConfig):
        super().__init__()
        c = cfg.channels
        self.local = ModuleList([ConvBNReLU(rng, c, c, 3), ConvBNReLU(rng, c, c, 3)])
        self.glob = ModuleList([ConvBNReLU(rng, c, c, 3), ConvBNReLU(rng, c, c, 3)])
        fuse_tail = ConvBNReLU(rng, c, c, 3) if cfg.fuse_bn_relu else Conv2d(rng, c, c, 3)
        self.fuse = ModuleList([ConvBNReLU(rng, c, c, 3), fuse_tail])
        self.gate_logit_override = None

    @staticmethod
    def _run(stack, x):
        for layer in stack:
            x = layer(x)
        return x

    def forward(self, x: Tensor, right: Tensor) -> Tensor:
        if right.data.shape[1] != x.data.shape[1]:
            raise DimensionError(
                f"rgc branch channels differ: {x.data.shape} vs {right.data.shape}")
        r = right + self._run(self.glob, right)
        z = ops.global_max_pool(r)
        if self.gate_logit_override is not None:
            z = Tensor(np.full_like(z.data, self.gate_logit_override))
        g = z.sigmoid()
        self.last_gate = g.data  # diagnostic snapshot of the (n,c,1,1) gate
        left = x + self._run(self.local, x)
        gl = g * left
        return gl + self._run(self.fuse, gl)


class PPMBlock(Module):
    """Pyramid pooling: pool to each bin, 1x1-reduce to channels/4,
    resize back, concat with the stage, fuse with a 3x3 conv."""

    def __init__(self, rng, cfg: InteractorConfig):
        super().__init__()
        c = cfg.channels
        self.branches = ModuleList(
            ConvBNReLU(rng, c, c // 4, 1) for _ in PPM_BINS)
        self.fuse = ConvBNReLU(rng, 2 * c, c, 3)

    def forward(self, x: Tensor, pooled_src: Tensor) -> Tensor:
        h, w = x.data.shape[2:]
        sh, sw = pooled_src.data.shape[2:]
        if sh < max(PPM_BINS) or sw < max(PPM_BINS):
            raise UsageError(
                f"ppm needs pooled input of at least {max(PPM_BINS)}x{max(PPM_BINS)}, "
                f"got {sh}x{sw}")
        parts = [x]
        for bins, branch in zip(PPM_BINS, self.branches):
            p = branch(ops.adaptive_avg_pool(pooled_src, bins))
            parts.append(ops.bilinear_resize(p, h, w))
        return self.fuse(ops.concat_channels(parts))


def _make_body(rng, cfg: InteractorConfig) -> Module:
    if cfg.kind == "plain":
        return PlainConvStack(rng, cfg)
    if cfg.kind in ("rgc", "rgc_dagger"):
        return RGCBlock(rng, cfg)
    return PPMBlock(rng, cfg)


class CII(Module):
    """Projections + the (optionally shared) interactor body, applied to
    every pyramid stage."""

    def __init__(self, rng, in_channels, cfg: InteractorConfig):
        super().__init__()
        self.cfg = cfg
        self.projections = ModuleList(
            ConvBNReLU(rng, cin, cfg.channels, 1) for cin in in_channels)
        n_bodies = 1 if cfg.shared else len(in_channels)
        self.bodies = ModuleList(_make_body(rng, cfg) for _ in range(n_bodies))

    def body_for(self, i: int) -> Module:
        return self.bodies[0] if self.cfg.shared else self.bodies[i]

    def project(self, pyramid) -> list:
        stages = list(pyramid)
        if len(stages) != len(self.projections):
            raise DimensionError(
                f"pyramid has {len(stages)} stages, config expects {len(self.projections)}")
        for i, (s, proj) in enumerate(zip(stages, self.projections)):
            if s.data.shape[1] != proj.conv.weight.data.shape[1]:
                raise DimensionError(
                    f"stage {i + 1} has {s.data.shape[1]} channels, projection "
                    f"expects {proj.conv.weight.data.shape[1]}")
        return [proj(s) for proj, s in zip(self.projections, stages)]

    def forward(self, pyramid) -> list:
        p = self.project(pyramid)
        M = len(p)
        dagger = self.cfg.kind.endswith("_dagger")
        out = []
        for i in range(M):
            # coarser neighbour for the dagger variants; top stage reads itself
            aux = p[i + 1] if (dagger and i + 1 < M) else p[i]
            out.append(self.body_for(i)(p[i], aux))
        return out


def dump_features(tensors, out_dir, tag: str) -> list:
    """Write one grayscale PGM per stage: channel-mean map, min-max
    normalized to [0,255]; a constant map becomes uniform 128."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, t_ in enumerate(tensors, start=1):
        m = t_.data.mean(axis=(0, 1))
        lo, hi = float(m.min()), float(m.max())
        if hi - lo < 1e-12:
            img = np.full(m.shape, 128, dtype=np.uint8)
        else:
            img = np.round((m - lo) / (hi - lo) * 255.0).astype(np.uint8)
        path = os.path.join(out_dir, f"stage{i}_{tag}.pgm")
        netpbm.write_pgm(img, path)
        paths.append(path)
    return paths
