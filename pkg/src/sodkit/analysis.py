"""Parameter and FLOP accounting.

Parameter counts come from a constructed model (storage actually
allocated, so sharing is counted once by definition). FLOPs are
analytic: a symbolic walk over the same topology, counting
multiply-accumulates for convolutions, batch norms, pools, and resizes,
reported as FLOPs = 2 x MAC. Elementwise adds, activations, and the
gating product are ignored, which is the usual convention and part of
why published numbers carry loose tolerances.
"""

from dataclasses import dataclass

from .backbone import STRIDES
from .interactors import PPM_BINS
from .model import ModelConfig, SaliencyNet


# -- parameters ---------------------------------------------------------


@dataclass
class ParamTable:
    backbone: int
    projections: int
    body: int          # distinct storage; a shared body appears once
    body_instances: int
    decoder: int
    head: int

    @property
    def total(self) -> int:
        return (self.backbone + self.projections + self.body
                + self.decoder + self.head)

    def to_dict(self):
        return {"backbone": self.backbone, "projections": self.projections,
                "interactor_body": self.body,
                "body_instances": self.body_instances,
                "decoder": self.decoder, "head": self.head,
                "total": self.total}

    def rows(self):
        d = self.to_dict()
        return [(k, d[k]) for k in ("backbone", "projections",
                                    "interactor_body", "decoder", "head",
                                    "total")]


def count_params(model_or_config) -> ParamTable:
    model = (model_or_config if isinstance(model_or_config, SaliencyNet)
             else SaliencyNet(model_or_config, seed=0))
    head = model.decoder.head.param_count()
    return ParamTable(
        backbone=model.backbone.param_count(),
        projections=model.cii.projections.param_count(),
        body=model.cii.bodies.param_count(),
        body_instances=len(model.cii.bodies),
        decoder=model.decoder.param_count() - head,
        head=head)


def _conv_bn(k: int, cin: int, cout: int) -> int:
    return k * k * cin * cout + 2 * cout


def bottleneck_backbone_params(widths=(64, 128, 256, 512),
                               blocks=(3, 4, 6, 3), expansion=4) -> int:
    """Conv+BN parameter count of the 50-layer bottleneck topology,
    computed from the table alone (no runnable model at this depth)."""
    total = _conv_bn(7, 3, 64)
    cin = 64
    for w, b in zip(widths, blocks):
        cout = expansion * w
        for i in range(b):
            total += (_conv_bn(1, cin, w) + _conv_bn(3, w, w)
                      + _conv_bn(1, w, cout))
            if i == 0:
                total += _conv_bn(1, cin, cout)
            cin = cout
    return total


def bottleneck_additions(channels: int = 64) -> dict:
    """What this architecture would add on top of the bottleneck
    backbone: per-stage projections, one shared gated body, decoder."""
    pyramid = (64, 256, 512, 1024, 2048)
    projections = sum(_conv_bn(1, cin, channels) for cin in pyramid)
    body = 6 * _conv_bn(3, channels, channels)
    decoder = (len(pyramid) - 1) * _conv_bn(3, channels, channels)
    head = channels + 1
    return {"projections": projections, "body": body, "decoder": decoder,
            "head": head, "total": projections + body + decoder + head}


# -- FLOPs -------------------------------------------------------------


def conv_macs(k: int, cin: int, cout: int, h: int, w: int) -> int:
    return k * k * cin * cout * h * w


def bn_macs(c: int, h: int, w: int) -> int:
    return c * h * w


def pool_macs(k: int, c: int, oh: int, ow: int) -> int:
    return k * k * c * oh * ow


def resize_macs(c: int, oh: int, ow: int) -> int:
    return 4 * c * oh * ow  # four taps per output element


@dataclass
class FlopReport:
    rows: list  # (component, layer, macs)

    def component_macs(self) -> dict:
        out = {}
        for comp, _, macs in self.rows:
            out[comp] = out.get(comp, 0) + macs
        return out

    @property
    def total_macs(self) -> int:
        return sum(m for _, _, m in self.rows)

    @property
    def total_flops(self) -> int:
        return 2 * self.total_macs

    def to_dict(self):
        return {"convention": "flops = 2 * MAC",
                "total_macs": self.total_macs,
                "total_flops": self.total_flops,
                "per_component_macs": self.component_macs()}


def _conv_bn_macs(rows, comp, tag, k, cin, cout, h, w, bn=True):
    rows.append((comp, f"{tag} conv{k}x{k} {cin}->{cout} @{h}x{w}",
                 conv_macs(k, cin, cout, h, w)))
    if bn:
        rows.append((comp, f"{tag} bn @{h}x{w}", bn_macs(cout, h, w)))


def estimate_flops(cfg: ModelConfig, input_size: int) -> FlopReport:
    if input_size % 32:
        raise ValueError(f"input_size {input_size} not divisible by 32")
    S = input_size
    rows = []
    bc = cfg.backbone
    hs = [S // s for s in STRIDES]

    _conv_bn_macs(rows, "backbone", "stem", 7, 3, bc.stem_channels,
                  hs[0], hs[0])
    rows.append(("backbone", f"stem maxpool3x3 @{hs[1]}x{hs[1]}",
                 pool_macs(3, bc.stem_channels, hs[1], hs[1])))
    cin = bc.stem_channels
    for si, (cout, blocks) in enumerate(zip(bc.stage_channels,
                                            bc.blocks_per_stage)):
        h = hs[si + 1]
        for bi in range(blocks):
            stride = 2 if (si > 0 and bi == 0) else 1
            tag = f"stage{si + 1}.block{bi + 1}"
            _conv_bn_macs(rows, "backbone", tag + ".a", 3, cin, cout, h, h)
            _conv_bn_macs(rows, "backbone", tag + ".b", 3, cout, cout, h, h)
            if stride != 1 or cin != cout:
                _conv_bn_macs(rows, "backbone", tag + ".skip", 1, cin, cout,
                              h, h)
            cin = cout

    ic = cfg.interactor
    C = ic.channels
    pyramid = bc.pyramid_channels
    M = len(pyramid)
    for i, (cin_i, h) in enumerate(zip(pyramid, hs), start=1):
        _conv_bn_macs(rows, "projections", f"proj{i}", 1, cin_i, C, h, h)

    dagger = ic.kind.endswith("_dagger")
    for i in range(M):
        h = hs[i]
        aux_h = hs[i + 1] if (dagger and i + 1 < M) else hs[i]
        tag = f"body@stage{i + 1}"
        if ic.kind == "plain":
            for d in range(ic.depth):
                _conv_bn_macs(rows, "interactor_body", f"{tag}.{d + 1}",
                              ic.kernel, C, C, h, h)
        elif ic.kind in ("rgc", "rgc_dagger"):
            for d in range(2):
                _conv_bn_macs(rows, "interactor_body", f"{tag}.local{d + 1}",
                              3, C, C, h, h)
                _conv_bn_macs(rows, "interactor_body", f"{tag}.global{d + 1}",
                              3, C, C, aux_h, aux_h)
            rows.append(("interactor_body", f"{tag}.gmp @{aux_h}x{aux_h}",
                         bn_macs(C, aux_h, aux_h)))
            _conv_bn_macs(rows, "interactor_body", f"{tag}.fuse1", 3, C, C,
                          h, h)
            _conv_bn_macs(rows, "interactor_body", f"{tag}.fuse2", 3, C, C,
                          h, h, bn=ic.fuse_bn_relu)
        else:  # ppm / ppm_dagger
            for b in PPM_BINS:
                rows.append(("interactor_body",
                             f"{tag}.pool{b} @{aux_h}x{aux_h}",
                             bn_macs(C, aux_h, aux_h)))
                _conv_bn_macs(rows, "interactor_body", f"{tag}.reduce{b}",
                              1, C, C // 4, b, b)
                rows.append(("interactor_body", f"{tag}.resize{b} @{h}x{h}",
                             resize_macs(C // 4, h, h)))
            _conv_bn_macs(rows, "interactor_body", f"{tag}.fuse", 3, 2 * C, C,
                          h, h)

    merge_cin = C if cfg.merge == "add" else 2 * C
    for i in reversed(range(M - 1)):
        h = hs[i]
        rows.append(("decoder", f"up{i + 2}->{i + 1} resize @{h}x{h}",
                     resize_macs(C, h, h)))
        _conv_bn_macs(rows, "decoder", f"smooth{i + 1}", 3, merge_cin, C, h, h)
    rows.append(("decoder", f"head conv1x1 {C}->1 @{hs[0]}x{hs[0]}",
                 conv_macs(1, C, 1, hs[0], hs[0])))
    rows.append(("decoder", f"head resize @{S}x{S}", resize_macs(1, S, S)))
    return FlopReport(rows)
