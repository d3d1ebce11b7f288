"""Top-down pathway: merge C_M..C_1 coarse-to-fine, then predict.

D_M = C_M; D_i = smooth_i(merge(C_i, up(D_{i+1}))); the head is a 1x1
conv to one channel on D_1, resized to the input size and squashed. The
merge operator defaults to addition; concat is kept for sensitivity
checks and doubles the smoothing convs' input width.
"""

from . import ops
from .errors import DimensionError, UsageError
from .modules import Conv2d, ConvBNReLU, Module, ModuleList
from .tensor import Tensor


class Decoder(Module):
    def __init__(self, rng, channels: int, levels: int = 5, merge: str = "add"):
        super().__init__()
        if merge not in ("add", "concat"):
            raise UsageError(f"decoder merge {merge!r} not in ('add', 'concat')")
        self.merge = merge
        cin = channels if merge == "add" else 2 * channels
        self.smooth = ModuleList(
            ConvBNReLU(rng, cin, channels, 3) for _ in range(levels - 1))
        self.head = Conv2d(rng, channels, 1, 1, padding=0, bias=True)

    def forward(self, C: list, out_hw) -> Tensor:
        for a, b in zip(C, C[1:]):
            ha, hb = a.data.shape[2], b.data.shape[2]
            wa, wb = a.data.shape[3], b.data.shape[3]
            if (hb * 2, wb * 2) != (ha, wa):
                raise DimensionError(
                    f"stride chain broken: {a.data.shape} does not halve to {b.data.shape}")
        d = C[-1]
        for i in reversed(range(len(C) - 1)):
            h, w = C[i].data.shape[2:]
            up = ops.bilinear_resize(d, h, w)
            merged = C[i] + up if self.merge == "add" \
                else ops.concat_channels([C[i], up])
            d = self.smooth[i](merged)
        logits = ops.bilinear_resize(self.head(d), *out_hw)
        return logits.sigmoid()
