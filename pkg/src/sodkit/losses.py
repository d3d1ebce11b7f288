"""Training loss: per-pixel binary cross entropy plus soft IoU.

Both are primitives with closed-form gradients rather than compositions
of elementwise ops; a (n,1,h,w) map would otherwise expand into tens of
graph nodes per loss term.
"""

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, grad_enabled, record_pattern

CLAMP = 1e-7
IOU_EPS = 1e-8


def _check(x: Tensor, y: Tensor, op: str):
    if x.data.shape != y.data.shape:
        raise DimensionError(f"{op}: prediction {x.data.shape} vs target {y.data.shape}")


def bce_loss(x: Tensor, y: Tensor) -> Tensor:
    """-(1/n) sum(y log x + (1-y) log(1-x)); x clamped to
    [1e-7, 1-1e-7]."""
    _check(x, y, "bce_loss")
    n = x.data.size
    inside = (x.data > CLAMP) & (x.data < 1.0 - CLAMP)
    record_pattern(inside)
    xc = np.clip(x.data, CLAMP, 1.0 - CLAMP)
    val = -(y.data * np.log(xc) + (1.0 - y.data) * np.log1p(-xc)).sum() / n

    rg = grad_enabled() and x.requires_grad
    out = Tensor(np.asarray(val, dtype=x.data.dtype), rg, (x,), "bce")
    if rg:
        def _backward():
            # zero gradient where the clamp is active
            g = -(y.data / xc - (1.0 - y.data) / (1.0 - xc)) / n
            x.accumulate(np.where(inside, g, 0.0) * out.grad)
        out._backward = _backward
    return out


def iou_loss(x: Tensor, y: Tensor) -> Tensor:
    """1 - sum(x*y) / (sum(x + y - x*y) + eps), the soft IoU.

    On a 4-d batch the IoU is taken per image and averaged, so one map's
    union never dilutes another's intersection.
    """
    _check(x, y, "iou_loss")
    n = x.data.shape[0] if x.data.ndim == 4 else 1
    xd = x.data.reshape(n, -1)
    yd = y.data.reshape(n, -1)
    inter = (xd * yd).sum(axis=1)
    union = (xd + yd - xd * yd).sum(axis=1) + IOU_EPS
    val = (1.0 - inter / union).mean()

    rg = grad_enabled() and x.requires_grad
    out = Tensor(np.asarray(val, dtype=x.data.dtype), rg, (x,), "iou")
    if rg:
        def _backward():
            g = -(yd * union[:, None] - inter[:, None] * (1.0 - yd)) \
                / (union * union)[:, None] / n
            x.accumulate(g.reshape(x.data.shape) * out.grad)
        out._backward = _backward
    return out


def total_loss(x: Tensor, y: Tensor) -> Tensor:
    return bce_loss(x, y) + iou_loss(x, y)
