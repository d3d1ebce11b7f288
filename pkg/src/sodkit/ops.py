"""Network layers as differentiable graph ops over rank-4 tensors (n,c,h,w).

Every function here follows the same shape: compute the forward pass with
plain numpy, wrap it in a Tensor, and attach a closure with the analytic
backward. Convolution goes through im2col so the hot path is one matmul;
resize and adaptive average pooling share a single separable
matrix-resample primitive.
"""

import warnings

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, grad_enabled, record_pattern


def _wants_grad(*tensors):
    return grad_enabled() and any(t is not None and t.requires_grad for t in tensors)


# -- convolution ------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    """Padded input (n,c,H,W) -> column matrix (n*oh*ow, c*kh*kw)."""
    n, c, H, W = xp.shape
    oh = (H - kh) // stride + 1
    ow = (W - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(n * oh * ow, c * kh * kw), oh, ow


def conv2d(x: Tensor, weight: Tensor, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding. Output size floors:
    oh = (h + 2p - kh)//stride + 1."""
    n, cin, h, w = x.data.shape
    cout, cin_w, kh, kw = weight.data.shape
    if cin != cin_w:
        raise DimensionError(f"conv2d: input channels {x.data.shape} vs kernel {weight.data.shape}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise DimensionError(
            f"conv2d: kernel {kh}x{kw} stride {stride} pad {padding} "
            f"gives empty output for input {h}x{w}")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols, oh, ow = _im2col(xp, kh, kw, stride)
    wmat = weight.data.reshape(cout, -1)
    out_mat = cols @ wmat.T
    out_data = out_mat.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2)
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, cout, 1, 1)

    rg = _wants_grad(x, weight, bias)
    prev = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor(np.ascontiguousarray(out_data), rg, prev, "conv2d")
    if rg:
        def _backward():
            dmat = out.grad.transpose(0, 2, 3, 1).reshape(n * oh * ow, cout)
            if bias is not None and bias.requires_grad:
                bias.accumulate(out.grad.sum(axis=(0, 2, 3)))
            if weight.requires_grad:
                # the column matrix is a k*k-redundant copy of the input;
                # rebuilding it here keeps the graph from pinning it
                wcols, _, _ = _im2col(xp, kh, kw, stride)
                weight.accumulate((dmat.T @ wcols).reshape(weight.data.shape))
            if x.requires_grad:
                dcols = (dmat @ wmat).reshape(n, oh, ow, cin, kh, kw)
                dcols = dcols.transpose(0, 3, 4, 5, 1, 2)  # (n,c,kh,kw,oh,ow)
                dxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i:i + stride * oh:stride,
                            j:j + stride * ow:stride] += dcols[:, :, i, j]
                if padding:
                    dxp = dxp[:, :, padding:padding + h, padding:padding + w]
                x.accumulate(dxp)
        out._backward = _backward
    return out


# -- batch normalization ----------------------------------------------


class BNState:
    """Running statistics owned by one BatchNorm2d layer."""

    def __init__(self, channels: int, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.num_batches = 0


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BNState,
                training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    n, c, h, w = x.data.shape
    if gamma.data.size != c:
        raise DimensionError(f"batchnorm2d: {c} channels vs gamma {gamma.data.shape}")
    axes = (0, 2, 3)
    m = n * h * w
    if training:
        if m < 2:
            raise DimensionError("batchnorm2d: train mode needs n*h*w >= 2 per channel")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)  # biased, used for normalization
        # running stats keep the unbiased estimate
        state.running_mean *= (1.0 - momentum)
        state.running_mean += momentum * mu
        state.running_var *= (1.0 - momentum)
        state.running_var += momentum * var * (m / max(m - 1, 1))
        state.num_batches += 1
    else:
        if state.num_batches == 0:
            warnings.warn("batchnorm2d: eval before any training batch, using init stats")
        mu = state.running_mean.astype(x.data.dtype)
        var = state.running_var.astype(x.data.dtype)

    ivstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(1, c, 1, 1)) * ivstd.reshape(1, c, 1, 1)
    out_data = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    rg = _wants_grad(x, gamma, beta)
    out = Tensor(out_data, rg, (x, gamma, beta), "bn")
    if rg:
        def _backward():
            g = out.grad
            if beta.requires_grad:
                beta.accumulate(g.sum(axis=axes))
            if gamma.requires_grad:
                gamma.accumulate((g * xhat).sum(axis=axes))
            if x.requires_grad:
                gs = gamma.data.reshape(1, c, 1, 1) * ivstd.reshape(1, c, 1, 1)
                if training:
                    # batch stats were functions of x
                    mean_g = g.mean(axis=axes, keepdims=True)
                    mean_gx = (g * xhat).mean(axis=axes, keepdims=True)
                    x.accumulate(gs * (g - mean_g - xhat * mean_gx))
                else:
                    x.accumulate(gs * g)
        out._backward = _backward
    return out


# -- pooling ----------------------------------------------------------


def maxpool2d(x: Tensor, k: int, stride: int, padding=None) -> Tensor:
    """Max pooling; pad = k//2 for odd k unless given. Ties route to the
    first window element in row-major order."""
    if padding is None:
        padding = k // 2 if k % 2 == 1 else 0
    n, c, h, w = x.data.shape
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    constant_values=-np.inf)
    H, W = xp.shape[2], xp.shape[3]
    oh = (H - k) // stride + 1
    ow = (W - k) // stride + 1
    if oh < 1 or ow < 1:
        raise DimensionError(f"maxpool2d: window {k} stride {stride} on input {h}x{w}")
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :].reshape(n, c, oh, ow, k * k)
    arg = win.argmax(axis=-1)  # first max in row-major window order
    record_pattern(arg)
    out_data = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    rg = _wants_grad(x)
    out = Tensor(np.ascontiguousarray(out_data), rg, (x,), "maxpool")
    if rg:
        def _backward():
            dxp = np.zeros((n, c, H, W), dtype=x.data.dtype)
            oy, ox = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
            rows = oy * stride + arg // k   # (n,c,oh,ow) via broadcast
            cols_ = ox * stride + arg % k
            ni = np.arange(n).reshape(n, 1, 1, 1)
            ci = np.arange(c).reshape(1, c, 1, 1)
            np.add.at(dxp, (ni, ci, rows, cols_), out.grad)
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + w]
            x.accumulate(dxp)
        out._backward = _backward
    return out


def global_max_pool(x: Tensor) -> Tensor:
    """(n,c,h,w) -> (n,c,1,1) spatial max; gradient to the first argmax."""
    n, c, h, w = x.data.shape
    flat = x.data.reshape(n, c, h * w)
    arg = flat.argmax(axis=-1)
    record_pattern(arg)
    out_data = np.take_along_axis(flat, arg[..., None], axis=-1).reshape(n, c, 1, 1)

    rg = _wants_grad(x)
    out = Tensor(out_data, rg, (x,), "gmp")
    if rg:
        def _backward():
            dflat = np.zeros_like(flat)
            ni = np.arange(n)[:, None]
            ci = np.arange(c)[None, :]
            dflat[ni, ci, arg] = out.grad.reshape(n, c)
            x.accumulate(dflat.reshape(x.data.shape))
        out._backward = _backward
    return out


# -- separable spatial resampling --------------------------------------


def matrix_resample(x: Tensor, ah: np.ndarray, aw: np.ndarray) -> Tensor:
    """out[n,c] = ah @ x[n,c] @ aw.T for row/column weight matrices.

    Bilinear resize and adaptive average pooling are both separable, so
    they reduce to this one op; the backward is the transposed pair.
    """
    ah = ah.astype(x.data.dtype, copy=False)
    aw = aw.astype(x.data.dtype, copy=False)
    out_data = np.matmul(np.matmul(ah, x.data), aw.T)

    rg = _wants_grad(x)
    out = Tensor(out_data, rg, (x,), "resample")
    if rg:
        def _backward():
            x.accumulate(np.matmul(np.matmul(ah.T, out.grad), aw))
        out._backward = _backward
    return out


def _bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row-interpolation matrix under half-pixel source centers:
    src = (dst + 0.5) * (n_in / n_out) - 0.5, clamped to [0, n_in - 1]."""
    A = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for d in range(n_out):
        src = (d + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        t = src - i0
        A[d, i0] += 1.0 - t
        A[d, i1] += t
    return A


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"bilinear_resize: target {out_h}x{out_w}")
    n, c, h, w = x.data.shape
    if (out_h, out_w) == (h, w):
        return x * 1.0  # graph-connected identity
    return matrix_resample(x, _bilinear_matrix(h, out_h), _bilinear_matrix(w, out_w))


def _avg_pool_matrix(n_in: int, bins: int, dtype=np.float64) -> np.ndarray:
    """Adaptive averaging: bin i covers rows [floor(i*n/b), ceil((i+1)*n/b))."""
    A = np.zeros((bins, n_in), dtype=dtype)
    for i in range(bins):
        lo = (i * n_in) // bins
        hi = -((-(i + 1) * n_in) // bins)
        A[i, lo:hi] = 1.0 / (hi - lo)
    return A


def adaptive_avg_pool(x: Tensor, bins: int) -> Tensor:
    n, c, h, w = x.data.shape
    if h < bins or w < bins:
        raise DimensionError(f"adaptive_avg_pool: {bins} bins on {h}x{w} input")
    return matrix_resample(x, _avg_pool_matrix(h, bins), _avg_pool_matrix(w, bins))


# -- structure ---------------------------------------------------------


def concat_channels(parts) -> Tensor:
    parts = list(parts)
    if len(parts) == 1:
        return parts[0]
    base = parts[0].data.shape
    for p in parts[1:]:
        s = p.data.shape
        if (s[0], s[2], s[3]) != (base[0], base[2], base[3]):
            raise DimensionError(f"concat_channels: {base} vs {s}")
    out_data = np.concatenate([p.data for p in parts], axis=1)

    rg = _wants_grad(*parts)
    out = Tensor(out_data, rg, tuple(parts), "concat")
    if rg:
        def _backward():
            off = 0
            for p in parts:
                c = p.data.shape[1]
                if p.requires_grad:
                    p.accumulate(out.grad[:, off:off + c])
                off += c
        out._backward = _backward
    return out
