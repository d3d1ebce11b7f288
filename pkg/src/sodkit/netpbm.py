"""Binary NetPBM readers/writers: P6 (RGB images), P5 (grayscale maps).

maxval must be 255; anything else is rejected. Parse errors carry the
byte offset where decoding stopped.
"""

import numpy as np

from .errors import DataFormatError


def _tokens(buf: bytes, path: str, count: int, pos: int = 0):
    """Read whitespace/comment-delimited header tokens starting at pos."""
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n:
            ch = buf[pos]
            if ch in b" \t\r\n":
                pos += 1
            elif ch == ord("#"):
                while pos < n and buf[pos] != ord("\n"):
                    pos += 1
            else:
                break
        start = pos
        while pos < n and buf[pos] not in b" \t\r\n":
            pos += 1
        if start == pos:
            raise DataFormatError(f"{path}: truncated header at byte {pos}")
        out.append(buf[start:pos])
    return out, pos


def _read_raster(path: str, magic: bytes, channels: int):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != magic:
        raise DataFormatError(f"{path}: bad magic {buf[:2]!r} at byte 0, expected {magic.decode()}")
    toks, pos = _tokens(buf, path, 3, pos=2)
    try:
        w, h, maxval = (int(t) for t in toks)
    except ValueError:
        raise DataFormatError(f"{path}: non-numeric header field before byte {pos}") from None
    if maxval != 255:
        raise DataFormatError(f"{path}: maxval {maxval} unsupported, only 255")
    if w < 1 or h < 1:
        raise DataFormatError(f"{path}: bad dimensions {w}x{h}")
    pos += 1  # exactly one whitespace byte separates header and raster
    need = w * h * channels
    if len(buf) - pos < need:
        raise DataFormatError(
            f"{path}: truncated raster at byte {len(buf)}, need {need} bytes from {pos}")
    raster = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return raster.reshape(h, w, channels), w, h


def read_ppm(path) -> np.ndarray:
    """P6 file -> float32 image (3,H,W) scaled to [0,1]."""
    raster, _, _ = _read_raster(str(path), b"P6", 3)
    return (raster.astype(np.float32) / 255.0).transpose(2, 0, 1)


def read_pgm(path) -> np.ndarray:
    """P5 file -> float32 map (1,H,W) scaled to [0,1]."""
    raster, _, _ = _read_raster(str(path), b"P5", 1)
    return (raster.astype(np.float32) / 255.0).transpose(2, 0, 1)


def read_mask(path) -> np.ndarray:
    """P5 file -> binary {0,1} float32 mask (1,H,W), threshold 128."""
    raster, _, _ = _read_raster(str(path), b"P5", 1)
    return (raster >= 128).astype(np.float32).transpose(2, 0, 1)


def _quantize(arr: np.ndarray) -> np.ndarray:
    if arr.dtype == np.uint8:
        return arr
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(arr: np.ndarray, path):
    """Write a (H,W) or (1,H,W) map as P5. Float input is taken as [0,1]
    and quantized round(p*255); uint8 is written as-is."""
    if arr.ndim == 3:
        arr = arr[0]
    data = _quantize(arr)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_ppm(img: np.ndarray, path):
    """Write a (3,H,W) float [0,1] or uint8 image as P6."""
    data = _quantize(img.transpose(1, 2, 0) if img.ndim == 3 else img)
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
