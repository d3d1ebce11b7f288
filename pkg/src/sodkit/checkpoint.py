"""Binary checkpoints.

Layout (all integers little-endian):

    magic   8 bytes  b"CIISOD01"
    version u32      currently 1
    config  u32 length + that many bytes of JSON (model config)
    count   u32
    entries, sorted by name:
        u16 name length + UTF-8 name
        u8  ndim
        u32 x ndim   dims
        float32 x prod(dims)  payload

Entries cover every parameter plus batch-norm running statistics, each
stored once regardless of how many modules share it. Loading rebuilds
the model from the embedded config, so a checkpoint is self-contained.
"""

import io
import json
import os
import struct

import numpy as np

from .errors import DataFormatError
from .model import ModelConfig, SaliencyNet

MAGIC = b"CIISOD01"
VERSION = 1


def _entries(model) -> dict:
    out = {}
    for name, p in model.named_parameters():
        out[name] = p.data
    for name, bn in model.named_buffers():
        out[name + ".running_mean"] = bn.running_mean
        out[name + ".running_var"] = bn.running_var
        out[name + ".num_batches"] = np.array([bn.num_batches], dtype=np.float32)
    return out


def save_checkpoint(model: SaliencyNet, path) -> int:
    """Returns the number of bytes written."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg = json.dumps(model.cfg.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    entries = _entries(model)
    buf.write(struct.pack("<I", len(entries)))
    for name in sorted(entries):
        arr = np.ascontiguousarray(entries[name], dtype="<f4")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    blob = buf.getvalue()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)
    return len(blob)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.blob):
            raise DataFormatError(
                f"{self.path}: truncated reading {what} at byte {self.off} "
                f"(need {n}, have {len(self.blob) - self.off})")
        piece = self.blob[self.off:self.off + n]
        self.off += n
        return piece

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def read_checkpoint(path):
    """Parse without instantiating: (config_dict, {name: float32 array})."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    magic = r.take(8, "magic")
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, want {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    cfg_len = r.u32("config length")
    try:
        cfg = json.loads(r.take(cfg_len, "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"{path}: bad config block: {e}") from None
    count = r.u32("entry count")
    entries = {}
    for i in range(count):
        nlen = struct.unpack("<H", r.take(2, f"entry {i} name length"))[0]
        name = r.take(nlen, f"entry {i} name").decode("utf-8")
        ndim = r.take(1, f"{name} ndim")[0]
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"{name} dims"))
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        raw = r.take(4 * n, f"{name} payload")
        entries[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if r.off != len(blob):
        raise DataFormatError(
            f"{path}: {len(blob) - r.off} trailing bytes after last entry")
    return cfg, entries


def load_into(model: SaliencyNet, entries: dict, path="checkpoint"):
    """Assign entries onto an existing model; every name and shape must
    line up exactly (first offender reported, names in sorted order)."""
    want = _entries(model)
    for name in sorted(set(want) | set(entries)):
        if name not in entries:
            raise DataFormatError(f"{path}: missing entry {name}")
        if name not in want:
            raise DataFormatError(f"{path}: unexpected entry {name}")
        if entries[name].shape != want[name].shape:
            raise DataFormatError(
                f"{path}: shape mismatch for {name}: "
                f"file {entries[name].shape} vs model {want[name].shape}")
    for name, p in model.named_parameters():
        p.data = entries[name].astype(np.float32)
        p.grad = None
    for name, bn in model.named_buffers():
        bn.running_mean = entries[name + ".running_mean"].astype(np.float32)
        bn.running_var = entries[name + ".running_var"].astype(np.float32)
        bn.num_batches = int(entries[name + ".num_batches"][0])
    return model


def load_checkpoint(path) -> SaliencyNet:
    """Rebuild the model a file describes, in eval mode."""
    cfg, entries = read_checkpoint(path)
    model = SaliencyNet(ModelConfig.from_dict(cfg), seed=0)
    load_into(model, entries, path)
    return model.eval()
