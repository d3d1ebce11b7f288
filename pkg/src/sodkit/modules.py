"""Module tree: parameter registration, naming, train/eval mode.

Sharing works by construction: a shared interactor body is ONE module
instance applied to several inputs, so it registers (and serializes)
once. parameters()/named_parameters() still dedupe by object identity
in case a parameter is reachable twice.
"""

import numpy as np

from . import ops
from .ops import BNState
from .tensor import Parameter, Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._modules[key] = value
        elif isinstance(value, BNState):
            self._buffers[key] = value
        object.__setattr__(self, key, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "", _seen=None):
        """Yield (dotted name, parameter), each storage once. Also stamps
        Parameter.name with the first name seen, for diagnostics."""
        if _seen is None:
            _seen = set()
        for key, p in self._params.items():
            if id(p) not in _seen:
                _seen.add(id(p))
                full = f"{prefix}{key}"
                if not p.name:
                    p.name = full
                yield full, p
        for key, mod in self._modules.items():
            yield from mod.named_parameters(f"{prefix}{key}.", _seen)

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = "", _seen=None):
        if _seen is None:
            _seen = set()
        for key, st in self._buffers.items():
            if id(st) not in _seen:
                _seen.add(id(st))
                yield f"{prefix}{key}", st
        for key, mod in self._modules.items():
            yield from mod.named_buffers(f"{prefix}{key}.", _seen)

    def modules(self):
        yield self
        for mod in self._modules.values():
            yield from mod.modules()

    def train(self, flag: bool = True):
        for mod in self.modules():
            object.__setattr__(mod, "training", flag)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self._list = []
        for m in mods:
            self.append(m)

    def append(self, mod: Module):
        self._modules[str(len(self._list))] = mod
        self._list.append(mod)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


def kaiming_conv(rng: np.random.Generator, cout: int, cin: int, k: int) -> np.ndarray:
    """Fan-in scaled normal init for a (cout,cin,k,k) kernel."""
    std = np.sqrt(2.0 / (cin * k * k))
    return (rng.standard_normal((cout, cin, k, k)) * std).astype(np.float32)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, k, stride=1, padding=None, bias=False):
        super().__init__()
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.weight = Parameter(kaiming_conv(rng, cout, cin, k))
        self.bias = Parameter(np.zeros(cout, dtype=np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=np.float32))
        self.beta = Parameter(np.zeros(channels, dtype=np.float32))
        self.state = BNState(channels)

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm2d(x, self.gamma, self.beta, self.state,
                               self.training, self.momentum, self.eps)


class ConvBNReLU(Module):
    """The default conv unit everywhere: conv (no bias) + BN + ReLU."""

    def __init__(self, rng, cin, cout, k, stride=1, padding=None):
        super().__init__()
        self.conv = Conv2d(rng, cin, cout, k, stride, padding, bias=False)
        self.bn = BatchNorm2d(cout)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(self.conv(x)).relu()


class BasicBlock(Module):
    """Two 3x3 conv-BN with identity (or 1x1-projected) skip."""

    def __init__(self, rng, cin, cout, stride=1):
        super().__init__()
        self.conv1 = Conv2d(rng, cin, cout, 3, stride)
        self.bn1 = BatchNorm2d(cout)
        self.conv2 = Conv2d(rng, cout, cout, 3, 1)
        self.bn2 = BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.proj = Conv2d(rng, cin, cout, 1, stride, padding=0)
            self.proj_bn = BatchNorm2d(cout)
        else:
            self.proj = None

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn1(self.conv1(x)).relu()
        y = self.bn2(self.conv2(y))
        skip = x if self.proj is None else self.proj_bn(self.proj(x))
        return (y + skip).relu()
