"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray plus a closure that knows how to push its
gradient to its parents. backward() runs the closures in reverse
topological order. Anything heavier than elementwise math (conv, pool,
resize, losses) lives in ops.py and registers itself the same way.
"""

from contextlib import contextmanager

import numpy as np

from .errors import UsageError

_grad_enabled = True
_trace_buf = None


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference, metrics)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextmanager
def trace_patterns(buf: list):
    """Collect the branch pattern (relu masks, pool argmaxes) of every
    piecewise op run inside the block. Finite differences are only valid
    when two probes land in the same linear region; the gradient checker
    compares these buffers to detect region changes."""
    global _trace_buf
    prev = _trace_buf
    _trace_buf = buf
    try:
        yield
    finally:
        _trace_buf = prev


def record_pattern(arr: np.ndarray):
    if _trace_buf is not None:
        _trace_buf.append(arr)


def grad_enabled():
    return _grad_enabled


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _noop():
    return None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "_op")

    def __init__(self, data, requires_grad: bool = False, _prev=(), _op: str = ""):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad and _grad_enabled
        self._backward = _noop
        self._prev = _prev if self.requires_grad else ()
        self._op = _op

    # -- graph plumbing ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, g: np.ndarray):
        """Add g into self.grad (create it on first touch)."""
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise UsageError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        # iterative topo sort: model graphs get deep enough that the
        # recursive version trips the interpreter limit
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.data.shape)
        for node in reversed(topo):
            node._backward()
        # the walk consumes the graph; closures capture their own node, a
        # cycle the refcounter cannot free, so break the links here
        for node in topo:
            node._backward = _noop
            node._prev = ()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- elementwise algebra -------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        rg = _grad_enabled and (self.requires_grad or other.requires_grad)
        out = Tensor(self.data + other.data, rg, (self, other), "+")
        if rg:
            def _backward():
                if self.requires_grad:
                    self.accumulate(_unbroadcast(out.grad, self.data.shape))
                if other.requires_grad:
                    other.accumulate(_unbroadcast(out.grad, other.data.shape))
            out._backward = _backward
        return out

    def __mul__(self, other):
        other = self._coerce(other)
        rg = _grad_enabled and (self.requires_grad or other.requires_grad)
        out = Tensor(self.data * other.data, rg, (self, other), "*")
        if rg:
            def _backward():
                if self.requires_grad:
                    self.accumulate(_unbroadcast(other.data * out.grad, self.data.shape))
                if other.requires_grad:
                    other.accumulate(_unbroadcast(self.data * out.grad, other.data.shape))
            out._backward = _backward
        return out

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-self._coerce(other))

    __radd__ = __add__
    __rmul__ = __mul__

    def relu(self):
        mask = self.data > 0.0
        record_pattern(mask)
        rg = _grad_enabled and self.requires_grad
        out = Tensor(np.maximum(self.data, 0.0), rg, (self,), "relu")
        if rg:
            def _backward():
                # subgradient 0 at the kink
                self.accumulate(mask * out.grad)
            out._backward = _backward
        return out

    def sigmoid(self):
        x = self.data
        # evaluate both branches on clamped inputs so neither overflows
        pos = 1.0 / (1.0 + np.exp(-np.maximum(x, 0.0)))
        ex = np.exp(np.minimum(x, 0.0))
        s = np.where(x >= 0, pos, ex / (1.0 + ex)).astype(x.dtype)
        rg = _grad_enabled and self.requires_grad
        out = Tensor(s, rg, (self,), "sigmoid")
        if rg:
            def _backward():
                self.accumulate(s * (1.0 - s) * out.grad)
            out._backward = _backward
        return out

    def sum(self):
        rg = _grad_enabled and self.requires_grad
        out = Tensor(self.data.sum(), rg, (self,), "sum")
        if rg:
            def _backward():
                self.accumulate(np.broadcast_to(out.grad, self.data.shape))
            out._backward = _backward
        return out

    def mean(self):
        n = float(self.data.size)
        return self.sum() * (1.0 / n)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" op={self._op}" if self._op else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


class Parameter(Tensor):
    """Trainable leaf. `name` is the checkpoint key, assigned at registration."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
