"""Dense tensors with tape-based reverse-mode differentiation.

Only the primitives the denoising autoencoder needs are provided: strided
3x3 convolution and its transpose, dense layers, ReLU, Tanh, reshape, MSE and
Adam. Arrays are NCHW. Every op works in the dtype of its inputs; the global
default dtype only governs parameter initialisation.

Usage::

    with Tape() as tape:
        y = relu(conv2d(x, w, b, stride=2, padding=1))
        loss = mse_loss(y, target)
    tape.backward(loss)
    tape.grad(w)
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import DimensionError, InputError, NumericalError

_DEFAULT_DTYPE = np.dtype(np.float32)
_local = threading.local()


def set_default_dtype(dtype) -> None:
    """Switch parameter precision globally (float32 or float64)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise InputError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


class Tensor:
    """A numpy array plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor | None, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of differentiable ops executed while the tape is active.

    ``backward`` walks the records in exact reverse order of recording and
    accumulates gradients additively wherever a tensor fans out.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._grads: dict[int, np.ndarray] = {}
        self._keep: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def record(self, out: Tensor, inputs, backward) -> None:
        self.records.append(_Record(out, tuple(inputs), backward))

    def backward(self, root: Tensor, grad: np.ndarray | None = None) -> None:
        """Propagate ``grad`` (default: ones, i.e. d root / d root) to all inputs."""
        if grad is None:
            grad = np.ones_like(root.data)
        else:
            grad = np.asarray(grad, dtype=root.dtype)
            if grad.shape != root.shape:
                raise DimensionError(
                    f"seed gradient shape {grad.shape} != root shape {root.shape}"
                )
        self._grads = {id(root): grad}
        self._keep = {id(root): root}
        for rec in reversed(self.records):
            g_out = self._grads.get(id(rec.out))
            if g_out is None:
                continue
            for inp, g in zip(rec.inputs, rec.backward(g_out)):
                if inp is None or g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in self._grads:
                    self._grads[key] = self._grads[key] + g
                else:
                    self._grads[key] = g
                    self._keep[key] = inp

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the last backward root w.r.t. ``t`` (zeros if unreached)."""
        g = self._grads.get(id(t))
        if g is None or self._keep.get(id(t)) is not t:
            return np.zeros_like(t.data)
        return g


def _tape_stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _emit(data: np.ndarray, inputs, backward) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(t is not None and t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(out, inputs, backward)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# convolution kernels


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


# Column buffers are laid out (k, k, C, N, H_out, W_out) and images as
# (C, N, H, W) internally, so each of the k*k slice copies has one contiguous side.


def _im2col(xc: np.ndarray, k: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    c, n = xc.shape[:2]
    cols = np.empty((k, k, c, n, h_out, w_out), dtype=xc.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[ki, kj] = xc[:, :, ki:ki + stride * (h_out - 1) + 1:stride,
                              kj:kj + stride * (w_out - 1) + 1:stride]
    return cols.reshape(k * k * c, n * h_out * w_out)


def _col2im(cols: np.ndarray, padded_shape, k: int, stride: int,
            h_out: int, w_out: int) -> np.ndarray:
    c, n = padded_shape[:2]
    cols = cols.reshape(k, k, c, n, h_out, w_out)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki:ki + stride * (h_out - 1) + 1:stride,
                kj:kj + stride * (w_out - 1) + 1:stride] += cols[ki, kj]
    return out


def _pad_cn(x: np.ndarray, p: int) -> np.ndarray:
    """NCHW -> padded CNHW."""
    n, c, h, w = x.shape
    out = np.zeros((c, n, h + 2 * p, w + 2 * p), dtype=x.dtype)
    out[:, :, p:p + h, p:p + w] = x.transpose(1, 0, 2, 3)
    return out


def _kkc(w: np.ndarray) -> np.ndarray:
    """Conv weights [F, C, k, k] -> matrix [F, k*k*C] matching the column layout."""
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def _check_conv_args(x, w, b, stride, padding, in_axis):
    if x.data.ndim != 4:
        raise DimensionError(f"expected NCHW input, got shape {x.shape}")
    if w.data.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DimensionError(f"expected square kernel weights, got shape {w.shape}")
    if x.shape[1] != w.shape[in_axis]:
        raise DimensionError(
            f"input has {x.shape[1]} channels but weights expect {w.shape[in_axis]}"
        )
    out_ch = w.shape[1 - in_axis]
    if b is not None and b.shape != (out_ch,):
        raise DimensionError(f"bias shape {b.shape} != ({out_ch},)")
    if stride < 1 or padding < 0:
        raise InputError(f"need stride >= 1 and padding >= 0, got {stride}, {padding}")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation of ``x[N,C,H,W]`` with ``w[F,C,k,k]``."""
    x, w = _as_tensor(x), _as_tensor(w)
    b = None if b is None else _as_tensor(b)
    _check_conv_args(x, w, b, stride, padding, in_axis=1)
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    h_out = conv_output_size(h, k, stride, padding)
    w_out = conv_output_size(wd, k, stride, padding)
    if h_out < 1 or w_out < 1:
        raise DimensionError(f"input {h}x{wd} too small for kernel {k} with padding {padding}")
    xc = _pad_cn(x.data, padding)
    cols = _im2col(xc, k, stride, h_out, w_out)
    wmat = _kkc(w.data)
    out = wmat @ cols
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(f, n, h_out, w_out).transpose(1, 0, 2, 3)

    def backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(f, -1)
        gx = None
        if x.requires_grad:
            gxc = _col2im(wmat.T @ g2, xc.shape, k, stride, h_out, w_out)
            gx = gxc[:, :, padding:padding + h, padding:padding + wd].transpose(1, 0, 2, 3)
        gw = None
        if w.requires_grad:
            gw = (g2 @ cols.T).reshape(f, k, k, c).transpose(0, 3, 1, 2)
        gb = g2.sum(axis=1) if b is not None and b.requires_grad else None
        return gx, gw, gb

    return _emit(np.ascontiguousarray(out), (x, w, b), backward)


def conv2d_transpose(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
                     padding: int = 0, output_padding: int = 0) -> Tensor:
    """Transposed convolution of ``x[N,C,H,W]`` with ``w[C,F,k,k]``.

    With zero bias this is the adjoint of ``conv2d`` using the same weights,
    stride and padding. Output size is ``(H-1)*stride - 2*padding + k + output_padding``.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    b = None if b is None else _as_tensor(b)
    _check_conv_args(x, w, b, stride, padding, in_axis=0)
    if not 0 <= output_padding < stride:
        raise InputError(f"output_padding must lie in [0, stride), got {output_padding}")
    n, c, h, wd = x.shape
    _, f, k, _ = w.shape
    h_out = (h - 1) * stride - 2 * padding + k + output_padding
    w_out = (wd - 1) * stride - 2 * padding + k + output_padding
    if h_out < 1 or w_out < 1:
        raise DimensionError(f"transposed conv output would be {h_out}x{w_out}")
    padded_shape = (f, n, h_out + 2 * padding, w_out + 2 * padding)
    wmat = _kkc(w.data)  # [C, k*k*F]
    xmat = x.data.transpose(1, 0, 2, 3).reshape(c, -1)
    outc = _col2im(wmat.T @ xmat, padded_shape, k, stride, h, wd)
    out = outc[:, :, padding:padding + h_out, padding:padding + w_out].transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def backward(g):
        cols = _im2col(_pad_cn(g, padding), k, stride, h, wd)
        gx = None
        if x.requires_grad:
            gx = (wmat @ cols).reshape(c, n, h, wd).transpose(1, 0, 2, 3)
        gw = None
        if w.requires_grad:
            gw = (xmat @ cols.T).reshape(c, k, k, f).transpose(0, 3, 1, 2)
        gb = g.sum(axis=(0, 2, 3)) if b is not None and b.requires_grad else None
        return gx, gw, gb

    return _emit(np.ascontiguousarray(out), (x, w, b), backward)


# ---------------------------------------------------------------------------
# elementwise, shape and dense ops


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _emit(x.data * mask, (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return _emit(y, (x,), lambda g: (g * (1 - y * y),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    src = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    return reshape(x, (x.shape[0], -1))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Dense layer ``x @ w.T + b`` with ``w[out, in]``."""
    x, w = _as_tensor(x), _as_tensor(w)
    b = None if b is None else _as_tensor(b)
    if x.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weights {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def backward(g):
        gx = g @ w.data if x.requires_grad else None
        gw = g.T @ x.data if w.requires_grad else None
        gb = g.sum(axis=0) if b is not None and b.requires_grad else None
        return gx, gw, gb

    return _emit(out, (x, w, b), backward)


def mse_loss(x: Tensor, y: Tensor) -> Tensor:
    """Mean over all elements of ``(x - y)**2``; differentiable in both arguments."""
    x, y = _as_tensor(x), _as_tensor(y)
    if x.shape != y.shape:
        raise DimensionError(f"mse_loss shape mismatch: {x.shape} vs {y.shape}")
    diff = x.data - y.data
    numel = diff.size
    value = np.asarray(np.mean(diff * diff), dtype=x.dtype)

    def backward(g):
        gx = g * (2.0 / numel) * diff
        return gx, -gx

    return _emit(value, (x, y), backward)


# ---------------------------------------------------------------------------
# parameters and optimiser


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int,
                   dtype=None) -> np.ndarray:
    dtype = np.dtype(dtype or _DEFAULT_DTYPE)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    u = rng.random(shape, dtype=dtype)
    u *= dtype.type(2 * limit)
    u -= dtype.type(limit)
    return u


@dataclass
class ParameterBlock:
    """Named layers of (weight, bias) plus Adam moments and a step counter.

    Moments are allocated lazily on the first optimiser step, so building a
    large model for inspection costs one copy of the weights only.
    """

    layers: "OrderedDict[str, tuple[Tensor, Tensor]]" = field(default_factory=OrderedDict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, weight: np.ndarray, bias: np.ndarray) -> None:
        self.layers[name] = (Tensor(weight, True, f"{name}.weight"),
                             Tensor(bias, True, f"{name}.bias"))

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name, (w, b) in self.layers.items():
            yield f"{name}.weight", w
            yield f"{name}.bias", b

    def __getitem__(self, name: str) -> tuple[Tensor, Tensor]:
        return self.layers[name]

    @property
    def has_moments(self) -> bool:
        return bool(self.m)

    def init_moments(self) -> None:
        for key, p in self.named_parameters():
            self.m[key] = np.zeros_like(p.data)
            self.v[key] = np.zeros_like(p.data)

    def state(self) -> dict[str, np.ndarray]:
        """Copy of all parameters, moments and step (for best-checkpoint snapshots)."""
        snap = {f"p:{k}": p.data.copy() for k, p in self.named_parameters()}
        snap.update({f"m:{k}": a.copy() for k, a in self.m.items()})
        snap.update({f"v:{k}": a.copy() for k, a in self.v.items()})
        snap["step"] = np.asarray(self.step)
        return snap

    def load_state(self, snap: dict[str, np.ndarray]) -> None:
        for key, p in self.named_parameters():
            p.data = snap[f"p:{key}"].copy()
        self.m = {k[2:]: a.copy() for k, a in snap.items() if k.startswith("m:")}
        self.v = {k[2:]: a.copy() for k, a in snap.items() if k.startswith("v:")}
        self.step = int(snap["step"])


def adam_step(params: ParameterBlock, grads: dict[str, np.ndarray], lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ParameterBlock:
    """One bias-corrected Adam update, in place. Returns ``params``.

    ``grads`` maps ``"<layer>.weight"`` / ``"<layer>.bias"`` to arrays; missing
    keys are treated as zero gradients. Raises NumericalError, leaving the
    parameters untouched, if any gradient is non-finite.
    """
    if lr <= 0:
        raise InputError(f"learning rate must be positive, got {lr}")
    named = dict(params.named_parameters())
    for key, g in grads.items():
        if key not in named:
            raise DimensionError(f"gradient for unknown parameter {key!r}")
        if g.shape != named[key].shape:
            raise DimensionError(f"gradient {key} has shape {g.shape}, expected {named[key].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {key} at step {params.step + 1}")
    if not params.has_moments:
        params.init_moments()
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for key, p in named.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(p.data)
        m, v = params.m[key], params.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += eps
        update = m / denom
        update *= lr / c1
        p.data = p.data - update.astype(p.dtype, copy=False)
    return params
