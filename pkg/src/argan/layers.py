"""Parameterized layers: convolution, transposed convolution, batch norm,
ConvLSTM, spectral normalization and fully connected.

Convolutions are lowered to a single GEMM over an im2col matrix built in
channels-last order so the gather copies contiguous channel runs.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _make, concat, sigmoid, take_channels, tanh

LEAKY_SLOPE = 0.2


# ---------------------------------------------------------------------------
# raw array kernels
# ---------------------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(x_nhwc: np.ndarray, k: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    B, H, W, C = x_nhwc.shape
    Ho = conv_output_size(H, k, stride, pad)
    Wo = conv_output_size(W, k, stride, pad)
    if pad:
        xp = np.zeros((B, H + 2 * pad, W + 2 * pad, C), dtype=x_nhwc.dtype)
        xp[:, pad:pad + H, pad:pad + W, :] = x_nhwc
    else:
        xp = x_nhwc
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : (Ho - 1) * stride + 1: stride, : (Wo - 1) * stride + 1: stride]
    # (B, Ho, Wo, C, k, k) -> (B, Ho, Wo, k, k, C)
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, k * k * C)
    return cols, Ho, Wo


def _col2im(cols: np.ndarray, shape_nhwc: tuple[int, int, int, int], k: int,
            stride: int, pad: int, Ho: int, Wo: int) -> np.ndarray:
    B, H, W, C = shape_nhwc
    cols = cols.reshape(B, Ho, Wo, k, k, C)
    xp = np.zeros((B, H + 2 * pad, W + 2 * pad, C), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, i: i + stride * (Ho - 1) + 1: stride,
               j: j + stride * (Wo - 1) + 1: stride, :] += cols[:, :, :, i, j, :]
    return xp[:, pad: pad + H, pad: pad + W, :]


def _wmat(w: np.ndarray) -> np.ndarray:
    # (O, C, k, k) -> (O, k*k*C) matching the im2col column order
    O, C, k, _ = w.shape
    return w.transpose(0, 2, 3, 1).reshape(O, k * k * C)


def _check_conv(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> None:
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, weight expects {w.shape[1]}")
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: only square kernels are supported, got {w.shape[2:]}")
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d: bad stride/pad ({stride}, {pad})")
    k = w.shape[2]
    if conv_output_size(x.shape[2], k, stride, pad) < 1 or conv_output_size(x.shape[3], k, stride, pad) < 1:
        raise ShapeError(f"conv2d: non-positive output size for input {x.shape[2:]} "
                         f"with kernel {k}, stride {stride}, pad {pad}")


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int, pad: int):
    """Cross-correlation. Returns the NCHW output and the im2col matrix."""
    _check_conv(x, w, stride, pad)
    B = x.shape[0]
    O, _, k, _ = w.shape
    cols, Ho, Wo = _im2col(x.transpose(0, 2, 3, 1), k, stride, pad)
    y = cols @ _wmat(w).T
    if b is not None:
        y += b
    # NCHW shape over channels-last memory; the next conv reads it back for free
    return y.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2), cols


def conv2d_backward_input(g: np.ndarray, w: np.ndarray, x_shape, stride: int, pad: int) -> np.ndarray:
    B, C, H, W = x_shape
    O, _, k, _ = w.shape
    Ho, Wo = g.shape[2], g.shape[3]
    if stride == 1 and pad <= k - 1 and O <= C:
        # full correlation with the flipped, transposed kernel
        wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dx, _ = conv2d_forward(g, wf, None, 1, k - 1 - pad)
        return dx
    gm = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
    dcols = gm @ _wmat(w)
    dx = _col2im(dcols, (B, H, W, C), k, stride, pad, Ho, Wo)
    return dx.transpose(0, 3, 1, 2)


def conv2d_backward_weight(g: np.ndarray, cols: np.ndarray, w_shape) -> np.ndarray:
    O, C, k, _ = w_shape
    gm = g.transpose(0, 2, 3, 1).reshape(-1, O)
    dw = gm.T @ cols
    return np.ascontiguousarray(dw.reshape(O, k, k, C).transpose(0, 3, 1, 2))


def deconv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size - 1) * stride - 2 * pad + k


def deconv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int, pad: int) -> np.ndarray:
    """Transposed convolution; ``w`` has shape (in_ch, out_ch, k, k)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"deconv2d: input {x.shape} does not match weight {w.shape}")
    B, Cin, H, W = x.shape
    _, Cout, k, _ = w.shape
    Ho, Wo = deconv_output_size(H, k, stride, pad), deconv_output_size(W, k, stride, pad)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"deconv2d: non-positive output size for input {x.shape[2:]}")
    xm = x.transpose(0, 2, 3, 1).reshape(B * H * W, Cin)
    cols = xm @ _wmat(w)
    y = _col2im(cols, (B, Ho, Wo, Cout), k, stride, pad, H, W)
    if b is not None:
        y = y + b
    return y.transpose(0, 3, 1, 2)


# ---------------------------------------------------------------------------
# differentiable ops
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    y, cols = conv2d_forward(x.data, weight.data, None if bias is None else bias.data, stride, pad)
    xs, ws = x.shape, weight.shape

    def bw(g):
        dx = conv2d_backward_input(g, weight.data, xs, stride, pad) if x.requires_grad else None
        dw = conv2d_backward_weight(g, cols, ws) if weight.requires_grad else None
        db = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return dx, dw, db

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(y, parents, bw)


def deconv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 2, pad: int = 1) -> Tensor:
    y = deconv2d_forward(x.data, weight.data, None if bias is None else bias.data, stride, pad)
    k = weight.shape[2]

    def bw(g):
        # deconv is conv's input-adjoint, so its adjoint is the conv itself
        gcols, _, _ = _im2col(g.transpose(0, 2, 3, 1), k, stride, pad)
        B, Cin, H, W = x.shape
        dx = dw = db = None
        if x.requires_grad:
            dx = (gcols @ _wmat(weight.data).T).reshape(B, H, W, Cin).transpose(0, 3, 1, 2)
        if weight.requires_grad:
            xm = x.data.transpose(0, 2, 3, 1).reshape(B * H * W, Cin)
            Cout = weight.shape[1]
            dw = (xm.T @ gcols).reshape(Cin, k, k, Cout).transpose(0, 3, 1, 2)
            dw = np.ascontiguousarray(dw)
        if bias is not None and bias.requires_grad:
            db = g.sum(axis=(0, 2, 3))
        return dx, dw, db

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(y, parents, bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for x of shape (B, n) and weight (m, n)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    y = xd @ wd.T
    if bias is not None:
        y = y + bias.data

    def bw(g):
        db = g.sum(axis=0) if bias is not None else None
        return g @ wd, g.T @ xd, db

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(y, parents, bw)


@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5
    training: bool = True


def batchnorm2d(x: Tensor, s: BatchNormState) -> Tensor:
    """Per-channel normalization over (B, H, W).

    In training mode the running statistics are blended as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    if x.ndim != 4 or x.shape[1] != s.gamma.shape[0]:
        raise ShapeError(f"batchnorm2d: input {x.shape} does not match {s.gamma.shape[0]} channels")
    xd = x.data
    gamma = s.gamma.data.reshape(1, -1, 1, 1)
    beta = s.beta.data.reshape(1, -1, 1, 1)
    if s.training:
        mean = xd.mean(axis=(0, 2, 3), keepdims=True)
        xc = xd - mean
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + s.eps)
        xhat = xc * inv
        n = xd.shape[0] * xd.shape[2] * xd.shape[3]
        unbiased = var.reshape(-1) * (n / max(n - 1, 1))
        s.running_mean[...] = s.momentum * s.running_mean + (1 - s.momentum) * mean.reshape(-1)
        s.running_var[...] = s.momentum * s.running_var + (1 - s.momentum) * unbiased

        def bw(g):
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dbeta = g.sum(axis=(0, 2, 3))
            gh = g * gamma
            dx = inv * (gh - gh.mean(axis=(0, 2, 3), keepdims=True)
                        - xhat * (gh * xhat).mean(axis=(0, 2, 3), keepdims=True))
            return dx, dgamma, dbeta
    else:
        mean = s.running_mean.reshape(1, -1, 1, 1).astype(xd.dtype)
        inv = (1.0 / np.sqrt(s.running_var.reshape(1, -1, 1, 1) + s.eps)).astype(xd.dtype)
        xhat = (xd - mean) * inv

        def bw(g):
            return g * gamma * inv, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    y = (gamma * xhat + beta).astype(xd.dtype, copy=False)
    return _make(y, (x, s.gamma, s.beta), bw)


@dataclass
class ConvLstmState:
    h: Tensor
    c: Tensor


def conv_lstm_step(x: Tensor, state: ConvLstmState, weights: dict[str, Tensor],
                   biases: dict[str, Tensor]) -> tuple[Tensor, ConvLstmState]:
    """One ConvLSTM step without peepholes.

    ``weights``/``biases`` hold one 3x3 conv per gate under keys i, f, o, g;
    each weight has shape (hidden, in_ch + hidden, 3, 3).
    """
    if x.shape[0] != state.h.shape[0] or x.shape[2:] != state.h.shape[2:]:
        raise ShapeError(f"conv_lstm_step: input {x.shape} does not match state {state.h.shape}")
    hid = state.h.shape[1]
    w = concat([weights[k] for k in "ifog"], axis=0)
    b = concat([biases[k] for k in "ifog"], axis=0)
    z = conv2d(concat([x, state.h], axis=1), w, b, stride=1, pad=1)
    i = sigmoid(take_channels(z, 0, hid))
    f = sigmoid(take_channels(z, hid, 2 * hid))
    o = sigmoid(take_channels(z, 2 * hid, 3 * hid))
    g = tanh(take_channels(z, 3 * hid, 4 * hid))
    c = f * state.c + i * g
    h = o * tanh(c)
    return h, ConvLstmState(h, c)


@dataclass
class SpectralState:
    u: np.ndarray
    n_power_iters: int = 1


def _normalize(v: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    return v / max(float(np.linalg.norm(v)), eps)


def power_iterate(w2d: np.ndarray, u: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray, float]:
    v = _normalize(w2d.T @ u)
    for _ in range(n):
        v = _normalize(w2d.T @ u)
        u = _normalize(w2d @ v)
    sigma = float(u @ w2d @ v)
    return u, v, sigma


def spectral_normalize(weight: Tensor, s: SpectralState, eps: float = 1e-12) -> tuple[Tensor, SpectralState]:
    """Divide ``weight`` by its estimated largest singular value.

    The estimate is treated as a constant in the backward pass.
    """
    w2d = weight.data.reshape(weight.shape[0], -1)
    u, _, sigma = power_iterate(w2d, s.u.astype(w2d.dtype), s.n_power_iters)
    scale = 0.0 if abs(sigma) < eps else 1.0 / sigma
    return weight * scale, SpectralState(u, s.n_power_iters)


def spectral_sigma(weight: np.ndarray, u: np.ndarray) -> float:
    """Singular value estimate ``u^T W v`` for a fixed left vector ``u``."""
    w2d = weight.reshape(weight.shape[0], -1)
    v = _normalize(w2d.T @ u.astype(w2d.dtype))
    return float(u @ w2d @ v)


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

class Module:
    """Minimal parameter container with ordered, dotted names."""

    def __init__(self):
        self.training = True

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def _own_params(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict()

    def _own_buffers(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict()

    def named_parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out = OrderedDict((prefix + k, v) for k, v in self._own_params().items())
        for name, child in self._children():
            out.update(child.named_parameters(f"{prefix}{name}."))
        return out

    def named_buffers(self, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict((prefix + k, v) for k, v in self._own_buffers().items())
        for name, child in self._children():
            out.update(child.named_buffers(f"{prefix}{name}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        """Cast parameters and buffers in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        self._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype):
        for _, child in self._children():
            child._cast_buffers(dtype)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int = 1, pad: int | None = None,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.pad = (k - 1) // 2 if pad is None else pad
        self.weight = Tensor(he_normal(rng, (out_ch, in_ch, k, k), in_ch * k * k), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, np.float32), requires_grad=True)

    def _own_params(self):
        return OrderedDict(weight=self.weight, bias=self.bias)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.pad)


class Deconv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, k: int = 4, stride: int = 2, pad: int = 1,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.stride, self.pad = stride, pad
        # each input pixel spreads over k*k/stride^2 outputs on average
        fan_in = max(in_ch * k * k // (stride * stride), 1)
        self.weight = Tensor(he_normal(rng, (in_ch, out_ch, k, k), fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, np.float32), requires_grad=True)

    def _own_params(self):
        return OrderedDict(weight=self.weight, bias=self.bias)

    def __call__(self, x: Tensor) -> Tensor:
        return deconv2d(x, self.weight, self.bias, self.stride, self.pad)


class BatchNorm2d(Module):
    def __init__(self, ch: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.state = BatchNormState(
            gamma=Tensor(np.ones(ch, np.float32), requires_grad=True),
            beta=Tensor(np.zeros(ch, np.float32), requires_grad=True),
            running_mean=np.zeros(ch, np.float32),
            running_var=np.ones(ch, np.float32),
            momentum=momentum, eps=eps)

    def _own_params(self):
        return OrderedDict(gamma=self.state.gamma, beta=self.state.beta)

    def _own_buffers(self):
        return OrderedDict(running_mean=self.state.running_mean, running_var=self.state.running_var)

    def _cast_buffers(self, dtype):
        self.state.running_mean = self.state.running_mean.astype(dtype)
        self.state.running_var = self.state.running_var.astype(dtype)

    def train(self, mode: bool = True):
        super().train(mode)
        self.state.training = mode
        return self

    def __call__(self, x: Tensor) -> Tensor:
        return batchnorm2d(x, self.state)


class ConvLSTMCell(Module):
    """3x3 ConvLSTM cell; forget-gate bias starts at 1."""

    def __init__(self, in_ch: int, hidden: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.hidden = hidden
        fan_in = (in_ch + hidden) * 9
        self.weights = {k: Tensor(he_normal(rng, (hidden, in_ch + hidden, 3, 3), fan_in), requires_grad=True)
                        for k in "ifog"}
        self.biases = {k: Tensor(np.full(hidden, 1.0 if k == "f" else 0.0, np.float32), requires_grad=True)
                       for k in "ifog"}

    def _own_params(self):
        out = OrderedDict()
        for k in "ifog":
            out[f"w_{k}"] = self.weights[k]
            out[f"b_{k}"] = self.biases[k]
        return out

    def initial_state(self, batch: int, h: int, w: int, dtype=np.float32) -> ConvLstmState:
        z = np.zeros((batch, self.hidden, h, w), dtype=dtype)
        return ConvLstmState(Tensor(z), Tensor(z.copy()))

    def __call__(self, x: Tensor, state: ConvLstmState) -> tuple[Tensor, ConvLstmState]:
        return conv_lstm_step(x, state, self.weights, self.biases)


class SpectralConv2d(Conv2d):
    """Conv2d whose weight is divided by its spectral norm before use.

    The left singular vector ``u`` only advances in ``refresh``; forward
    passes re-estimate sigma from the current weight and stored ``u``.
    """

    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int = 1, pad: int | None = None,
                 rng: np.random.Generator | None = None, n_power_iters: int = 1):
        super().__init__(in_ch, out_ch, k, stride, pad, rng)
        rng = rng or np.random.default_rng(0)
        u = rng.standard_normal(out_ch)
        self.spectral = SpectralState(_normalize(u).astype(np.float32), n_power_iters)

    def _own_buffers(self):
        return OrderedDict(sn_u=self.spectral.u)

    def _cast_buffers(self, dtype):
        self.spectral.u = self.spectral.u.astype(dtype)

    def refresh(self) -> None:
        _, state = spectral_normalize(self.weight, self.spectral)
        self.spectral = SpectralState(state.u.astype(self.spectral.u.dtype), state.n_power_iters)

    def __call__(self, x: Tensor) -> Tensor:
        sigma = spectral_sigma(self.weight.data, self.spectral.u)
        w = self.weight * (0.0 if abs(sigma) < 1e-12 else 1.0 / sigma)
        return conv2d(x, w, self.bias, self.stride, self.pad)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None, zero: bool = False):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        w = np.zeros((n_out, n_in), np.float32) if zero else he_normal(rng, (n_out, n_in), n_in)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(n_out, np.float32), requires_grad=True)

    def _own_params(self):
        return OrderedDict(weight=self.weight, bias=self.bias)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)
