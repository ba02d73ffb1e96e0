"""Oracle battery run by ``argan selfcheck``.

Each check compares the engine against an independent reference: central
differences, a direct convolution loop, the transpose identity, an SVD and
the inverse colour transform.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers as L
from . import tensor as T
from .losses import FeatureExtractor, loss_adv, loss_det, loss_rem, mse
from .metrics import ber, lab_to_rgb, rgb_to_lab

GRAD_TOL = 1e-4
CONV_TOL = 1e-12
ADJOINT_TOL = 1e-10
SIGMA_TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tol: float
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} value={self.value:.3e} tol={self.tol:.0e} ({self.seconds:.2f}s)"


def naive_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int, pad: int) -> np.ndarray:
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    y = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    patch = xp[n, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    y[n, o, i, j] = np.sum(patch * w[o]) + (b[o] if b is not None else 0.0)
    return y


def _t(rng, *shape, scale=1.0) -> T.Tensor:
    return T.Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _bn_state(rng, ch: int) -> L.BatchNormState:
    return L.BatchNormState(_t(rng, ch), _t(rng, ch), np.zeros(ch), np.ones(ch))


def gradient_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[T.Tensor]]]:
    """Scalar-valued float64 test functions for every differentiable op."""
    probe = rng.standard_normal((2, 3, 5, 5))
    fx = FeatureExtractor(seed=int(rng.integers(1 << 31))).astype(np.float64)

    def wsum(y: T.Tensor) -> T.Tensor:
        p = np.resize(probe.reshape(-1), y.size).reshape(y.shape)
        return T.reduce(T.mul(y, T.Tensor(p)), "sum")

    bn = _bn_state(rng, 3)
    lstm_w = {k: _t(rng, 2, 4, 3, 3, scale=0.3) for k in "ifog"}
    lstm_b = {k: _t(rng, 2) for k in "ifog"}
    h0, c0 = _t(rng, 1, 2, 4, 4), _t(rng, 1, 2, 4, 4)
    # keep clamp/leaky inputs away from kinks so central differences are valid
    away = rng.uniform(0.1, 0.4, (2, 3)) * rng.choice([-1, 1], (2, 3))
    pos = T.Tensor(rng.uniform(0.5, 2.0, (2, 3)), requires_grad=True)
    probs = T.Tensor(rng.uniform(0.1, 0.9, (4, 1)), requires_grad=True)
    return {
        "add": (lambda a, b: wsum(T.add(a, b)), [_t(rng, 2, 3, 2, 2), _t(rng, 2, 1, 2, 2)]),
        "sub": (lambda a, b: wsum(T.sub(a, b)), [_t(rng, 2, 3, 2, 2), _t(rng, 2, 3, 2, 2)]),
        "mul": (lambda a, b: wsum(T.mul(a, b)), [_t(rng, 2, 1, 2, 2), _t(rng, 2, 3, 2, 2)]),
        "square": (lambda a: wsum(T.square(a)), [_t(rng, 2, 3)]),
        "log": (lambda a: wsum(T.log(a)), [pos]),
        "clamp": (lambda a: wsum(T.clamp(a, -0.25, 0.25)), [T.Tensor(away * 1.5, requires_grad=True)]),
        "sigmoid": (lambda a: wsum(T.sigmoid(a)), [_t(rng, 2, 3, 2)]),
        "tanh": (lambda a: wsum(T.tanh(a)), [_t(rng, 2, 3, 2)]),
        "leaky_relu": (lambda a: wsum(T.leaky_relu(a)), [T.Tensor(away, requires_grad=True)]),
        "matmul": (lambda a, b: wsum(T.matmul(a, b)), [_t(rng, 3, 4), _t(rng, 4, 2)]),
        "reduce_sum": (lambda a: T.reduce(T.square(a), "sum"), [_t(rng, 2, 3)]),
        "reduce_mean": (lambda a: T.reduce(T.square(a), "mean"), [_t(rng, 2, 3)]),
        "concat": (lambda a, b: wsum(T.concat([a, b], 1)), [_t(rng, 1, 2, 2, 2), _t(rng, 1, 1, 2, 2)]),
        "conv2d": (lambda x, w, b: wsum(L.conv2d(x, w, b, 2, 1)),
                   [_t(rng, 2, 2, 5, 5), _t(rng, 3, 2, 3, 3), _t(rng, 3)]),
        "deconv2d": (lambda x, w, b: wsum(L.deconv2d(x, w, b, 2, 1)),
                     [_t(rng, 1, 2, 3, 3), _t(rng, 2, 3, 4, 4), _t(rng, 3)]),
        "linear": (lambda x, w, b: wsum(L.linear(x, w, b)), [_t(rng, 3, 4), _t(rng, 2, 4), _t(rng, 2)]),
        "batchnorm": (lambda x, g, b: wsum(L.batchnorm2d(x, L.BatchNormState(g, b, bn.running_mean.copy(),
                                                                               bn.running_var.copy()))),
                      [_t(rng, 2, 3, 2, 2), bn.gamma, bn.beta]),
        "convlstm": (lambda x, h, c, wi: wsum(L.conv_lstm_step(x, L.ConvLstmState(h, c),
                                                               {**lstm_w, "i": wi}, lstm_b)[0]),
                     [_t(rng, 1, 2, 4, 4), h0, c0, lstm_w["i"]]),
        "loss_det": (lambda a1, a2: loss_det([T.sigmoid(a1), T.sigmoid(a2)], T.Tensor(rng_fixed(1, 1, 3, 3))),
                     [_t(rng, 1, 1, 3, 3), _t(rng, 1, 1, 3, 3)]),
        "loss_rem": (lambda o: sum(loss_rem([T.sigmoid(o)], T.Tensor(rng_fixed(1, 3, 4, 4)), fx), T.Tensor(0.0)),
                     [_t(rng, 1, 3, 4, 4)]),
        "loss_adv": (lambda r, f: sum(loss_adv(r, f), T.Tensor(0.0)), [probs, T.Tensor(rng.uniform(0.1, 0.9, (4, 1)),
                                                                                   requires_grad=True)]),
        "mse": (lambda a, b: mse(a, b), [_t(rng, 2, 3), _t(rng, 2, 3)]),
    }


def rng_fixed(*shape) -> np.ndarray:
    return np.random.default_rng(7).uniform(0, 1, shape)


def check_gradients(seed: int = 0) -> list[CheckResult]:
    out = []
    for name, (f, inputs) in gradient_cases(np.random.default_rng(seed)).items():
        t0 = time.perf_counter()
        err = T.grad_check(f, *inputs)
        out.append(CheckResult(f"grad:{name}", err <= GRAD_TOL, err, GRAD_TOL, time.perf_counter() - t0))
    return out


def check_conv_naive(seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in (3, 4):
        for stride in (1, 2):
            for pad in (0, 1):
                x = rng.standard_normal((2, 3, 8, 8))
                w = rng.standard_normal((4, 3, k, k))
                b = rng.standard_normal(4)
                y, _ = L.conv2d_forward(x, w, b, stride, pad)
                worst = max(worst, float(np.max(np.abs(y - naive_conv2d(x, w, b, stride, pad)))))
    return CheckResult("conv2d_vs_naive", worst <= CONV_TOL, worst, CONV_TOL, time.perf_counter() - t0)


def check_deconv_adjoint(seed: int = 0) -> CheckResult:
    """<conv(x), y> == <x, deconv(y)> with the same weight array."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, stride, pad, size in ((4, 2, 1, 8), (3, 2, 1, 7), (3, 1, 1, 6), (4, 2, 0, 10)):
        x = rng.standard_normal((2, 3, size, size))
        w = rng.standard_normal((5, 3, k, k))
        y_shape = L.conv2d_forward(x, w, None, stride, pad)[0].shape
        y = rng.standard_normal(y_shape)
        lhs = float(np.sum(L.conv2d_forward(x, w, None, stride, pad)[0] * y))
        back = L.deconv2d_forward(y, w, None, stride, pad)
        rhs = float(np.sum(x * back))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-30))
    return CheckResult("deconv_adjoint", worst <= ADJOINT_TOL, worst, ADJOINT_TOL, time.perf_counter() - t0)


def check_spectral_svd(seed: int = 0, trials: int = 5) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        w = rng.standard_normal((64, 64))
        s = L.SpectralState(L._normalize(rng.standard_normal(64)), n_power_iters=1000)
        _, state = L.spectral_normalize(T.Tensor(w), s)
        sigma = L.spectral_sigma(w, state.u)
        ref = np.linalg.svd(w, compute_uv=False)[0]
        worst = max(worst, abs(sigma - ref) / ref)
    return CheckResult("spectral_norm_vs_svd", worst <= SIGMA_TOL, worst, SIGMA_TOL, time.perf_counter() - t0)


def check_lab_roundtrip() -> CheckResult:
    t0 = time.perf_counter()
    gray = np.repeat((np.arange(256) / 255.0)[:, None], 3, axis=1)
    err = float(np.max(np.abs(lab_to_rgb(rgb_to_lab(gray)) - gray)))
    tol = 0.5 / 255
    return CheckResult("lab_roundtrip", err <= tol, err, tol, time.perf_counter() - t0)


def check_ber_cases() -> CheckResult:
    t0 = time.perf_counter()
    gt = np.array([[1, 1], [0, 0]])
    got = [ber(gt, gt).ber, ber(np.ones_like(gt), gt).ber, ber(np.array([[1, 0], [0, 0]]), gt).ber]
    err = float(np.max(np.abs(np.array(got) - [0.0, 50.0, 25.0])))
    return CheckResult("ber_unit_cases", err == 0.0, err, 0.0, time.perf_counter() - t0)


def run_all(seed: int = 0) -> list[CheckResult]:
    results = check_gradients(seed)
    results += [check_conv_naive(seed), check_deconv_adjoint(seed), check_spectral_svd(seed),
                check_lab_roundtrip(), check_ber_cases()]
    return results
