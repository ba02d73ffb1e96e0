import sys

import numpy as np
import pytest
from threadpoolctl import threadpool_limits


@pytest.fixture(autouse=True, scope="session")
def single_thread_blas():
    with threadpool_limits(limits=1):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def naive_conv2d(x, w, b, stride, pad):
    """Direct loop over every output pixel; the reference for the im2col path."""
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
    xp[:, :, pad:pad + H, pad:pad + W] = x
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    y = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0 if b is None else b[o]
                    for c in range(C):
                        for u in range(k):
                            for v in range(k):
                                acc += xp[n, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    y[n, o, i, j] = acc
    return y


def naive_deconv2d(x, w, b, stride, pad):
    """Scatter form of the transposed convolution; weight is (in, out, k, k)."""
    B, C, H, W = x.shape
    _, O, k, _ = w.shape
    Hf = (H - 1) * stride + k
    Wf = (W - 1) * stride + k
    full = np.zeros((B, O, Hf, Wf))
    for n in range(B):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    full[n, :, i * stride:i * stride + k, j * stride:j * stride + k] += x[n, c, i, j] * w[c]
    y = full[:, :, pad:Hf - pad, pad:Wf - pad]
    if b is not None:
        y = y + b.reshape(1, -1, 1, 1)
    return y


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
