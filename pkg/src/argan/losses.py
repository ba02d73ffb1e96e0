"""Training objectives: weighted attention loss, removal accuracy and
perceptual losses, and the (semi-)supervised adversarial losses."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .layers import LEAKY_SLOPE, conv2d, he_normal
from .tensor import ShapeError, Tensor, clamp, leaky_relu, log, mul, reduce, square, sub

BETA_BASE = 0.7
PROB_CLAMP = 1e-7


def beta_weight(i: int, n: int) -> float:
    """Weight of progressive step ``i`` (1-based) out of ``n``: 0.7**(n - i + 1)."""
    if not 1 <= i <= n:
        raise ValueError(f"step index {i} outside 1..{n}")
    return BETA_BASE ** (n - i + 1)


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes differ, {a.shape} vs {b.shape}")
    return reduce(square(sub(a, b)), "mean")


def loss_det(attention: Sequence[Tensor], matte: Tensor) -> Tensor:
    n = len(attention)
    total = None
    for i, a in enumerate(attention, start=1):
        term = mul(mse(a, matte), beta_weight(i, n))
        total = term if total is None else total + term
    return total


class FeatureExtractor:
    """Frozen conv stack used for the perceptual loss.

    Default weights are three 3x3/stride-2 convs (16, 32, 64 channels) drawn
    from ``numpy.random.default_rng(seed)``. Gradients reach the input but
    the weights never receive any.
    """

    def __init__(self, seed: int = 1234, channels: Sequence[int] = (16, 32, 64),
                 weights: Sequence[tuple[np.ndarray, np.ndarray]] | None = None):
        if weights is None:
            rng = np.random.default_rng(seed)
            weights, prev = [], 3
            for c in channels:
                weights.append((he_normal(rng, (c, prev, 3, 3), prev * 9), np.zeros(c, np.float32)))
                prev = c
        self.layers = [(Tensor(w), Tensor(b)) for w, b in weights]

    @classmethod
    def load(cls, path: str | Path) -> "FeatureExtractor":
        """Load external weights from an ``.npz`` holding w0, b0, w1, b1, ..."""
        with np.load(path) as z:
            n = len([k for k in z.files if k.startswith("w")])
            weights = [(z[f"w{i}"].astype(np.float32), z[f"b{i}"].astype(np.float32)) for i in range(n)]
        return cls(weights=weights)

    def astype(self, dtype) -> "FeatureExtractor":
        self.layers = [(Tensor(w.data.astype(dtype)), Tensor(b.data.astype(dtype))) for w, b in self.layers]
        return self

    def __call__(self, x: Tensor) -> Tensor:
        for w, b in self.layers:
            if w.dtype != x.dtype:
                w, b = Tensor(w.data.astype(x.dtype)), Tensor(b.data.astype(x.dtype))
            x = leaky_relu(conv2d(x, w, b, stride=2, pad=1), LEAKY_SLOPE)
        return x


def loss_rem(outputs: Sequence[Tensor], free: Tensor, fx: FeatureExtractor) -> tuple[Tensor, Tensor]:
    """Returns (beta-weighted pixel MSE, unweighted feature MSE) summed over steps."""
    n = len(outputs)
    target_feat = fx(free)
    pix = per = None
    for i, o in enumerate(outputs, start=1):
        p = mul(mse(o, free), beta_weight(i, n))
        f = mse(fx(o), target_feat)
        pix = p if pix is None else pix + p
        per = f if per is None else per + f
    return pix, per


def _mean_log(p: Tensor) -> Tensor:
    return reduce(log(clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)), "mean")


def _mean_log1m(p: Tensor) -> Tensor:
    return reduce(log(clamp(1.0 - p, PROB_CLAMP, 1.0 - PROB_CLAMP)), "mean")


def loss_adv(d_real: Tensor, d_fake_sup: Tensor, d_fake_unsup: Tensor | None = None,
             lam: float = 0.7) -> tuple[Tensor, Tensor]:
    """Discriminator and generator adversarial losses.

    Without an unlabeled batch the weight on the labeled term is 1. The
    generator side uses the non-saturating ``-log D(G(I))`` form.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    sup_w = 1.0 if d_fake_unsup is None else lam
    d_obj = mul(_mean_log(d_real) + _mean_log1m(d_fake_sup), sup_w)
    g_obj = mul(_mean_log(d_fake_sup), sup_w)
    if d_fake_unsup is not None:
        d_obj = d_obj + mul(_mean_log1m(d_fake_unsup), 1.0 - lam)
        g_obj = g_obj + mul(_mean_log(d_fake_unsup), 1.0 - lam)
    return mul(d_obj, -1.0), mul(g_obj, -1.0)


@dataclass
class LossBreakdown:
    l_det: Tensor
    l_rem_mse: Tensor
    l_rem_per: Tensor
    l_adv_g: Tensor
    l_adv_d: Tensor | None = None

    def as_floats(self) -> dict[str, float]:
        out = {k: float(getattr(self, k).data) for k in ("l_det", "l_rem_mse", "l_rem_per", "l_adv_g")}
        out["l_adv_d"] = float(self.l_adv_d.data) if self.l_adv_d is not None else float("nan")
        out["l_total"] = float(loss_total(self).data)
        return out


def loss_total(parts: LossBreakdown) -> Tensor:
    """Generator objective; the discriminator loss stays separate."""
    return parts.l_det + parts.l_rem_mse + parts.l_rem_per + parts.l_adv_g
