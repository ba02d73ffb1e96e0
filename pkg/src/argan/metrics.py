"""Balance error rate for detection and CIELAB RMSE for removal."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# sRGB primaries to XYZ, D65 white
SRGB_TO_XYZ = np.array([[0.4124564, 0.3575761, 0.1804375],
                        [0.2126729, 0.7151522, 0.0721750],
                        [0.0193339, 0.1191920, 0.9503041]])
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)
D65_WHITE = np.array([0.95047, 1.0, 1.08883])
_DELTA = 6.0 / 29.0


@dataclass
class BerResult:
    ber: float
    tp: int
    tn: int
    n_pos: int
    n_neg: int
    empty_class: bool = False

    def __float__(self) -> float:
        return self.ber


def ber(pred_mask: np.ndarray, gt_mask: np.ndarray) -> BerResult:
    """Balance error rate in percent.

    A class absent from the ground truth counts as perfectly classified and
    sets ``empty_class``.
    """
    pred = np.asarray(pred_mask)
    gt = np.asarray(gt_mask)
    if pred.shape != gt.shape:
        raise ValueError(f"ber: mask dimensions differ, {pred.shape} vs {gt.shape}")
    for name, m in (("prediction", pred), ("ground truth", gt)):
        if not np.isin(m, (0, 1)).all():
            raise ValueError(f"ber: {name} mask is not binary")
    p, g = pred == 1, gt == 1
    tp = int(np.count_nonzero(p & g))
    tn = int(np.count_nonzero(~p & ~g))
    n_pos = int(np.count_nonzero(g))
    n_neg = g.size - n_pos
    tpr = tp / n_pos if n_pos else 1.0
    tnr = tn / n_neg if n_neg else 1.0
    value = (1.0 - 0.5 * (tpr + tnr)) * 100.0
    return BerResult(value, tp, tn, n_pos, n_neg, empty_class=not (n_pos and n_neg))


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA ** 3, np.cbrt(t), t / (3 * _DELTA ** 2) + 4.0 / 29.0)


def _lab_finv(f: np.ndarray) -> np.ndarray:
    return np.where(f > _DELTA, f ** 3, 3 * _DELTA ** 2 * (f - 4.0 / 29.0))


def srgb_decode(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def srgb_encode(c: np.ndarray) -> np.ndarray:
    c = np.maximum(c, 0.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1 / 2.4) - 0.055)


def rgb_to_lab(rgb) -> np.ndarray:
    """sRGB in [0, 1] (last axis = 3) to CIELAB under D65. Inputs are clamped."""
    rgb = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    xyz = srgb_decode(rgb) @ SRGB_TO_XYZ.T
    fx, fy, fz = (_lab_f(xyz[..., i] / D65_WHITE[i]) for i in range(3))
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_to_rgb(lab) -> np.ndarray:
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_lab_finv(f) * w for f, w in zip((fx, fy, fz), D65_WHITE)], axis=-1)
    return srgb_encode(xyz @ XYZ_TO_SRGB.T)


def rmse_lab(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None,
             region: str = "all") -> float:
    """RMSE over the selected pixels and all three LAB channels.

    ``region`` picks mask == 1 (shadow), mask == 0 (nonshadow) or every pixel.
    """
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"rmse_lab: image dimensions differ, {pred.shape} vs {gt.shape}")
    if region == "all":
        sel = np.ones(pred.shape[:2], dtype=bool)
    else:
        if mask is None:
            raise ValueError(f"rmse_lab: region {region!r} needs a mask")
        mask = np.asarray(mask)
        if mask.shape != pred.shape[:2]:
            raise ValueError(f"rmse_lab: mask {mask.shape} does not match image {pred.shape}")
        if region == "shadow":
            sel = mask == 1
        elif region == "nonshadow":
            sel = mask == 0
        else:
            raise ValueError(f"unknown region {region!r}")
    if not sel.any():
        raise ValueError(f"rmse_lab: region {region!r} selects no pixels")
    d = rgb_to_lab(pred)[sel] - rgb_to_lab(gt)[sel]
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class MetricReport:
    ber: float = float("nan")
    rmse_shadow: float = float("nan")
    rmse_nonshadow: float = float("nan")
    rmse_all: float = float("nan")
    n_shadow: int = 0
    n_nonshadow: int = 0
    n_images: int = 0
    warnings: list[str] = field(default_factory=list)


def removal_report(pairs, masks) -> MetricReport:
    """Per-image LAB RMSE for shadow / non-shadow / whole image, averaged over images.

    Images whose mask leaves a region empty are skipped for that region.
    """
    s, n, a = [], [], []
    rep = MetricReport()
    for (pred, gt), mask in zip(pairs, masks):
        a.append(rmse_lab(pred, gt))
        n_pos = int(np.count_nonzero(mask == 1))
        n_neg = mask.size - n_pos
        rep.n_shadow += n_pos
        rep.n_nonshadow += n_neg
        if n_pos:
            s.append(rmse_lab(pred, gt, mask, "shadow"))
        if n_neg:
            n.append(rmse_lab(pred, gt, mask, "nonshadow"))
        if not (n_pos and n_neg):
            rep.warnings.append("empty region in at least one mask")
        rep.n_images += 1
    rep.rmse_shadow = float(np.mean(s)) if s else float("nan")
    rep.rmse_nonshadow = float(np.mean(n)) if n else float("nan")
    rep.rmse_all = float(np.mean(a)) if a else float("nan")
    return rep


def detection_report(preds, gts) -> MetricReport:
    """Mean per-image BER."""
    rep = MetricReport()
    vals = []
    for p, g in zip(preds, gts):
        r = ber(p, g)
        vals.append(r.ber)
        if r.empty_class:
            rep.warnings.append("empty class in at least one ground-truth mask")
        rep.n_images += 1
    rep.ber = float(np.mean(vals)) if vals else float("nan")
    return rep
