"""Synthetic shadow scenes, matte derivation, PPM image I/O and the
A/B/C triplet directory layout.

Images in memory are float64 arrays in [0, 1]: (H, W, 3) for colour,
(H, W) for single-channel mattes and masks. On disk they are 8-bit binary
PPM (P6) or PGM (P5) files.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LUMA = np.array([0.299, 0.587, 0.114])
MATTE_FLOOR = 0.05
GT_THRESHOLD = 0.1
PRED_THRESHOLD = 0.5


class ImageFormatError(ValueError):
    def __init__(self, message: str, offset: int | None = None, path: str | os.PathLike | None = None):
        where = f" at byte {offset}" if offset is not None else ""
        src = f"{path}: " if path is not None else ""
        super().__init__(f"{src}{message}{where}")
        self.offset = offset


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# deterministic random numbers
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


class Rng:
    """xorshift64* generator, seeded through one splitmix64 round.

    Produces the same stream on every platform for a given seed.
    """

    def __init__(self, seed: int):
        z = (seed + 0x9E3779B97F4A7C15) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
        self.state = z or 0x2545F4914F6CDD1D

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * ((self.next_u64() >> 11) * (1.0 / (1 << 53)))

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi] inclusive."""
        return lo + self.next_u64() % (hi - lo + 1)


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

@dataclass
class SampleTriplet:
    shadow: np.ndarray
    matte: np.ndarray | None = None
    free: np.ndarray | None = None
    name: str = ""
    alpha: float | None = None
    hard_mask: np.ndarray | None = None

    @property
    def labeled(self) -> bool:
        return self.matte is not None and self.free is not None


def _value_noise(rng: Rng, size: int, grid: int = 5) -> np.ndarray:
    coarse = np.array([[[rng.uniform(0.3, 0.9) for _ in range(3)] for _ in range(grid)]
                       for _ in range(grid)])
    t = np.linspace(0.0, grid - 1.0, size)
    i0 = np.minimum(np.floor(t).astype(int), grid - 2)
    f = (t - i0)[:, None]
    rows = coarse[i0] * (1 - f)[:, :, None] + coarse[i0 + 1] * f[:, :, None]   # (size, grid, 3)
    fc = (t - i0)[None, :, None]
    return rows[:, i0] * (1 - fc) + rows[:, i0 + 1] * fc


def _polygon_mask(rng: Rng, size: int) -> np.ndarray:
    n = rng.randint(3, 6)
    cx, cy = rng.uniform(0.3, 0.7) * size, rng.uniform(0.3, 0.7) * size
    radius = rng.uniform(0.25, 0.5) * size
    start = rng.uniform(0.0, 2 * math.pi)
    # sorted angles on a circle give a convex polygon
    angles = sorted(start + rng.uniform(0.0, 2 * math.pi) for _ in range(n))
    pts = [(cx + radius * math.cos(a), cy + radius * math.sin(a)) for a in angles]
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    inside = np.ones((size, size), dtype=bool)
    for (x0, y0), (x1, y1) in zip(pts, pts[1:] + pts[:1]):
        inside &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0
    return inside


def _ellipse_mask(rng: Rng, size: int) -> np.ndarray:
    cx, cy = rng.uniform(0.25, 0.75) * size, rng.uniform(0.25, 0.75) * size
    rx, ry = rng.uniform(0.15, 0.45) * size, rng.uniform(0.15, 0.45) * size
    theta = rng.uniform(0.0, math.pi)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dx, dy = xx - cx, yy - cy
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def box_blur(img: np.ndarray, k: int = 5, passes: int = 3) -> np.ndarray:
    """Repeated k x k box filter with zero padding.

    Direct window sums rather than cumulative sums, so all-zero and
    all-one neighbourhoods stay exactly 0 and 1.
    """
    r = k // 2
    out = img.astype(np.float64)
    for _ in range(passes):
        p = np.pad(out, r)
        rows = sliding_window_view(p, k, axis=0).sum(axis=-1)
        out = sliding_window_view(rows, k, axis=1).sum(axis=-1) / (k * k)
    return out


def gen_synthetic_sample(seed: int, size: int, depth: int = 5) -> SampleTriplet:
    """Deterministic shadow scene: shadow image, soft matte, shadow-free image.

    The shadow-free image is smooth value noise plus 1-3 flat rectangles. A
    convex polygon or ellipse covering 10-40% of the pixels is blurred into
    a soft matte, and the shadow image darkens the free image by a factor
    alpha in [0.3, 0.7] where the matte is 1.
    """
    if size < 2 ** depth or size % 2 ** depth:
        raise ValueError(f"size {size} must be a positive multiple of {2 ** depth} (2**depth)")
    rng = Rng(seed)
    free = _value_noise(rng, size)
    for _ in range(rng.randint(1, 3)):
        w, h = rng.randint(size // 8, size // 3), rng.randint(size // 8, size // 3)
        x0, y0 = rng.randint(0, size - w), rng.randint(0, size - h)
        free[y0:y0 + h, x0:x0 + w] = [rng.uniform(0.2, 1.0) for _ in range(3)]

    hard = None
    for _ in range(200):
        cand = _polygon_mask(rng, size) if rng.uniform() < 0.5 else _ellipse_mask(rng, size)
        if 0.10 <= cand.mean() <= 0.40:
            hard = cand
            break
    if hard is None:
        raise RuntimeError(f"seed {seed}: no shadow shape with 10-40% coverage found")

    matte = box_blur(hard.astype(np.float64))
    matte /= matte.max()
    alpha = rng.uniform(0.3, 0.7)
    shadow = free * (1.0 - (1.0 - alpha) * matte)[:, :, None]
    return SampleTriplet(shadow=shadow, matte=matte, free=free, name=f"{seed:06d}.ppm",
                         alpha=alpha, hard_mask=hard)


def luminance(img: np.ndarray) -> np.ndarray:
    return img @ LUMA


def derive_matte(shadow: np.ndarray, free: np.ndarray) -> np.ndarray:
    """Relative luminance drop ``(lum(F) - lum(I)) / max(lum(F), 0.05)`` in [0, 1]."""
    if shadow.shape != free.shape:
        raise ValueError(f"derive_matte: dimensions differ, {shadow.shape} vs {free.shape}")
    lf, li = luminance(free), luminance(shadow)
    return np.clip((lf - li) / np.maximum(lf, MATTE_FLOOR), 0.0, 1.0)


def binarize_mask(matte: np.ndarray, tau: float = PRED_THRESHOLD) -> np.ndarray:
    if not 0.0 < tau < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {tau}")
    return (np.asarray(matte) >= tau).astype(np.float64)


# ---------------------------------------------------------------------------
# PPM / PGM
# ---------------------------------------------------------------------------

def _read_token(buf: bytes, pos: int, path) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif buf[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("unexpected end of header", start, path)
    return buf[start:pos], pos


def decode_pnm(buf: bytes, path=None) -> np.ndarray:
    """Decode a binary P6/P5 image with maxval 255 into a uint8 array."""
    magic = buf[:2]
    if magic not in (b"P6", b"P5"):
        raise ImageFormatError(f"bad magic {magic!r}, expected P6 or P5", 0, path)
    pos = 2
    fields = []
    for label in ("width", "height", "maxval"):
        tok, pos = _read_token(buf, pos, path)
        if not tok.isdigit():
            raise ImageFormatError(f"bad {label} field {tok!r}", pos - len(tok), path)
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"maxval {maxval} unsupported, expected 255", pos, path)
    if w <= 0 or h <= 0:
        raise ImageFormatError(f"non-positive dimensions {w}x{h}", 2, path)
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ImageFormatError("missing whitespace after maxval", pos, path)
    pos += 1
    ch = 3 if magic == b"P6" else 1
    need = w * h * ch
    have = len(buf) - pos
    if have < need:
        raise ImageFormatError(f"truncated payload: expected {need} bytes, found {have}",
                               len(buf), path)
    if have > need:
        raise ImageFormatError(f"{have - need} trailing bytes after payload", pos + need, path)
    arr = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return arr.reshape(h, w, 3) if ch == 3 else arr.reshape(h, w)


def encode_pnm(img: np.ndarray) -> bytes:
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    elif arr.ndim == 2:
        magic = b"P5"
    else:
        raise ValueError(f"cannot encode image of shape {arr.shape}")
    h, w = arr.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()


def to_uint8(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def quantize(img: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid, as a write/read round trip would."""
    return to_uint8(img).astype(np.float64) / 255.0


def read_image(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_pnm(buf, path).astype(np.float64) / 255.0


def write_image(path: str | os.PathLike, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pnm(img))


# ---------------------------------------------------------------------------
# dataset layout
# ---------------------------------------------------------------------------

def _ppm_names(d: Path) -> list[str]:
    return sorted(p.name for p in d.iterdir() if p.suffix in (".ppm", ".pgm") and p.is_file())


def load_dataset(root: str | os.PathLike, kind: str = "labeled") -> list[SampleTriplet]:
    """Load ``root/A|B|C`` triplets (labeled) or ``root/U`` shadow images.

    For unlabeled data a flat directory of images is accepted as well.
    """
    root = Path(root)
    if kind == "unlabeled":
        d = root / "U" if (root / "U").is_dir() else root
        if not d.is_dir():
            raise DatasetError(f"unlabeled directory {d} not found")
        return [SampleTriplet(shadow=read_image(d / n), name=n) for n in _ppm_names(d)]
    if kind != "labeled":
        raise ValueError(f"unknown dataset kind {kind!r}")
    dirs = {k: root / k for k in "ABC"}
    for k, d in dirs.items():
        if not d.is_dir():
            raise DatasetError(f"missing directory {d} (labeled layout needs A/, B/, C/)")
    names = {k: _ppm_names(d) for k, d in dirs.items()}
    out = []
    for k in "BC":
        extra = sorted(set(names[k]) - set(names["A"]))
        if extra:
            raise DatasetError(f"{extra[0]}: present in {k}/ but missing from A/")
    for n in names["A"]:
        for k in "BC":
            if not (dirs[k] / n).is_file():
                raise DatasetError(f"{n}: missing counterpart {k}/{n}")
        shadow = read_image(dirs["A"] / n)
        matte = read_image(dirs["B"] / n)
        free = read_image(dirs["C"] / n)
        if matte.ndim == 3:
            matte = matte.mean(axis=2)
        if shadow.shape != free.shape or shadow.shape[:2] != matte.shape:
            raise DatasetError(f"{n}: dimension mismatch across A/B/C "
                               f"({shadow.shape}, {matte.shape}, {free.shape})")
        out.append(SampleTriplet(shadow=shadow, matte=matte, free=free, name=n))
    return out


def write_triplet(root: str | os.PathLike, t: SampleTriplet) -> None:
    root = Path(root)
    if t.labeled:
        for k, img in (("A", t.shadow), ("B", t.matte), ("C", t.free)):
            (root / k).mkdir(parents=True, exist_ok=True)
            write_image(root / k / t.name, img)
    else:
        (root / "U").mkdir(parents=True, exist_ok=True)
        write_image(root / "U" / t.name, t.shadow)


def to_nchw(images: list[np.ndarray], dtype=np.float32) -> np.ndarray:
    """Stack (H, W, 3) or (H, W) images into an NCHW batch."""
    arr = np.stack(images)
    if arr.ndim == 3:
        arr = arr[:, :, :, None]
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2)).astype(dtype)


def from_nchw(batch: np.ndarray) -> list[np.ndarray]:
    arr = np.asarray(batch, dtype=np.float64).transpose(0, 2, 3, 1)
    return [a[:, :, 0] if a.shape[2] == 1 else a for a in arr]
