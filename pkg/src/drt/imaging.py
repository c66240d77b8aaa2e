"""Image I/O, synthetic rain streaks, and PSNR/SSIM quality metrics.

Images are [3, H, W] float tensors in [0, 1]. Files are 8-bit RGB PNG;
loading divides by 255, saving clamps and rounds back to the 256-level
grid, so any tensor already on the grid roundtrips exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.signal import convolve2d

from .tensor import ShapeError, Tensor

__all__ = [
    "ImagePair",
    "RainParams",
    "load_image",
    "save_image",
    "synthesize_rain",
    "psnr",
    "ssim",
    "write_pair_manifest",
    "read_pair_manifest",
]

PSNR_CAP_DB = 100.0


@dataclass
class ImagePair:
    """Aligned clean/degraded [3, H, W] images in [0, 1]."""

    clean: Tensor
    degraded: Tensor
    identifier: str = ""

    def validate(self) -> None:
        if self.clean.shape != self.degraded.shape:
            raise ShapeError(
                f"pair {self.identifier}: clean {tuple(self.clean.shape)} != "
                f"degraded {tuple(self.degraded.shape)}"
            )
        for name, t in (("clean", self.clean), ("degraded", self.degraded)):
            if t.ndim != 3 or t.shape[0] != 3:
                raise ShapeError(f"pair {self.identifier}: {name} must be [3, H, W]")
            if t.data.min() < 0.0 or t.data.max() > 1.0:
                raise ValueError(f"pair {self.identifier}: {name} values outside [0, 1]")


@dataclass(frozen=True)
class RainParams:
    """Streak generator settings; defaults target roughly 64-128 px images."""

    count: tuple[int, int] = (18, 40)
    angle_deg: tuple[float, float] = (-20.0, 20.0)  # from vertical
    length: tuple[float, float] = (8.0, 24.0)
    width: float = 1.0
    intensity: tuple[float, float] = (0.12, 0.45)
    seed: int = 0

    def __post_init__(self):
        if self.length[0] < 1:
            raise ValueError("streak length must be >= 1 pixel")
        if not (0.0 <= self.intensity[0] <= self.intensity[1] <= 1.0):
            raise ValueError("intensity range must lie in [0, 1]")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# ----------------------------------------------------------------------
# file I/O
# ----------------------------------------------------------------------

def load_image(path) -> Tensor:
    """Read an 8-bit raster file into a [3, H, W] tensor in [0, 1]."""
    with Image.open(path) as img:
        if img.mode != "RGB":
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.uint8)
    data = arr.astype(np.float32) / 255.0
    return Tensor(data.transpose(2, 0, 1))


def save_image(path, t) -> None:
    """Write a [3, H, W] tensor as 8-bit RGB PNG (clamped, rounded)."""
    arr = _as_array(t)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"save_image expects [3, H, W], got {tuple(arr.shape)}")
    q = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


# ----------------------------------------------------------------------
# rain synthesis
# ----------------------------------------------------------------------

def _draw_streak(layer: np.ndarray, cx: float, cy: float, angle_rad: float,
                 length: float, width: float, intensity: float) -> None:
    """Add one anti-aliased line segment to the [H, W] rain layer."""
    h, w = layer.shape
    dx = math.sin(angle_rad)  # angle measured from vertical
    dy = math.cos(angle_rad)
    half = length / 2.0
    x0, y0 = cx - half * dx, cy - half * dy
    x1, y1 = cx + half * dx, cy + half * dy

    margin = width / 2.0 + 1.0
    lo_r = max(int(math.floor(min(y0, y1) - margin)), 0)
    hi_r = min(int(math.ceil(max(y0, y1) + margin)) + 1, h)
    lo_c = max(int(math.floor(min(x0, x1) - margin)), 0)
    hi_c = min(int(math.ceil(max(x0, x1) + margin)) + 1, w)
    if lo_r >= hi_r or lo_c >= hi_c:
        return

    ys, xs = np.mgrid[lo_r:hi_r, lo_c:hi_c]
    # distance from each pixel center to the segment
    px = xs - x0
    py = ys - y0
    seg_len2 = (x1 - x0) ** 2 + (y1 - y0) ** 2
    if seg_len2 == 0:
        dist = np.hypot(px, py)
    else:
        t = np.clip((px * (x1 - x0) + py * (y1 - y0)) / seg_len2, 0.0, 1.0)
        dist = np.hypot(px - t * (x1 - x0), py - t * (y1 - y0))
    coverage = np.clip(width / 2.0 + 0.5 - dist, 0.0, 1.0)
    layer[lo_r:hi_r, lo_c:hi_c] += intensity * coverage


def synthesize_rain(clean, params: RainParams) -> ImagePair:
    """Composite additive bright streaks over a clean image.

    degraded = clip(clean + rain, 0, 1); the rain layer is the same on all
    channels, so no pixel ever gets darker. Fully determined by the seed.
    """
    arr = _as_array(clean)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"synthesize_rain expects [3, H, W], got {tuple(arr.shape)}")
    _, h, w = arr.shape
    rng = np.random.Generator(np.random.PCG64(int(params.seed) & 0xFFFFFFFFFFFFFFFF))
    count = int(rng.integers(params.count[0], params.count[1] + 1))
    layer = np.zeros((h, w), dtype=np.float64)
    for _ in range(count):
        cx = rng.uniform(0, w)
        cy = rng.uniform(0, h)
        angle = math.radians(rng.uniform(*params.angle_deg))
        length = rng.uniform(*params.length)
        intensity = rng.uniform(*params.intensity)
        _draw_streak(layer, cx, cy, angle, length, params.width, intensity)
    degraded = np.clip(arr + layer[None, :, :].astype(arr.dtype), 0.0, 1.0)
    pair = ImagePair(
        clean=Tensor(arr.copy()),
        degraded=Tensor(degraded.astype(np.float32, copy=False)),
    )
    return pair


# ----------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------

def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; identical inputs return the 100 dB cap."""
    x = _as_array(a)
    y = _as_array(b)
    if x.shape != y.shape:
        raise ShapeError(f"psnr shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x.astype(np.float64) - y.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(peak * peak / mse))


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _gaussian_kernel() -> np.ndarray:
    r = _SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * _SSIM_SIGMA * _SSIM_SIGMA))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean local structural similarity (Gaussian 11x11 window, sigma 1.5).

    Computed per channel on the valid region and averaged. Raises if the
    image is smaller than the window.
    """
    x = _as_array(a).astype(np.float64)
    y = _as_array(b).astype(np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"ssim shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x = x[None]
        y = y[None]
    if x.ndim != 3:
        raise ShapeError(f"ssim expects [C, H, W] or [H, W], got {x.shape}")
    _, h, w = x.shape
    if h < _SSIM_WINDOW or w < _SSIM_WINDOW:
        raise ShapeError(f"image {h}x{w} smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} SSIM window")

    kernel = _gaussian_kernel()
    c1 = (_SSIM_K1 * peak) ** 2
    c2 = (_SSIM_K2 * peak) ** 2
    vals = []
    for ch in range(x.shape[0]):
        xc, yc = x[ch], y[ch]
        mu_x = convolve2d(xc, kernel, mode="valid")
        mu_y = convolve2d(yc, kernel, mode="valid")
        xx = convolve2d(xc * xc, kernel, mode="valid") - mu_x * mu_x
        yy = convolve2d(yc * yc, kernel, mode="valid") - mu_y * mu_y
        xy = convolve2d(xc * yc, kernel, mode="valid") - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))


# ----------------------------------------------------------------------
# pair manifests
# ----------------------------------------------------------------------

def write_pair_manifest(path, pairs: list[tuple[str, str]]) -> None:
    """One tab-separated (clean, degraded) path pair per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for clean, degraded in pairs:
            fh.write(f"{clean}\t{degraded}\n")


def read_pair_manifest(path) -> list[tuple[Path, Path]]:
    """Read pairs; relative paths resolve against the manifest's directory."""
    base = Path(path).parent
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{i + 1}: expected two tab-separated paths")
            clean, degraded = (Path(p) for p in parts)
            out.append(
                (clean if clean.is_absolute() else base / clean,
                 degraded if degraded.is_absolute() else base / degraded)
            )
    return out
