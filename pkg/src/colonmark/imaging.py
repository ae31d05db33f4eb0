"""Frame preprocessing: dark-border auto-crop, adaptive gamma, bilinear resize.

Images are ``float64`` arrays of shape (H, W, 3) with values in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from .errors import DegenerateImage, RectOutOfBounds

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

# adaptive gamma parameters
TAU = 3.0
SIGMA_MIN = 1e-3
GAMMA_MIN = 0.1
GAMMA_MAX = 10.0


class CropRect(NamedTuple):
    x0: int
    y0: int
    w: int
    h: int


class LuminanceStats(NamedTuple):
    mu: float
    sigma: float


@dataclass(frozen=True)
class PreprocessConfig:
    dark_threshold: float = 0.05
    target_size: tuple[int, int] = (224, 224)  # (width, height)
    gamma: bool = True

    def to_dict(self) -> dict:
        return {"dark_threshold": self.dark_threshold, "target_size": list(self.target_size),
                "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessConfig":
        unknown = set(d) - {"dark_threshold", "target_size", "gamma"}
        if unknown:
            raise ValueError(f"unknown preprocess keys: {sorted(unknown)}")
        kw = dict(d)
        if "target_size" in kw:
            ts = kw["target_size"]
            kw["target_size"] = (int(ts), int(ts)) if isinstance(ts, int) else tuple(int(v) for v in ts)
        return cls(**kw)


def validate_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")
    return img


def luminance(img: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma, shape (H, W)."""
    return img @ LUMA_WEIGHTS


def luminance_stats(img: np.ndarray) -> LuminanceStats:
    lum = luminance(validate_image(img))
    return LuminanceStats(float(lum.mean()), float(lum.std()))


def detect_border_crop(img: np.ndarray, dark_threshold: float = 0.05) -> CropRect:
    """Smallest rectangle holding every pixel whose luminance exceeds ``dark_threshold``."""
    if not 0.0 < dark_threshold < 1.0:
        raise ValueError(f"dark_threshold must be in (0, 1), got {dark_threshold}")
    bright = luminance(validate_image(img)) > dark_threshold
    rows = np.flatnonzero(bright.any(axis=1))
    cols = np.flatnonzero(bright.any(axis=0))
    if rows.size == 0:
        raise DegenerateImage(f"no pixel brighter than {dark_threshold}")
    return CropRect(int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


def apply_crop(img: np.ndarray, rect: CropRect) -> np.ndarray:
    img = validate_image(img)
    h, w = img.shape[:2]
    x0, y0, rw, rh = rect
    if rw < 1 or rh < 1 or x0 < 0 or y0 < 0 or x0 + rw > w or y0 + rh > h:
        raise RectOutOfBounds(f"{tuple(rect)} does not fit a {w}x{h} image")
    return img[y0:y0 + rh, x0:x0 + rw].copy()


def gamma_parameters(stats: LuminanceStats) -> float:
    """Exponent chosen from the luminance statistics (clamped)."""
    sigma = max(stats.sigma, SIGMA_MIN)
    if 4.0 * sigma <= 1.0 / TAU:
        gamma = -math.log2(sigma)
    else:
        gamma = math.exp((1.0 - (stats.mu + sigma)) / 2.0)
    return min(max(gamma, GAMMA_MIN), GAMMA_MAX)


def adaptive_gamma_correct(img: np.ndarray) -> np.ndarray:
    """Brightness normalization with an exponent picked from the image's own statistics.

    Low-contrast images (4 sigma <= 1/tau, tau = 3) get ``gamma = -log2(sigma)``,
    the rest ``gamma = exp((1 - (mu + sigma)) / 2)``. Bright images
    (mu >= 0.5) map ``v -> v**gamma``; dark ones use the mean-scaled transfer
    ``v**gamma / (v**gamma + (1 - v**gamma) * mu**gamma)``.
    """
    img = validate_image(img)
    stats = luminance_stats(img)
    gamma = gamma_parameters(stats)
    vg = np.power(img, gamma)
    if stats.mu >= 0.5:
        out = vg
    else:
        k = stats.mu ** gamma
        denom = vg + (1.0 - vg) * k
        # denom is 0 only where v**gamma and mu**gamma both vanish
        out = np.divide(vg, denom, out=np.zeros_like(vg), where=denom > 0)
    return np.clip(out, 0.0, 1.0)


def _axis_weights(n_in: int, n_out: int):
    if n_out == 1:
        pos = np.array([(n_in - 1) / 2.0])
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, pos - i0


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Corner-aligned bilinear resize; a single output sample sits at the input center."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be positive, got {out_w}x{out_h}")
    img = validate_image(img)
    h, w = img.shape[:2]
    if (w, h) == (out_w, out_h):
        return img.copy()
    r0, r1, fy = _axis_weights(h, out_h)
    c0, c1, fx = _axis_weights(w, out_w)
    top = img[r0]
    rows = top + (img[r1] - top) * fy[:, None, None]
    left = rows[:, c0]
    out = left + (rows[:, c1] - left) * fx[None, :, None]
    return np.clip(out, 0.0, 1.0)


def preprocess(img: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """crop -> gamma -> resize to ``cfg.target_size``."""
    out = apply_crop(img, detect_border_crop(img, cfg.dark_threshold))
    if cfg.gamma:
        out = adaptive_gamma_correct(out)
    tw, th = cfg.target_size
    return resize_bilinear(out, tw, th)


# ---- PPM (P6, maxval 255) ----

PathLike = Union[str, Path]


def _read_token(buf: bytes, pos: int):
    while True:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def decode_ppm(data: bytes) -> np.ndarray:
    magic, pos = _read_token(data, 0)
    if magic != b"P6":
        raise ValueError(f"not a binary PPM (magic {magic!r})")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace before raster
    raster = data[pos:pos + w * h * 3]
    if len(raster) != w * h * 3:
        raise ValueError("truncated PPM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3) / 255.0


def encode_ppm(img: np.ndarray) -> bytes:
    img = validate_image(img)
    h, w = img.shape[:2]
    raster = np.rint(img * 255.0).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + raster.tobytes()


def read_image(path: PathLike) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image as PILImage
        with PILImage.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return decode_ppm(path.read_bytes())


def write_image(path: PathLike, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(img))


class FrameLoader:
    """Reads and preprocesses frames relative to ``root``, memoizing results.

    Preprocessing is pure, so each path is processed at most once.
    """

    def __init__(self, root: PathLike, cfg: PreprocessConfig):
        self.root = Path(root)
        self.cfg = cfg
        self._cache: dict[str, np.ndarray] = {}

    def __call__(self, rel_path: str) -> np.ndarray:
        img = self._cache.get(rel_path)
        if img is None:
            path = self.root / rel_path
            try:
                raw = read_image(path)
            except OSError as e:
                raise OSError(e.errno, f"cannot read frame {path}: {e.strerror or e}", str(path)) from e
            img = preprocess(raw, self.cfg).astype(np.float32)
            self._cache[rel_path] = img
        return img

    def batch(self, rel_paths) -> np.ndarray:
        size = self.cfg.target_size
        if not rel_paths:
            return np.zeros((0, size[1], size[0], 3), dtype=np.float32)
        return np.stack([self(p) for p in rel_paths])
