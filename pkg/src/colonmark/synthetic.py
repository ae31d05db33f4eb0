"""Procedural stand-in for annotated colonoscopy frames.

Each class gets a shape motif drawn over a smooth pinkish texture:

* AO: dark ellipse with a bright concentric rim
* ICV_CEC: bright curved ridge crossing a dark pocket
* REC_RF: high-contrast straight tube entering from an image border
* OTHER: texture only

Global brightness varies per frame, some frames get a black border, and a
configurable fraction of frames get a second annotation that disagrees
with the first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .dataset import LABELS, NUM_CLASSES, FrameRecord, Label, Manifest, Split, save_manifest
from .imaging import write_image

_SPLIT_INDEX = {s: i for i, s in enumerate(Split)}


@dataclass(frozen=True)
class SynthConfig:
    # split name -> per-class frame counts in LABELS order
    counts: dict = field(default_factory=lambda: {"TRAIN": [100, 50, 50, 800], "TEST": [50, 25, 25, 100]})
    image_size: int = 64
    frames_per_video: int = 20
    disagreement_rate: float = 0.05
    border_fraction: float = 0.3
    noise_std: float = 0.03
    brightness: tuple[float, float] = (0.55, 1.1)

    def __post_init__(self):
        counts = {}
        for split, cs in dict(self.counts).items():
            cs = [int(c) for c in cs]
            if len(cs) != NUM_CLASSES or any(c < 0 for c in cs):
                raise ValueError(f"counts for {split} must be {NUM_CLASSES} non-negative integers")
            counts[Split(split).value] = cs
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "brightness", tuple(self.brightness))
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16")
        if self.frames_per_video < 1:
            raise ValueError("frames_per_video must be positive")
        for name in ("disagreement_rate", "border_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"counts": self.counts, "image_size": self.image_size,
                "frames_per_video": self.frames_per_video,
                "disagreement_rate": self.disagreement_rate,
                "border_fraction": self.border_fraction, "noise_std": self.noise_std,
                "brightness": list(self.brightness)}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthetic-data keys: {sorted(unknown)}")
        return cls(**d)


def _texture(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    t = np.zeros_like(xx)
    for _ in range(4):
        fx, fy = rng.uniform(0.5, 3.0, size=2) * rng.choice([-1, 1], size=2)
        t += rng.uniform(0.02, 0.06) * np.sin(2 * np.pi * (fx * xx + fy * yy) + rng.uniform(0, 2 * np.pi))
    return 1.0 + t


def _rotate(xx, yy, cx, cy, angle):
    c, s = np.cos(angle), np.sin(angle)
    dx, dy = xx - cx, yy - cy
    return c * dx + s * dy, -s * dx + c * dy


def _smoothstep(edge0, edge1, x):
    t = np.clip((x - edge0) / (edge1 - edge0), 0.0, 1.0)
    return t * t * (3 - 2 * t)


def _draw_ao(img, rng, yy, xx):
    cx, cy = rng.uniform(0.3, 0.7, size=2)
    a, b = rng.uniform(0.12, 0.2), rng.uniform(0.07, 0.12)
    u, v = _rotate(xx, yy, cx, cy, rng.uniform(0, np.pi))
    r = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    rim = np.exp(-((r - 1.35) / 0.2) ** 2)
    hole = 1.0 - _smoothstep(0.85, 1.0, r)
    img *= (1.0 - 0.65 * hole)[..., None]
    img += (0.45 * rim)[..., None] * np.array([1.0, 0.85, 0.8])


def _draw_icv(img, rng, yy, xx):
    cx, cy = rng.uniform(0.35, 0.65, size=2)
    rad = rng.uniform(0.12, 0.18)
    d = np.hypot(xx - cx, yy - cy)
    pocket = 1.0 - _smoothstep(rad * 0.7, rad, d)
    img *= (1.0 - 0.2 * pocket)[..., None]
    # ridge: arc of a large circle passing through the pocket center
    big = rng.uniform(0.35, 0.55)
    ang = rng.uniform(0, 2 * np.pi)
    ox, oy = cx + big * np.cos(ang), cy + big * np.sin(ang)
    ridge = np.exp(-((np.hypot(xx - ox, yy - oy) - big) / 0.05) ** 2)
    img += (0.7 * ridge)[..., None] * np.array([0.95, 0.9, 0.35])


def _draw_recrf(img, rng, yy, xx):
    side = rng.integers(4)
    t = rng.uniform(0.25, 0.75)
    start = [(t, 0.0), (1.0, t), (t, 1.0), (0.0, t)][side]
    inward = [np.pi / 2, np.pi, -np.pi / 2, 0.0][side] + rng.uniform(-0.5, 0.5)
    length = rng.uniform(0.4, 0.6)
    width = rng.uniform(0.07, 0.11)
    dx, dy = np.cos(inward), np.sin(inward)
    px, py = xx - start[0], yy - start[1]
    along = np.clip(px * dx + py * dy, 0.0, length)
    dist = np.hypot(px - along * dx, py - along * dy)
    body = 1.0 - _smoothstep(width * 0.8, width, dist)
    outline = np.exp(-((dist - width - 0.02) / 0.015) ** 2)
    img *= (1.0 - 0.7 * outline)[..., None]
    img[:] = img * (1 - body[..., None]) + body[..., None] * np.array([0.92, 0.93, 0.95])


_MOTIFS = {Label.AO: _draw_ao, Label.ICV_CEC: _draw_icv, Label.REC_RF: _draw_recrf}


def render_frame(label: Label, rng: np.random.Generator, size: int, noise_std: float = 0.03,
                 brightness=(0.55, 1.1), border: bool = False) -> np.ndarray:
    coords = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    base = np.array([0.78, 0.48, 0.42]) * rng.uniform(0.9, 1.1, size=3)
    img = _texture(rng, yy, xx)[..., None] * base
    draw = _MOTIFS.get(label)
    if draw is not None:
        draw(img, rng, yy, xx)
    img *= rng.uniform(*brightness)
    img += rng.normal(0.0, noise_std, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    if border:
        top, bottom, left, right = rng.integers(2, max(3, size // 8), size=4)
        img[:top] = 0.0
        img[size - bottom:] = 0.0
        img[:, :left] = 0.0
        img[:, size - right:] = 0.0
    return img


def _plan_split(counts, rng: np.random.Generator) -> list[Label]:
    labels = [lab for lab, c in zip(LABELS, counts) for _ in range(c)]
    order = rng.permutation(len(labels))
    return [labels[i] for i in order]


def generate_synthetic_dataset(cfg: SynthConfig, seed: int, out_dir: Union[str, Path]) -> Manifest:
    """Render frames as PPM files under ``out_dir/images`` and write ``out_dir/manifest.jsonl``.

    Every random choice for a frame comes from a generator keyed by
    ``(seed, split, frame number)``, so output is reproducible.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for split_name, counts in cfg.counts.items():
        split = Split(split_name)
        s_idx = _SPLIT_INDEX[split]
        labels = _plan_split(counts, np.random.default_rng([seed, s_idx]))
        for n, label in enumerate(labels):
            video = f"{split.value.lower()}-{n // cfg.frames_per_video:04d}"
            frame_idx = n % cfg.frames_per_video
            rng = np.random.default_rng([seed, s_idx, n])
            ann = np.random.default_rng([seed, s_idx, n, 1])
            border = ann.random() < cfg.border_fraction
            label_b = label
            if ann.random() < cfg.disagreement_rate:
                others = [lab for lab in LABELS if lab != label]
                label_b = others[ann.integers(len(others))]
            img = render_frame(label, rng, cfg.image_size, cfg.noise_std, cfg.brightness, border)
            rel = f"images/{video}/{frame_idx:05d}.ppm"
            (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
            write_image(out_dir / rel, img)
            records.append(FrameRecord(video, frame_idx, rel, label, label_b, split))
    manifest = Manifest(tuple(records))
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
