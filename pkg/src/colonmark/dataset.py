"""Frame manifests, annotation consensus, video-level splits and label distributions."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence, Union

from .autodiff.random import fold, make_key, string_word
from .errors import (DuplicateFrame, EmptySplit, InsufficientVideos, NoConsensus, ParseError,
                     VideoLeak)


class Label(str, enum.Enum):
    AO = "AO"
    ICV_CEC = "ICV_CEC"
    REC_RF = "REC_RF"
    OTHER = "OTHER"

    @property
    def index(self) -> int:
        return LABELS.index(self)


LABELS: tuple[Label, ...] = tuple(Label)
NUM_CLASSES = len(LABELS)


class Split(str, enum.Enum):
    TRAIN = "TRAIN"
    VAL = "VAL"
    TEST = "TEST"
    SNAPSHOT = "SNAPSHOT"


POOL_SPLITS = (Split.TRAIN, Split.VAL, Split.TEST)
FIELDS = ("video_id", "frame_idx", "image_path", "label_a", "label_b", "split")


@dataclass(frozen=True)
class FrameRecord:
    video_id: str
    frame_idx: int
    image_path: str
    label_a: Label
    label_b: Label
    split: Split

    @property
    def agreed(self) -> bool:
        return self.label_a == self.label_b

    @property
    def label(self) -> Label:
        """Effective label: the one both annotators agreed on."""
        if self.label_a != self.label_b:
            raise NoConsensus(f"{self.video_id}/{self.frame_idx}: {self.label_a.value} vs {self.label_b.value}")
        return self.label_a

    @property
    def key(self) -> tuple[str, int]:
        return self.video_id, self.frame_idx

    def to_json(self) -> str:
        return json.dumps({"video_id": self.video_id, "frame_idx": self.frame_idx,
                           "image_path": self.image_path, "label_a": self.label_a.value,
                           "label_b": self.label_b.value, "split": self.split.value},
                          ensure_ascii=False)


@dataclass(frozen=True)
class Manifest:
    records: tuple[FrameRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for r in self.records:
            if r.key in seen:
                raise DuplicateFrame(f"duplicate frame {r.video_id}/{r.frame_idx}")
            seen.add(r.key)
        snap = {r.video_id for r in self.records if r.split == Split.SNAPSHOT}
        pool = {r.video_id for r in self.records if r.split != Split.SNAPSHOT}
        leaked = snap & pool
        if leaked:
            raise VideoLeak(f"snapshot videos also in the training pool: {sorted(leaked)[:5]}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[FrameRecord]:
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def select(self, split: Union[Split, str]) -> "Manifest":
        split = Split(split)
        return Manifest(tuple(r for r in self.records if r.split == split))

    def video_ids(self) -> list[str]:
        return list(dict.fromkeys(r.video_id for r in self.records))


@dataclass(frozen=True)
class ClassDistribution:
    """Label proportions in ``LABELS`` order."""

    proportions: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(v) for v in self.proportions)
        if len(p) != NUM_CLASSES or any(v < 0 or v > 1 for v in p) or abs(math.fsum(p) - 1) > 1e-9:
            raise ValueError(f"not a distribution over {NUM_CLASSES} labels: {p}")
        object.__setattr__(self, "proportions", p)

    def __getitem__(self, label: Union[Label, str]) -> float:
        return self.proportions[Label(label).index]

    @classmethod
    def from_counts(cls, counts: Sequence[int]) -> "ClassDistribution":
        total = sum(counts)
        if total <= 0:
            raise EmptySplit("no frames to count")
        return cls(tuple(c / total for c in counts))

    def as_dict(self) -> dict[str, float]:
        return {lab.value: v for lab, v in zip(LABELS, self.proportions)}


# ---- JSON Lines I/O ----

def _parse_record(line: str, lineno: int) -> FrameRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(lineno, f"invalid JSON ({e.msg})") from None
    if not isinstance(obj, dict):
        raise ParseError(lineno, "expected a JSON object")
    missing = [f for f in FIELDS if f not in obj]
    unknown = sorted(set(obj) - set(FIELDS))
    if missing:
        raise ParseError(lineno, f"missing fields {missing}")
    if unknown:
        raise ParseError(lineno, f"unknown fields {unknown}")
    for f in ("video_id", "image_path"):
        if not isinstance(obj[f], str):
            raise ParseError(lineno, f"{f} must be a string")
    idx = obj["frame_idx"]
    if not isinstance(idx, int) or isinstance(idx, bool) or idx < 0:
        raise ParseError(lineno, "frame_idx must be a non-negative integer")
    try:
        la, lb = Label(obj["label_a"]), Label(obj["label_b"])
    except ValueError as e:
        raise ParseError(lineno, str(e)) from None
    try:
        split = Split(obj["split"])
    except ValueError as e:
        raise ParseError(lineno, str(e)) from None
    return FrameRecord(obj["video_id"], idx, obj["image_path"], la, lb, split)


def parse_manifest(text: str) -> Manifest:
    records = []
    seen = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        rec = _parse_record(line, lineno)
        if rec.key in seen:
            raise DuplicateFrame(f"line {lineno}: frame {rec.video_id}/{rec.frame_idx} "
                                 f"already defined on line {seen[rec.key]}")
        seen[rec.key] = lineno
        records.append(rec)
    return Manifest(tuple(records))


def load_manifest(path: Union[str, Path]) -> Manifest:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def dump_manifest(manifest: Manifest) -> str:
    return "".join(r.to_json() + "\n" for r in manifest)


def save_manifest(manifest: Manifest, path: Union[str, Path]) -> None:
    Path(path).write_text(dump_manifest(manifest), encoding="utf-8")


# ---- operations ----

def consensus_filter(manifest: Manifest) -> Manifest:
    """Keep only frames both annotators labelled identically."""
    return Manifest(tuple(r for r in manifest if r.agreed))


def _largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    quotas = [r * n for r in ratios]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    # a split with a nonzero ratio never ends up empty
    for i, r in enumerate(ratios):
        if r > 0 and counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_by_video(manifest: Manifest, ratios: Sequence[float] = (0.8, 0.1, 0.1),
                   seed: int = 0) -> Manifest:
    """Assign whole videos to TRAIN/VAL/TEST.

    Videos are ordered by a seeded hash of their id, so adding a video
    leaves the relative order of the others untouched. Counts per split
    follow ``ratios`` by largest-remainder rounding. SNAPSHOT frames keep
    their split.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise ValueError(f"ratios must be three non-negative values summing to 1, got {ratios}")
    videos = list(dict.fromkeys(r.video_id for r in manifest if r.split != Split.SNAPSHOT))
    needed = sum(r > 0 for r in ratios)
    if len(videos) < needed:
        raise InsufficientVideos(f"{len(videos)} videos for {needed} non-empty splits")
    key = make_key(seed)
    videos.sort(key=lambda v: (fold(key, string_word(v)), v))
    counts = _largest_remainder(len(videos), ratios)
    assignment = {}
    start = 0
    for split, c in zip(POOL_SPLITS, counts):
        for v in videos[start:start + c]:
            assignment[v] = split
        start += c
    return Manifest(tuple(r if r.split == Split.SNAPSHOT else replace(r, split=assignment[r.video_id])
                          for r in manifest))


def label_counts(records: Iterable[FrameRecord]) -> list[int]:
    counts = [0] * NUM_CLASSES
    for r in records:
        counts[r.label.index] += 1
    return counts


def class_distribution(manifest: Manifest, split: Union[Split, str]) -> ClassDistribution:
    split = Split(split)
    counts = label_counts(r for r in manifest if r.split == split)
    if sum(counts) == 0:
        raise EmptySplit(f"split {split.value} has no frames")
    return ClassDistribution.from_counts(counts)
